//! File formats. CSV headers are part of the contract: exact names, UTF-8,
//! LF line endings. Floating-point values use shortest round-trip decimals
//! so reruns can be compared byte for byte.

use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use twobeam_core::harness::{MeasurementRecord, NonlinearityPoint, Phase};
use twobeam_core::stats::AllanSeries;
use twobeam_core::FitResult;

use crate::config::RunConfig;
use crate::CliError;

pub const RECORDS_HEADER: &str = "cycle_index,phase,integration_time_s,counts";
pub const POINTS_HEADER: &str = "rate_ab_hz,delta_mean,delta_sem,n";
pub const COUNTS_HEADER: &str = "counts";
pub const ALLAN_HEADER: &str = "integration_time_s,relative_allan_deviation";
pub const BOUNDS_HEADER: &str = "rate_ab_hz,sigma_delta,sigma_delta_mean,sub_poisson_sigma_rate_hz";
pub const CURVES_HEADER: &str = "model,rate_ab_hz,delta";

/// Writes through a temporary file in the destination directory, so a
/// half-written file never lands under the final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

/// Splits CSV text into its header and data lines, insisting on the exact
/// expected header.
fn csv_lines<'a>(text: &'a str, header: &str, path: &Path) -> Result<Vec<&'a str>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim_end() == header => {}
        Some(first) => {
            return Err(CliError::validation(format!(
                "{}: expected header `{header}`, found `{first}`",
                path.display()
            )))
        }
        None => {
            return Err(CliError::validation(format!(
                "{}: empty file, expected header `{header}`",
                path.display()
            )))
        }
    }
    Ok(lines.filter(|l| !l.trim().is_empty()).collect())
}

fn field_count<'a>(
    line: &'a str,
    n: usize,
    row: usize,
    path: &Path,
) -> Result<Vec<&'a str>, CliError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != n {
        return Err(CliError::validation(format!(
            "{} row {row}: expected {n} fields, found {}",
            path.display(),
            fields.len()
        )));
    }
    Ok(fields)
}

fn parse<T: FromStr>(field: &str, what: &str, row: usize, path: &Path) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    field.trim().parse().map_err(|e| {
        CliError::validation(format!("{} row {row}: bad {what} `{field}`: {e}", path.display()))
    })
}

pub fn records_to_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from(RECORDS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.cycle_index, r.phase, r.integration_time, r.counts
        ));
    }
    out
}

pub fn records_from_csv_file(path: &Path) -> Result<Vec<MeasurementRecord>, CliError> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (i, line) in csv_lines(&text, RECORDS_HEADER, path)?.into_iter().enumerate() {
        let row = i + 2;
        let f = field_count(line, 4, row, path)?;
        records.push(MeasurementRecord {
            cycle_index: parse(f[0], "cycle_index", row, path)?,
            phase: Phase::from_str(f[1].trim())
                .map_err(|e| CliError::validation(format!("{} row {row}: {e}", path.display())))?,
            integration_time: parse(f[2], "integration_time_s", row, path)?,
            counts: parse(f[3], "counts", row, path)?,
        });
    }
    Ok(records)
}

pub fn points_to_csv(points: &[NonlinearityPoint]) -> String {
    let mut out = String::from(POINTS_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.detected_rate_ab, p.delta_mean, p.delta_sem, p.repetitions
        ));
    }
    out
}

pub fn points_from_csv_file(path: &Path) -> Result<Vec<NonlinearityPoint>, CliError> {
    let text = read_text(path)?;
    let mut points = Vec::new();
    for (i, line) in csv_lines(&text, POINTS_HEADER, path)?.into_iter().enumerate() {
        let row = i + 2;
        let f = field_count(line, 4, row, path)?;
        points.push(NonlinearityPoint {
            detected_rate_ab: parse(f[0], "rate_ab_hz", row, path)?,
            delta_mean: parse(f[1], "delta_mean", row, path)?,
            delta_sem: parse(f[2], "delta_sem", row, path)?,
            repetitions: parse(f[3], "n", row, path)?,
        });
    }
    Ok(points)
}

pub fn counts_from_csv_file(path: &Path) -> Result<Vec<u64>, CliError> {
    let text = read_text(path)?;
    let mut counts = Vec::new();
    for (i, line) in csv_lines(&text, COUNTS_HEADER, path)?.into_iter().enumerate() {
        counts.push(parse(line, "counts", i + 2, path)?);
    }
    Ok(counts)
}

pub fn allan_to_csv(series: &AllanSeries) -> String {
    let mut out = String::from(ALLAN_HEADER);
    out.push('\n');
    for (t, s) in series.integration_times.iter().zip(&series.relative_deviation) {
        out.push_str(&format!("{t},{s}\n"));
    }
    out
}

/// One row of the shot-noise bound table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundRow {
    pub rate_ab_hz: f64,
    pub sigma_delta: f64,
    pub sigma_delta_mean: f64,
    pub sub_poisson_sigma_rate_hz: f64,
}

pub fn bounds_to_csv(rows: &[BoundRow]) -> String {
    let mut out = String::from(BOUNDS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.rate_ab_hz, r.sigma_delta, r.sigma_delta_mean, r.sub_poisson_sigma_rate_hz
        ));
    }
    out
}

/// Model-curve sample for plot overlays.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSample {
    pub model: &'static str,
    pub rate_ab_hz: f64,
    pub delta: f64,
}

pub fn curves_to_csv(samples: &[CurveSample]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{},{},{}\n", s.model, s.rate_ab_hz, s.delta));
    }
    out
}

/// Per-model fit outcome; a failed model keeps its error message instead of
/// aborting the whole command.
#[derive(Debug, Serialize)]
pub struct FitOutcome {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PlanOutput {
    pub total_time_s: f64,
    pub delta_guess: f64,
    pub t_a_s: f64,
    pub t_b_s: f64,
    pub t_ab_s: f64,
    pub fraction_a: f64,
    pub fraction_b: f64,
    pub fraction_ab: f64,
}

/// Deterministic run bookkeeping. Wall-clock time goes to stderr only, so
/// output files from identical runs stay byte-identical.
#[derive(Debug, Default, Serialize)]
pub struct Timing {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_integration_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registered_counts: Option<u64>,
}

#[derive(Debug, Default, Serialize)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curves_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allan_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<NonlinearityPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fits: Option<Vec<FitOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allan: Option<AllanSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<BoundRow>>,
}

/// The single JSON artifact every command writes: enough to rerun the
/// command (config echo plus effective seed) and the outputs themselves.
#[derive(Debug, Serialize)]
pub struct ResultDocument {
    pub tool_version: &'static str,
    pub schema_version: u32,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub outputs: Outputs,
    pub timing: Timing,
}

impl ResultDocument {
    pub fn new(command: &'static str) -> Self {
        ResultDocument {
            tool_version: env!("CARGO_PKG_VERSION"),
            schema_version: crate::config::SCHEMA_VERSION,
            command,
            seed: None,
            config: None,
            outputs: Outputs::default(),
            timing: Timing::default(),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        text.push('\n');
        Ok(text)
    }
}
