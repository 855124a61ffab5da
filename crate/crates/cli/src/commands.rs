//! Implementations behind the subcommands. Each returns the result document
//! after writing its data files; `main` writes the document itself.

use std::path::Path;

use twobeam_core::harness::{estimate_point, sweep_records, MeasurementRecord, NonlinearityPoint};
use twobeam_core::models::{ModelKind, ResponseModel};
use twobeam_core::stats::{
    relative_allan_deviation, sigma_delta, sigma_delta_mean, sub_poissonian_sigma_rate,
};
use twobeam_core::{fit_delta, FitError};

use crate::config::{parse_models, require, RunConfig};
use crate::io::{
    allan_to_csv, atomic_write, bounds_to_csv, counts_from_csv_file, curves_to_csv, points_to_csv,
    records_from_csv_file, records_to_csv, BoundRow, CurveSample, FitOutcome, PlanOutput,
    ResultDocument,
};
use crate::CliError;

fn tally(doc: &mut ResultDocument, records: &[MeasurementRecord]) {
    doc.timing.total_integration_time_s =
        Some(records.iter().map(|r| r.integration_time).sum());
    doc.timing.cycles = Some((records.len() / 3) as u64);
    doc.timing.registered_counts = Some(records.iter().map(|r| r.counts).sum());
}

/// Groups records into complete cycles (sorted by cycle index), then reduces
/// consecutive runs of `group` cycles to one point each. `None` pools
/// everything into a single point.
fn reduce(
    records: &[MeasurementRecord],
    group: Option<usize>,
) -> Result<Vec<NonlinearityPoint>, CliError> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| r.cycle_index);
    let mut cycles: Vec<&[MeasurementRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].cycle_index != sorted[start].cycle_index {
            cycles.push(&sorted[start..i]);
            start = i;
        }
    }
    let group = match group {
        Some(0) => return Err(CliError::validation("repetitions must be positive")),
        Some(g) => g,
        None => cycles.len().max(1),
    };
    cycles
        .chunks(group)
        .map(|chunk| {
            let flat: Vec<MeasurementRecord> =
                chunk.iter().flat_map(|c| c.iter().copied()).collect();
            estimate_point(&flat).map_err(CliError::from)
        })
        .collect()
}

pub fn simulate(
    cfg: &RunConfig,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<ResultDocument, CliError> {
    let detector = require(&cfg.detector, "detector")?;
    let section = require(&cfg.simulate, "simulate")?;
    let seed = seed_override.unwrap_or(cfg.seed);
    let base = detector.sim_config(seed)?;
    let plan = section.plan()?;

    let records = sweep_records(&plan, section.split, &base)?;
    let points = reduce(&records, Some(plan.repetitions))?;

    let records_path = out.join("records.csv");
    let points_path = out.join("points.csv");
    atomic_write(&records_path, records_to_csv(&records).as_bytes())?;
    atomic_write(&points_path, points_to_csv(&points).as_bytes())?;

    let mut doc = ResultDocument::new("simulate");
    let mut echo = cfg.clone();
    echo.seed = seed;
    doc.seed = Some(seed);
    doc.config = Some(echo);
    doc.outputs.records_file = Some("records.csv".into());
    doc.outputs.points_file = Some("points.csv".into());
    tally(&mut doc, &records);
    doc.outputs.points = Some(points);
    Ok(doc)
}

pub fn analyze(
    cfg: Option<&RunConfig>,
    input: &Path,
    out: &Path,
) -> Result<ResultDocument, CliError> {
    let records = records_from_csv_file(input)?;
    let group = cfg
        .and_then(|c| c.analyze.as_ref())
        .and_then(|section| section.repetitions);
    let points = reduce(&records, group)?;

    let points_path = out.join("points.csv");
    atomic_write(&points_path, points_to_csv(&points).as_bytes())?;

    let mut doc = ResultDocument::new("analyze");
    doc.config = cfg.cloned();
    doc.outputs.points_file = Some("points.csv".into());
    tally(&mut doc, &records);
    doc.outputs.points = Some(points);
    Ok(doc)
}

pub fn fit(
    cfg: Option<&RunConfig>,
    input: &Path,
    models_flag: Option<&str>,
    out: &Path,
) -> Result<ResultDocument, CliError> {
    let points = points_from_input(input)?;
    let section = cfg.and_then(|c| c.fit.as_ref());
    let kinds: Vec<ModelKind> = match (models_flag, section.and_then(|s| s.models.as_ref())) {
        (Some(list), _) => parse_models(list)?,
        (None, Some(list)) => parse_models(&list.join(","))?,
        (None, None) => ModelKind::FITTABLE.to_vec(),
    };
    let curve_samples = section.map_or(200, |s| s.curve_samples);

    let mut outcomes = Vec::new();
    for kind in kinds {
        let outcome = match fit_delta(&points, kind, None) {
            Ok(result) => FitOutcome {
                model: kind.to_string(),
                fit: Some(result),
                error: None,
            },
            // A stalled fit still carries its best parameters; keep them
            // next to the error instead of discarding the work.
            Err(FitError::DidNotConverge { iterations, best }) => FitOutcome {
                model: kind.to_string(),
                fit: Some(*best),
                error: Some(format!("did not converge within {iterations} iterations")),
            },
            Err(err) => FitOutcome {
                model: kind.to_string(),
                fit: None,
                error: Some(err.to_string()),
            },
        };
        outcomes.push(outcome);
    }
    if outcomes.iter().all(|o| o.fit.is_none()) {
        let reasons: Vec<String> = outcomes
            .iter()
            .map(|o| format!("{}: {}", o.model, o.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(CliError::runtime(format!(
            "no model could be fitted: {}",
            reasons.join("; ")
        )));
    }

    let samples = curve_overlay(&points, &outcomes, curve_samples);
    let mut doc = ResultDocument::new("fit");
    doc.config = cfg.cloned();
    if !samples.is_empty() {
        let curves_path = out.join("curves.csv");
        atomic_write(&curves_path, curves_to_csv(&samples).as_bytes())?;
        doc.outputs.curves_file = Some("curves.csv".into());
    }
    doc.outputs.fits = Some(outcomes);
    Ok(doc)
}

fn points_from_input(input: &Path) -> Result<Vec<NonlinearityPoint>, CliError> {
    let points = crate::io::points_from_csv_file(input)?;
    if points.is_empty() {
        return Err(CliError::validation(format!(
            "{}: no data rows",
            input.display()
        )));
    }
    Ok(points)
}

/// Samples each successful fit's expected-nonlinearity curve over the data's
/// rate span for plotting; rates outside a model's domain are skipped.
fn curve_overlay(
    points: &[NonlinearityPoint],
    outcomes: &[FitOutcome],
    samples_per_model: usize,
) -> Vec<CurveSample> {
    let lo = points.iter().map(|p| p.detected_rate_ab).fold(f64::INFINITY, f64::min) * 0.8;
    let hi = points.iter().map(|p| p.detected_rate_ab).fold(0.0, f64::max) * 1.25;
    if !(lo > 0.0 && hi > lo) || samples_per_model < 2 {
        return Vec::new();
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut samples = Vec::new();
    for outcome in outcomes {
        let Some(fit) = &outcome.fit else { continue };
        let Ok(model) = ResponseModel::new(fit.model_kind, fit.detector_params()) else {
            continue;
        };
        for i in 0..samples_per_model {
            let rate = (a + (b - a) * i as f64 / (samples_per_model - 1) as f64).exp();
            if let Ok(delta) = model.delta_curve(rate) {
                samples.push(CurveSample {
                    model: fit.model_kind.as_str(),
                    rate_ab_hz: rate,
                    delta,
                });
            }
        }
    }
    samples
}

pub fn allan(cfg: &RunConfig, input: &Path, out: &Path) -> Result<ResultDocument, CliError> {
    let section = require(&cfg.allan, "allan")?;
    let counts = counts_from_csv_file(input)?;
    if counts.len() < 2 {
        return Err(CliError::validation(format!(
            "{}: need at least 2 bins, found {}",
            input.display(),
            counts.len()
        )));
    }
    let cap = section.max_factor.unwrap_or(usize::MAX).min(counts.len() / 2);
    let mut factors = Vec::new();
    let mut factor = 1usize;
    while factor <= cap {
        factors.push(factor);
        factor *= 2;
    }
    let series = relative_allan_deviation(&counts, section.bin_duration_s, &factors)?;

    let allan_path = out.join("allan.csv");
    atomic_write(&allan_path, allan_to_csv(&series).as_bytes())?;

    let mut doc = ResultDocument::new("allan");
    doc.config = Some(cfg.clone());
    doc.outputs.allan_file = Some("allan.csv".into());
    doc.timing.total_integration_time_s = Some(section.bin_duration_s * counts.len() as f64);
    doc.outputs.allan = Some(series);
    Ok(doc)
}

pub fn plan(cfg: &RunConfig) -> Result<ResultDocument, CliError> {
    let section = require(&cfg.plan, "plan")?;
    let (t_a, t_b, t_ab) =
        twobeam_core::harness::optimal_allocation(section.delta_guess, section.total_time_s)?;
    let mut doc = ResultDocument::new("plan");
    doc.config = Some(cfg.clone());
    doc.outputs.plan = Some(PlanOutput {
        total_time_s: section.total_time_s,
        delta_guess: section.delta_guess,
        t_a_s: t_a,
        t_b_s: t_b,
        t_ab_s: t_ab,
        fraction_a: t_a / section.total_time_s,
        fraction_b: t_b / section.total_time_s,
        fraction_ab: t_ab / section.total_time_s,
    });
    Ok(doc)
}

pub fn bounds(cfg: &RunConfig, out: &Path) -> Result<ResultDocument, CliError> {
    let section = require(&cfg.bounds, "bounds")?;
    if section.rate_grid_hz.is_empty() {
        return Err(CliError::validation("bounds rate_grid_hz is empty"));
    }
    let rows: Result<Vec<BoundRow>, CliError> = section
        .rate_grid_hz
        .iter()
        .map(|&rate| {
            let single = sigma_delta(0.0, rate, section.integration_time_s)?;
            let mean = sigma_delta_mean(0.0, rate, section.integration_time_s, section.repetitions)?;
            let sub = sub_poissonian_sigma_rate(
                rate,
                section.dead_time(),
                section.integration_time_s,
            )?;
            Ok(BoundRow {
                rate_ab_hz: rate,
                sigma_delta: single,
                sigma_delta_mean: mean,
                sub_poisson_sigma_rate_hz: sub,
            })
        })
        .collect();
    let rows = rows?;

    let bounds_path = out.join("bounds.csv");
    atomic_write(&bounds_path, bounds_to_csv(&rows).as_bytes())?;

    let mut doc = ResultDocument::new("bounds");
    doc.config = Some(cfg.clone());
    doc.outputs.bounds_file = Some("bounds.csv".into());
    doc.outputs.bounds = Some(rows);
    Ok(doc)
}
