//! TOML run configuration: one document, one section per subcommand, plus a
//! shared detector description. Unknown keys are rejected so a typo fails
//! loudly instead of silently falling back to a default.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twobeam_core::harness::MeasurementPlan;
use twobeam_core::models::{DetectorParams, ModelKind};
use twobeam_core::sim::SimConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

const NS: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed for stochastic commands; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allan: Option<AllanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(CliError::validation)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::validation(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

}

/// Pulls a subcommand's section out of the document or names what is missing.
pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("config is missing the [{name}] section")))
}

/// Detector description shared by the stochastic commands. Rates in Hz,
/// time-like parameters in nanoseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// `NP`, `P`, `NP-P`, `P-NP` or `AP`.
    pub kind: String,
    #[serde(default)]
    pub dark_rate_hz: f64,
    #[serde(default)]
    pub dead_time_np_ns: f64,
    #[serde(default)]
    pub dead_time_p_ns: f64,
    #[serde(default)]
    pub mean_afterpulses: f64,
    #[serde(default)]
    pub twilight_alpha_ns: f64,
    /// Mean exponential afterpulse delay; required when afterpulsing is on.
    #[serde(default)]
    pub afterpulse_delay_ns: f64,
    #[serde(default)]
    pub afterpulse_cascades: bool,
}

impl DetectorSection {
    pub fn kind(&self) -> Result<ModelKind, CliError> {
        ModelKind::from_str(&self.kind).map_err(CliError::validation)
    }

    pub fn params(&self) -> Result<DetectorParams, CliError> {
        let params = DetectorParams {
            dark_rate: self.dark_rate_hz,
            dead_time_np: self.dead_time_np_ns * NS,
            dead_time_p: self.dead_time_p_ns * NS,
            mean_afterpulses: self.mean_afterpulses,
            twilight_alpha: self.twilight_alpha_ns * NS,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let cfg = SimConfig {
            incident_rate: 0.0,
            duration: 1.0,
            kind: self.kind()?,
            params: self.params()?,
            afterpulse_delay_tau: self.afterpulse_delay_ns * NS,
            afterpulse_cascades: self.afterpulse_cascades,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sweep description. The grid is either listed explicitly or generated
/// log-spaced; the time budget is either per phase (balanced) or per cycle
/// (split optimally for `delta_guess`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_grid_hz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_start_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_stop_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_per_phase_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_per_cycle_s: Option<f64>,
    #[serde(default)]
    pub delta_guess: f64,
    #[serde(default = "default_split")]
    pub split: f64,
}

fn default_split() -> f64 {
    0.5
}

impl SimulateSection {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        match (&self.rate_grid_hz, self.grid_start_hz, self.grid_stop_hz, self.grid_points) {
            (Some(grid), None, None, None) => Ok(grid.clone()),
            (None, Some(start), Some(stop), Some(points)) => {
                if !(start > 0.0 && stop > start) || points < 2 {
                    return Err(CliError::validation(
                        "log grid needs 0 < grid_start_hz < grid_stop_hz and grid_points >= 2",
                    ));
                }
                let (a, b) = (start.ln(), stop.ln());
                Ok((0..points)
                    .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                    .collect())
            }
            _ => Err(CliError::validation(
                "give either rate_grid_hz or all of grid_start_hz, grid_stop_hz, grid_points",
            )),
        }
    }

    pub fn plan(&self) -> Result<MeasurementPlan, CliError> {
        let grid = self.grid()?;
        let plan = match (self.time_per_phase_s, self.time_per_cycle_s) {
            (Some(per_phase), None) => {
                MeasurementPlan::balanced(per_phase, self.repetitions, grid)?
            }
            (None, Some(per_cycle)) => {
                MeasurementPlan::optimized(self.delta_guess, per_cycle, self.repetitions, grid)?
            }
            _ => {
                return Err(CliError::validation(
                    "give exactly one of time_per_phase_s or time_per_cycle_s",
                ))
            }
        };
        Ok(plan)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Cycles per reported point; all cycles form one point when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Model kinds to fit; the `--models` flag takes precedence. All
    /// fittable kinds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,
    #[serde(default = "default_curve_samples")]
    pub curve_samples: usize,
}

fn default_curve_samples() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllanSection {
    pub bin_duration_s: f64,
    /// Largest power-of-two averaging factor; the series length caps it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_factor: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub total_time_s: f64,
    #[serde(default)]
    pub delta_guess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub rate_grid_hz: Vec<f64>,
    pub integration_time_s: f64,
    pub repetitions: usize,
    /// Dead time for the sub-Poissonian rate spread column; zero gives the
    /// plain Poisson spread.
    #[serde(default)]
    pub dead_time_ns: f64,
}

impl BoundsSection {
    pub fn dead_time(&self) -> f64 {
        self.dead_time_ns * NS
    }
}

pub fn parse_models(list: &str) -> Result<Vec<ModelKind>, CliError> {
    let kinds: Result<Vec<ModelKind>, _> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(ModelKind::from_str)
        .collect();
    let kinds = kinds.map_err(CliError::validation)?;
    if kinds.is_empty() {
        return Err(CliError::validation("empty model list"));
    }
    Ok(kinds)
}
