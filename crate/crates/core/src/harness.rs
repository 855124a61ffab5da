//! Orchestration of the two-beam measurement: cycles of three shutter
//! phases (beam A, beam B, both), nonlinearity estimates with their
//! scatter, time budgeting across phases, and drifting-source stability
//! series for Allan analysis.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::models::{delta_from_rates, ModelError};
use crate::seeds;
use crate::sim::{simulate_counts, SimConfig, SimError};

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    InvalidSplit(f64),
    #[error("incident rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("phase integration time must be finite and positive, got {0}")]
    InvalidTime(f64),
    #[error("nonlinearity guess must be finite and above -1, got {0}")]
    InvalidDeltaGuess(f64),
    #[error("plan needs at least one repetition")]
    NoRepetitions,
    #[error("plan needs a non-empty rate grid")]
    EmptyGrid,
    #[error("total_time_per_sample {declared} disagrees with (t_a + t_b + t_ab) * repetitions = {implied}")]
    InconsistentPlan { declared: f64, implied: f64 },
    #[error("unknown phase {0:?}; expected A, B or AB")]
    UnknownPhase(String),
    #[error("cycle {cycle_index} lacks phase {phase}")]
    IncompleteCycle { cycle_index: u64, phase: Phase },
    #[error("cycle {cycle_index} has phase {phase} more than once")]
    DuplicatePhase { cycle_index: u64, phase: Phase },
    #[error("no complete measurement cycles in the record set")]
    NoCycles,
    #[error("sinusoid drift needs amplitude in [0, 1] and a positive period")]
    InvalidSinusoid,
    #[error("random-walk drift needs a finite non-negative step sigma, got {0}")]
    InvalidWalkStep(f64),
}

/// Shutter configuration of one acquisition within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Beam A open.
    #[serde(rename = "A")]
    A,
    /// Beam B open.
    #[serde(rename = "B")]
    B,
    /// Both beams open.
    #[serde(rename = "AB")]
    Ab,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::Ab];

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::Ab => "AB",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(Phase::A),
            "B" => Ok(Phase::B),
            "AB" => Ok(Phase::Ab),
            other => Err(HarnessError::UnknownPhase(other.to_string())),
        }
    }
}

/// One acquisition: a phase of a cycle with its raw count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub cycle_index: u64,
    pub phase: Phase,
    /// Seconds the counter was gated on.
    pub integration_time: f64,
    pub counts: u64,
}

impl MeasurementRecord {
    pub fn detected_rate(&self) -> f64 {
        self.counts as f64 / self.integration_time
    }
}

/// Averaged nonlinearity at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityPoint {
    /// Mean combined-beam detected rate over the cycles, events/s.
    pub detected_rate_ab: f64,
    /// Mean of the per-cycle nonlinearity estimates.
    pub delta_mean: f64,
    /// Standard error of that mean; zero when only one cycle exists.
    pub delta_sem: f64,
    /// Number of complete cycles averaged.
    pub repetitions: usize,
}

impl NonlinearityPoint {
    /// Whether the point carries a usable scatter estimate.
    pub fn has_sem(&self) -> bool {
        self.delta_sem > 0.0 && self.delta_sem.is_finite()
    }
}

/// Time budget and operating grid for a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    /// Total acquisition time spent on one grid point, seconds:
    /// `(t_a + t_b + t_ab) * repetitions`.
    pub total_time_per_sample: f64,
    pub t_a: f64,
    pub t_b: f64,
    pub t_ab: f64,
    pub repetitions: usize,
    /// Incident combined-beam rates to visit, events/s.
    pub rate_grid: Vec<f64>,
}

impl MeasurementPlan {
    /// Equal time in every phase.
    pub fn balanced(
        time_per_phase: f64,
        repetitions: usize,
        rate_grid: Vec<f64>,
    ) -> Result<Self, HarnessError> {
        let plan = MeasurementPlan {
            total_time_per_sample: 3.0 * time_per_phase * repetitions as f64,
            t_a: time_per_phase,
            t_b: time_per_phase,
            t_ab: time_per_phase,
            repetitions,
            rate_grid,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Splits each cycle's time budget to minimize the predicted variance of
    /// the nonlinearity estimate at a guessed nonlinearity level.
    pub fn optimized(
        delta_guess: f64,
        time_per_cycle: f64,
        repetitions: usize,
        rate_grid: Vec<f64>,
    ) -> Result<Self, HarnessError> {
        let (t_a, t_b, t_ab) = optimal_allocation(delta_guess, time_per_cycle)?;
        let plan = MeasurementPlan {
            total_time_per_sample: time_per_cycle * repetitions as f64,
            t_a,
            t_b,
            t_ab,
            repetitions,
            rate_grid,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for t in [self.t_a, self.t_b, self.t_ab] {
            if !t.is_finite() || t <= 0.0 {
                return Err(HarnessError::InvalidTime(t));
            }
        }
        if self.repetitions == 0 {
            return Err(HarnessError::NoRepetitions);
        }
        if self.rate_grid.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        for &r in &self.rate_grid {
            if !r.is_finite() || r < 0.0 {
                return Err(HarnessError::InvalidRate(r));
            }
        }
        let implied = (self.t_a + self.t_b + self.t_ab) * self.repetitions as f64;
        if (self.total_time_per_sample - implied).abs() > 1e-9 * implied {
            return Err(HarnessError::InconsistentPlan {
                declared: self.total_time_per_sample,
                implied,
            });
        }
        Ok(())
    }

    pub fn cycle_time(&self) -> f64 {
        self.t_a + self.t_b + self.t_ab
    }
}

/// Phase times `(t_a, t_b, t_ab)` minimizing the predicted nonlinearity
/// variance under a fixed per-cycle budget. The combined phase gets
/// `sqrt(2 (1 + delta))` times the weight of each single-beam phase.
pub fn optimal_allocation(delta: f64, cycle_time: f64) -> Result<(f64, f64, f64), HarnessError> {
    if !delta.is_finite() || delta <= -1.0 {
        return Err(HarnessError::InvalidDeltaGuess(delta));
    }
    if !cycle_time.is_finite() || cycle_time <= 0.0 {
        return Err(HarnessError::InvalidTime(cycle_time));
    }
    let s = (2.0 * (1.0 + delta)).sqrt();
    let t_single = cycle_time / (2.0 + s);
    Ok((t_single, t_single, cycle_time - 2.0 * t_single))
}

fn phase_sim(
    base: &SimConfig,
    incident: f64,
    duration: f64,
    cycle_index: u64,
    phase_ordinal: u64,
) -> SimConfig {
    let mut cfg = *base;
    cfg.incident_rate = incident;
    cfg.duration = duration;
    cfg.seed = seeds::derive(base.seed, seeds::cycle_phase(cycle_index, phase_ordinal));
    cfg
}

/// Simulates one three-phase cycle. `incident_rate_ab` is the combined-beam
/// photon rate; `split` is the fraction routed to beam A when only A is
/// open. The base config supplies detector parameters and the master seed;
/// its own rate and duration are ignored.
pub fn run_cycle(
    incident_rate_ab: f64,
    split: f64,
    plan: &MeasurementPlan,
    base: &SimConfig,
    cycle_index: u64,
) -> Result<[MeasurementRecord; 3], HarnessError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(HarnessError::InvalidSplit(split));
    }
    if !incident_rate_ab.is_finite() || incident_rate_ab < 0.0 {
        return Err(HarnessError::InvalidRate(incident_rate_ab));
    }
    plan.validate()?;
    let phases = [
        (Phase::A, incident_rate_ab * split, plan.t_a),
        (Phase::B, incident_rate_ab * (1.0 - split), plan.t_b),
        (Phase::Ab, incident_rate_ab, plan.t_ab),
    ];
    let mut records = [MeasurementRecord {
        cycle_index,
        phase: Phase::A,
        integration_time: 0.0,
        counts: 0,
    }; 3];
    for (ordinal, (phase, incident, duration)) in phases.into_iter().enumerate() {
        let cfg = phase_sim(base, incident, duration, cycle_index, ordinal as u64);
        let counts = simulate_counts(&cfg)?;
        records[ordinal] = MeasurementRecord {
            cycle_index,
            phase,
            integration_time: duration,
            counts,
        };
    }
    Ok(records)
}

/// Collapses records into one nonlinearity point. Records may arrive in any
/// order but must form complete cycles: exactly one A, one B and one AB per
/// cycle index.
pub fn estimate_point(records: &[MeasurementRecord]) -> Result<NonlinearityPoint, HarnessError> {
    let mut cycles: Vec<(u64, [Option<&MeasurementRecord>; 3])> = Vec::new();
    for rec in records {
        let slot = match cycles.iter_mut().find(|(idx, _)| *idx == rec.cycle_index) {
            Some((_, slots)) => slots,
            None => {
                cycles.push((rec.cycle_index, [None; 3]));
                &mut cycles.last_mut().unwrap().1
            }
        };
        let ordinal = match rec.phase {
            Phase::A => 0,
            Phase::B => 1,
            Phase::Ab => 2,
        };
        if slot[ordinal].is_some() {
            return Err(HarnessError::DuplicatePhase {
                cycle_index: rec.cycle_index,
                phase: rec.phase,
            });
        }
        slot[ordinal] = Some(rec);
    }
    if cycles.is_empty() {
        return Err(HarnessError::NoCycles);
    }
    cycles.sort_by_key(|(idx, _)| *idx);

    let mut deltas = Vec::with_capacity(cycles.len());
    let mut rate_ab_sum = 0.0;
    for (cycle_index, slots) in &cycles {
        for (ordinal, phase) in Phase::ALL.iter().enumerate() {
            if slots[ordinal].is_none() {
                return Err(HarnessError::IncompleteCycle {
                    cycle_index: *cycle_index,
                    phase: *phase,
                });
            }
        }
        let [a, b, ab] = slots.map(|s| s.unwrap());
        for rec in [a, b, ab] {
            if !rec.integration_time.is_finite() || rec.integration_time <= 0.0 {
                return Err(HarnessError::InvalidTime(rec.integration_time));
            }
        }
        deltas.push(delta_from_rates(
            a.detected_rate(),
            b.detected_rate(),
            ab.detected_rate(),
        )?);
        rate_ab_sum += ab.detected_rate();
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let sem = if deltas.len() > 1 {
        let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(NonlinearityPoint {
        detected_rate_ab: rate_ab_sum / n,
        delta_mean: mean,
        delta_sem: sem,
        repetitions: deltas.len(),
    })
}

/// Runs the full sweep and keeps every raw record. Cycle indices are global:
/// grid point `i`, repetition `r` gets index `i * repetitions + r`, so any
/// subset of the output is traceable and reproducible.
pub fn sweep_records(
    plan: &MeasurementPlan,
    split: f64,
    base: &SimConfig,
) -> Result<Vec<MeasurementRecord>, HarnessError> {
    plan.validate()?;
    if !(split > 0.0 && split < 1.0) {
        return Err(HarnessError::InvalidSplit(split));
    }
    let reps = plan.repetitions;
    let per_point: Vec<Result<Vec<MeasurementRecord>, HarnessError>> =
        exec::map_indexed(plan.rate_grid.len(), |i| {
            let mut records = Vec::with_capacity(3 * reps);
            for r in 0..reps {
                let cycle_index = (i * reps + r) as u64;
                records.extend(run_cycle(
                    plan.rate_grid[i],
                    split,
                    plan,
                    base,
                    cycle_index,
                )?);
            }
            Ok(records)
        });
    let mut all = Vec::with_capacity(3 * reps * plan.rate_grid.len());
    for chunk in per_point {
        all.extend(chunk?);
    }
    Ok(all)
}

/// Runs the sweep and reduces each grid point to a nonlinearity point.
pub fn sweep(
    plan: &MeasurementPlan,
    split: f64,
    base: &SimConfig,
) -> Result<Vec<NonlinearityPoint>, HarnessError> {
    let records = sweep_records(plan, split, base)?;
    let per_point = 3 * plan.repetitions;
    records
        .chunks(per_point)
        .map(estimate_point)
        .collect()
}

/// Slow modulation of the source rate, for stability studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Drift {
    None,
    /// Fractional modulation `amplitude * sin(2 pi t / period)`.
    Sinusoid { amplitude: f64, period: f64 },
    /// Fractional level takes a Gaussian step of `step_sigma` per bin;
    /// the rate is floored at zero.
    RandomWalk { step_sigma: f64 },
}

impl Drift {
    fn validate(&self) -> Result<(), HarnessError> {
        match *self {
            Drift::None => Ok(()),
            Drift::Sinusoid { amplitude, period } => {
                if !(0.0..=1.0).contains(&amplitude) || !period.is_finite() || period <= 0.0 {
                    return Err(HarnessError::InvalidSinusoid);
                }
                Ok(())
            }
            Drift::RandomWalk { step_sigma } => {
                if !step_sigma.is_finite() || step_sigma < 0.0 {
                    return Err(HarnessError::InvalidWalkStep(step_sigma));
                }
                Ok(())
            }
        }
    }
}

/// Poisson counts in consecutive bins from a source whose mean rate drifts.
/// Feed the result to the Allan estimator to see how drift breaks the
/// inverse-square-root averaging law.
pub fn stability_series(
    mean_rate: f64,
    bin_duration: f64,
    n_bins: usize,
    drift: Drift,
    seed: u64,
) -> Result<Vec<u64>, HarnessError> {
    if !mean_rate.is_finite() || mean_rate < 0.0 {
        return Err(HarnessError::InvalidRate(mean_rate));
    }
    if !bin_duration.is_finite() || bin_duration <= 0.0 {
        return Err(HarnessError::InvalidTime(bin_duration));
    }
    drift.validate()?;
    let mut count_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::BINS));
    let mut walk_rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::WALK));
    let mut walk_level = 0.0_f64;
    let mut counts = Vec::with_capacity(n_bins);
    for i in 0..n_bins {
        let fraction = match drift {
            Drift::None => 0.0,
            Drift::Sinusoid { amplitude, period } => {
                let t = (i as f64 + 0.5) * bin_duration;
                amplitude * (2.0 * std::f64::consts::PI * t / period).sin()
            }
            Drift::RandomWalk { step_sigma } => {
                let step: f64 = StandardNormal.sample(&mut walk_rng);
                walk_level += step * step_sigma;
                walk_level
            }
        };
        let rate = (mean_rate * (1.0 + fraction)).max(0.0);
        let mean = rate * bin_duration;
        let c = if mean > 0.0 {
            Poisson::new(mean).expect("positive finite mean").sample(&mut count_rng) as u64
        } else {
            0
        };
        counts.push(c);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DetectorParams, ModelKind, ResponseModel};
    use approx::assert_relative_eq;

    fn base_config(params: DetectorParams, kind: ModelKind, seed: u64) -> SimConfig {
        SimConfig {
            incident_rate: 0.0,
            duration: 1.0,
            kind,
            params,
            afterpulse_delay_tau: 0.0,
            afterpulse_cascades: false,
            seed,
        }
    }

    fn record(cycle: u64, phase: Phase, t: f64, counts: u64) -> MeasurementRecord {
        MeasurementRecord {
            cycle_index: cycle,
            phase,
            integration_time: t,
            counts,
        }
    }

    #[test]
    fn allocation_reproduces_known_fractions() {
        let (t_a, t_b, t_ab) = optimal_allocation(0.0, 1.0).unwrap();
        assert_relative_eq!(t_a, 0.29289321881345248, max_relative = 1e-14);
        assert_relative_eq!(t_b, 0.29289321881345248, max_relative = 1e-14);
        assert_relative_eq!(t_ab, 0.41421356237309505, max_relative = 1e-13);
        assert_relative_eq!(t_a + t_b + t_ab, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn optimized_allocation_beats_equal_split() {
        use crate::stats::{sigma_delta, sigma_delta_allocated};
        for delta in [0.0, 0.05, 0.8] {
            let (t_a, t_b, t_ab) = optimal_allocation(delta, 3.0).unwrap();
            let uneven = sigma_delta_allocated(delta, 1e5, t_a, t_b, t_ab).unwrap();
            let even = sigma_delta(delta, 1e5, 1.0).unwrap();
            assert!(uneven < even, "delta {delta}: {uneven} !< {even}");
        }
    }

    #[test]
    fn plan_consistency_is_enforced() {
        let mut plan = MeasurementPlan::balanced(2.0, 5, vec![1e4, 1e5]).unwrap();
        assert_eq!(plan.total_time_per_sample, 30.0);
        plan.total_time_per_sample = 29.0;
        assert!(matches!(
            plan.validate(),
            Err(HarnessError::InconsistentPlan { .. })
        ));
        assert!(matches!(
            MeasurementPlan::balanced(2.0, 0, vec![1e4]),
            Err(HarnessError::NoRepetitions)
        ));
        assert!(matches!(
            MeasurementPlan::balanced(2.0, 3, vec![]),
            Err(HarnessError::EmptyGrid)
        ));
    }

    #[test]
    fn estimate_point_hand_worked() {
        // Per-cycle deltas 0.01, 0.02, 0.03: mean 0.02, sample std 0.01,
        // standard error 0.01/sqrt(3).
        let records = vec![
            record(0, Phase::A, 1.0, 5050),
            record(0, Phase::B, 1.0, 5050),
            record(0, Phase::Ab, 1.0, 10_000),
            record(1, Phase::A, 1.0, 5100),
            record(1, Phase::B, 1.0, 5100),
            record(1, Phase::Ab, 1.0, 10_000),
            record(2, Phase::A, 1.0, 5150),
            record(2, Phase::B, 1.0, 5150),
            record(2, Phase::Ab, 1.0, 10_000),
        ];
        let point = estimate_point(&records).unwrap();
        assert_eq!(point.repetitions, 3);
        assert_relative_eq!(point.detected_rate_ab, 1e4, max_relative = 1e-15);
        assert_relative_eq!(point.delta_mean, 0.02, max_relative = 1e-12);
        assert_relative_eq!(point.delta_sem, 0.0057735026918962576, max_relative = 1e-12);
        assert!(point.has_sem());
    }

    #[test]
    fn estimate_point_single_cycle_has_no_sem() {
        let records = vec![
            record(7, Phase::A, 2.0, 1000),
            record(7, Phase::B, 2.0, 1000),
            record(7, Phase::Ab, 2.0, 2000),
        ];
        let point = estimate_point(&records).unwrap();
        assert_eq!(point.repetitions, 1);
        assert_eq!(point.delta_sem, 0.0);
        assert!(!point.has_sem());
        assert_relative_eq!(point.delta_mean, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn estimate_point_rejects_broken_cycles() {
        let records = vec![
            record(0, Phase::A, 1.0, 10),
            record(0, Phase::B, 1.0, 10),
        ];
        assert!(matches!(
            estimate_point(&records),
            Err(HarnessError::IncompleteCycle {
                cycle_index: 0,
                phase: Phase::Ab
            })
        ));
        let records = vec![
            record(0, Phase::A, 1.0, 10),
            record(0, Phase::A, 1.0, 10),
        ];
        assert!(matches!(
            estimate_point(&records),
            Err(HarnessError::DuplicatePhase { .. })
        ));
        assert!(matches!(estimate_point(&[]), Err(HarnessError::NoCycles)));
    }

    #[test]
    fn run_cycle_validates_split() {
        let plan = MeasurementPlan::balanced(0.1, 1, vec![1e4]).unwrap();
        let base = base_config(DetectorParams::default(), ModelKind::Np, 1);
        for bad in [0.0, 1.0, -0.2, 1.7] {
            assert!(matches!(
                run_cycle(1e4, bad, &plan, &base, 0),
                Err(HarnessError::InvalidSplit(_))
            ));
        }
    }

    #[test]
    fn ideal_detector_measures_zero_nonlinearity() {
        let plan = MeasurementPlan::balanced(1.0, 8, vec![2e5]).unwrap();
        let base = base_config(DetectorParams::default(), ModelKind::Np, 42);
        let points = sweep(&plan, 0.5, &base).unwrap();
        assert_eq!(points.len(), 1);
        let p = &points[0];
        assert_eq!(p.repetitions, 8);
        assert!(p.has_sem());
        assert!(
            p.delta_mean.abs() < 4.0 * p.delta_sem,
            "delta {} sem {}",
            p.delta_mean,
            p.delta_sem
        );
    }

    #[test]
    fn dead_time_produces_the_predicted_nonlinearity() {
        let params = DetectorParams {
            dark_rate: 83.0,
            dead_time_np: 36.7e-9,
            ..DetectorParams::default()
        };
        let plan = MeasurementPlan::balanced(2.0, 6, vec![1e6]).unwrap();
        let base = base_config(params, ModelKind::Np, 1234);
        let point = &sweep(&plan, 0.5, &base).unwrap()[0];
        let model = ResponseModel::new(ModelKind::Np, params).unwrap();
        let expected = model
            .delta_curve(model.response(1e6).unwrap())
            .unwrap();
        assert!(
            (point.delta_mean - expected).abs() < 5.0 * point.delta_sem,
            "measured {} +- {}, expected {}",
            point.delta_mean,
            point.delta_sem,
            expected
        );
        assert!(point.delta_mean > 0.01, "dead time must show up");
    }

    #[test]
    fn sweeps_are_deterministic_and_traceable() {
        let plan = MeasurementPlan::balanced(0.05, 3, vec![1e4, 1e5]).unwrap();
        let base = base_config(DetectorParams::default(), ModelKind::Np, 9);
        let a = sweep_records(&plan, 0.5, &base).unwrap();
        let b = sweep_records(&plan, 0.5, &base).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 18);
        let indices: Vec<u64> = a.iter().map(|r| r.cycle_index).collect();
        let expected: Vec<u64> = (0..6).flat_map(|c| [c, c, c]).collect();
        assert_eq!(indices, expected);
        let points = sweep(&plan, 0.5, &base).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0], estimate_point(&a[..9]).unwrap());
        assert_eq!(points[1], estimate_point(&a[9..]).unwrap());
    }

    #[test]
    fn stability_series_tracks_the_mean() {
        let counts = stability_series(1e5, 0.01, 2000, Drift::None, 5).unwrap();
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        assert_relative_eq!(mean, 1000.0, max_relative = 0.01);

        let drifted = stability_series(
            1e5,
            0.01,
            2000,
            Drift::Sinusoid {
                amplitude: 0.2,
                period: 5.0,
            },
            5,
        )
        .unwrap();
        let mean_d = drifted.iter().sum::<u64>() as f64 / drifted.len() as f64;
        assert_relative_eq!(mean_d, 1000.0, max_relative = 0.02);
        // Modulation inflates the spread well beyond Poisson.
        let var = drifted
            .iter()
            .map(|&c| (c as f64 - mean_d).powi(2))
            .sum::<f64>()
            / (drifted.len() as f64 - 1.0);
        assert!(var > 5.0 * mean_d, "variance {var} vs mean {mean_d}");
    }

    #[test]
    fn drift_validation() {
        assert!(stability_series(
            1e4,
            0.1,
            10,
            Drift::Sinusoid {
                amplitude: 1.5,
                period: 1.0
            },
            0
        )
        .is_err());
        assert!(stability_series(1e4, 0.1, 10, Drift::RandomWalk { step_sigma: -0.1 }, 0).is_err());
        assert!(stability_series(-1.0, 0.1, 10, Drift::None, 0).is_err());
    }
}
