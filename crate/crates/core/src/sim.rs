//! Event-level Monte Carlo of a photon-counting detector.
//!
//! Arrivals are two merged Poisson streams (signal and dark counts) plus an
//! optional afterpulse queue. Dead-time logic runs per arrival:
//!
//! * non-paralyzable: an arrival registers iff at least `dead_time_np` has
//!   passed since the previous registered detection;
//! * paralyzable: an arrival registers iff at least `dead_time_p` has passed
//!   since the previous arrival, registered or not.
//!
//! Every registered detection may spawn a Poisson number of afterpulses,
//! delayed exponentially from the parent detection. Afterpulses re-enter the
//! arrival stream and are swallowed if they land inside dead time.
//!
//! All randomness derives from one seed; results do not depend on execution
//! order or on whether the stream is materialized.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::models::{DetectorParams, ModelError, ModelKind, ResponseModel};
use crate::seeds;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("event simulation covers the NP and P mechanisms, not {0}")]
    UnsupportedKind(ModelKind),
    #[error("{kind} simulation does not use {name}; it must be zero, got {value}")]
    UnusedDeadTime {
        kind: ModelKind,
        name: &'static str,
        value: f64,
    },
    #[error("twilight pulses (twilight_alpha = {0}) have no event-level counterpart here")]
    TwilightNotSimulable(f64),
    #[error("afterpulse generation needs the NP mechanism; the P configuration has mean_afterpulses = {0}")]
    AfterpulsesRequireNp(f64),
    #[error("mean_afterpulses > 0 needs a positive afterpulse_delay_tau, got {0}")]
    MissingAfterpulseDelay(f64),
    #[error("incident rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("duration must be finite and positive, got {0}")]
    InvalidDuration(f64),
    #[error("afterpulse_delay_tau must be finite and non-negative, got {0}")]
    InvalidDelayTau(f64),
    #[error("arrival times must be finite, non-negative and sorted; violation at index {0}")]
    UnsortedArrivals(usize),
    #[error("afterpulse generation is stochastic; apply_detector takes mean_afterpulses = 0 only")]
    AfterpulsesNeedRng,
    #[error("need at least 2 repetitions to estimate a spread, got {0}")]
    NeedRepetitions(usize),
}

/// Registered detection times from one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    /// Detection times in seconds, sorted, within `[0, duration)`.
    pub timestamps: Vec<f64>,
    /// Observation window in seconds.
    pub duration: f64,
    /// Seed the run was generated from.
    pub seed: u64,
}

impl EventStream {
    /// Mean detected rate over the window.
    pub fn rate(&self) -> f64 {
        self.timestamps.len() as f64 / self.duration
    }

    /// Detection counts in consecutive bins of `bin_duration`, covering the
    /// largest whole number of bins that fit in the window.
    pub fn counts_in_bins(&self, bin_duration: f64) -> Vec<u64> {
        let n_bins = (self.duration / bin_duration).floor() as usize;
        let mut counts = vec![0u64; n_bins];
        for &t in &self.timestamps {
            let idx = (t / bin_duration) as usize;
            if idx < n_bins {
                counts[idx] += 1;
            }
        }
        counts
    }
}

/// One simulated acquisition: a source, a detector mechanism, a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Signal photon rate at the detector, events/s.
    pub incident_rate: f64,
    /// Observation window, seconds.
    pub duration: f64,
    /// Dead-time mechanism; `Np` or `P`.
    pub kind: ModelKind,
    pub params: DetectorParams,
    /// Mean exponential delay of an afterpulse after its parent detection,
    /// seconds. Required positive when `params.mean_afterpulses > 0`.
    pub afterpulse_delay_tau: f64,
    /// When set, registered afterpulses spawn afterpulses of their own.
    #[serde(default)]
    pub afterpulse_cascades: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.incident_rate.is_finite() || self.incident_rate < 0.0 {
            return Err(SimError::InvalidRate(self.incident_rate));
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(SimError::InvalidDuration(self.duration));
        }
        if !self.afterpulse_delay_tau.is_finite() || self.afterpulse_delay_tau < 0.0 {
            return Err(SimError::InvalidDelayTau(self.afterpulse_delay_tau));
        }
        self.params.validate()?;
        if self.params.twilight_alpha > 0.0 {
            return Err(SimError::TwilightNotSimulable(self.params.twilight_alpha));
        }
        match self.kind {
            ModelKind::Np => {
                if self.params.dead_time_p != 0.0 {
                    return Err(SimError::UnusedDeadTime {
                        kind: self.kind,
                        name: "dead_time_p",
                        value: self.params.dead_time_p,
                    });
                }
                if self.params.mean_afterpulses > 0.0 && self.afterpulse_delay_tau <= 0.0 {
                    return Err(SimError::MissingAfterpulseDelay(self.afterpulse_delay_tau));
                }
            }
            ModelKind::P => {
                if self.params.dead_time_np != 0.0 {
                    return Err(SimError::UnusedDeadTime {
                        kind: self.kind,
                        name: "dead_time_np",
                        value: self.params.dead_time_np,
                    });
                }
                if self.params.mean_afterpulses > 0.0 {
                    return Err(SimError::AfterpulsesRequireNp(self.params.mean_afterpulses));
                }
            }
            other => return Err(SimError::UnsupportedKind(other)),
        }
        Ok(())
    }

    /// The closed-form model this configuration realizes: NP, P, or AP when
    /// afterpulsing is on. The closed AP form folds afterpulses into a rate
    /// multiplier and ignores their delay distribution, so the simulated rate
    /// sits slightly below it once delays are short enough to be swallowed by
    /// dead time.
    pub fn analytic_model(&self) -> Result<ResponseModel, SimError> {
        self.validate()?;
        let kind = if self.kind == ModelKind::Np && self.params.mean_afterpulses > 0.0 {
            ModelKind::Ap
        } else {
            self.kind
        };
        Ok(ResponseModel::new(kind, self.params)?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Total-order wrapper; simulation times are never NaN.
#[derive(PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn exp_gap(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -f64::ln_1p(-u) / rate
}

/// A lazy homogeneous Poisson stream.
struct PoissonArrivals {
    rng: ChaCha8Rng,
    rate: f64,
    next: f64,
}

impl PoissonArrivals {
    fn new(rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let next = if rate > 0.0 {
            exp_gap(&mut rng, rate)
        } else {
            f64::INFINITY
        };
        PoissonArrivals { rng, rate, next }
    }

    fn advance(&mut self) {
        self.next += exp_gap(&mut self.rng, self.rate);
    }
}

#[derive(PartialEq, Clone, Copy)]
enum Source {
    Signal,
    Dark,
    Afterpulse,
}

/// Runs the event loop, calling `emit` for every registered detection, and
/// returns the detection count. Both the streaming and the materializing
/// entry points go through here, so they agree bit for bit.
fn run_events<F: FnMut(f64)>(cfg: &SimConfig, mut emit: F) -> u64 {
    let p = &cfg.params;
    let mut signal = PoissonArrivals::new(cfg.incident_rate, seeds::derive(cfg.seed, seeds::SIGNAL));
    let mut dark = PoissonArrivals::new(p.dark_rate, seeds::derive(cfg.seed, seeds::DARK));
    let mut ap_count_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::AP_COUNT));
    let mut ap_delay_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::AP_DELAY));
    let ap_dist = (p.mean_afterpulses > 0.0)
        .then(|| Poisson::new(p.mean_afterpulses).expect("validated positive finite mean"));
    let mut pending: BinaryHeap<Reverse<Time>> = BinaryHeap::new();

    let paralyzable = cfg.kind == ModelKind::P;
    let tau = if paralyzable { p.dead_time_p } else { p.dead_time_np };
    let mut prev_arrival = f64::NEG_INFINITY;
    let mut last_registered = f64::NEG_INFINITY;
    let mut count = 0u64;

    loop {
        let ap_next = pending.peek().map_or(f64::INFINITY, |Reverse(Time(t))| *t);
        let (t, source) = if signal.next <= dark.next && signal.next <= ap_next {
            (signal.next, Source::Signal)
        } else if dark.next <= ap_next {
            (dark.next, Source::Dark)
        } else {
            (ap_next, Source::Afterpulse)
        };
        if t >= cfg.duration {
            break;
        }
        match source {
            Source::Signal => signal.advance(),
            Source::Dark => dark.advance(),
            Source::Afterpulse => {
                pending.pop();
            }
        }

        let registered = if paralyzable {
            t - prev_arrival >= tau
        } else {
            t - last_registered >= tau
        };
        prev_arrival = t;
        if !registered {
            continue;
        }
        last_registered = t;
        count += 1;
        emit(t);

        if let Some(dist) = &ap_dist {
            if source != Source::Afterpulse || cfg.afterpulse_cascades {
                let spawned = dist.sample(&mut ap_count_rng) as u64;
                for _ in 0..spawned {
                    let t_ap = t + exp_gap(&mut ap_delay_rng, 1.0 / cfg.afterpulse_delay_tau);
                    if t_ap < cfg.duration {
                        pending.push(Reverse(Time(t_ap)));
                    }
                }
            }
        }
    }
    count
}

/// Simulates one acquisition and materializes every detection time.
/// For windows with more than ~1e7 expected detections prefer
/// [`simulate_counts`], which does not allocate.
pub fn simulate(config: &SimConfig) -> Result<EventStream, SimError> {
    config.validate()?;
    let mut timestamps = Vec::new();
    run_events(config, |t| timestamps.push(t));
    Ok(EventStream {
        timestamps,
        duration: config.duration,
        seed: config.seed,
    })
}

/// Streaming detection count over the window.
pub fn simulate_counts(config: &SimConfig) -> Result<u64, SimError> {
    config.validate()?;
    Ok(run_events(config, |_| {}))
}

/// Streaming detected rate: count / duration.
pub fn simulate_detected_rate(config: &SimConfig) -> Result<f64, SimError> {
    Ok(simulate_counts(config)? as f64 / config.duration)
}

/// Mean and sample standard deviation of the detected rate over independent
/// repetitions. Repetition `i` runs with a sub-seed derived from
/// `config.seed` and `i`, so the result is independent of scheduling.
pub fn empirical_rate_std(
    config: &SimConfig,
    repetitions: usize,
) -> Result<(f64, f64), SimError> {
    if repetitions < 2 {
        return Err(SimError::NeedRepetitions(repetitions));
    }
    config.validate()?;
    let rates: Vec<f64> = exec::map_indexed(repetitions, |i| {
        let rep = config.with_seed(seeds::derive(config.seed, seeds::repetition(i as u64)));
        run_events(&rep, |_| {}) as f64 / rep.duration
    });
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Applies dead-time logic to an explicit arrival list (no sources, no
/// afterpulsing). Exists so the registration rules can be pinned against
/// hand-worked arrival sequences.
pub fn apply_detector(
    kind: ModelKind,
    params: &DetectorParams,
    arrivals: &[f64],
) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    if params.mean_afterpulses > 0.0 {
        return Err(SimError::AfterpulsesNeedRng);
    }
    if params.twilight_alpha > 0.0 {
        return Err(SimError::TwilightNotSimulable(params.twilight_alpha));
    }
    let paralyzable = match kind {
        ModelKind::Np => false,
        ModelKind::P => true,
        other => return Err(SimError::UnsupportedKind(other)),
    };
    let tau = if paralyzable {
        params.dead_time_p
    } else {
        params.dead_time_np
    };
    let mut prev = f64::NEG_INFINITY;
    for (i, &t) in arrivals.iter().enumerate() {
        if !t.is_finite() || t < 0.0 || t < prev {
            return Err(SimError::UnsortedArrivals(i));
        }
        prev = t;
    }
    let mut registered = Vec::new();
    let mut prev_arrival = f64::NEG_INFINITY;
    let mut last_registered = f64::NEG_INFINITY;
    for &t in arrivals {
        let ok = if paralyzable {
            t - prev_arrival >= tau
        } else {
            t - last_registered >= tau
        };
        prev_arrival = t;
        if ok {
            last_registered = t;
            registered.push(t);
        }
    }
    Ok(registered)
}

/// A bare Poisson arrival stream, no detector. Building block for timing
/// statistics tests.
pub fn generate_arrivals(rate: f64, duration: f64, seed: u64) -> Result<EventStream, SimError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(SimError::InvalidRate(rate));
    }
    if !duration.is_finite() || duration <= 0.0 {
        return Err(SimError::InvalidDuration(duration));
    }
    let mut src = PoissonArrivals::new(rate, seeds::derive(seed, seeds::SIGNAL));
    let mut timestamps = Vec::new();
    while src.next < duration {
        timestamps.push(src.next);
        src.advance();
    }
    Ok(EventStream {
        timestamps,
        duration,
        seed,
    })
}

/// Independent Poisson counts for `n_bins` consecutive bins at a fixed mean
/// rate. Cheaper than binning an event stream when only counts are needed.
pub fn poisson_bin_counts(
    mean_rate: f64,
    bin_duration: f64,
    n_bins: usize,
    seed: u64,
) -> Result<Vec<u64>, SimError> {
    if !mean_rate.is_finite() || mean_rate < 0.0 {
        return Err(SimError::InvalidRate(mean_rate));
    }
    if !bin_duration.is_finite() || bin_duration <= 0.0 {
        return Err(SimError::InvalidDuration(bin_duration));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::BINS));
    let mean = mean_rate * bin_duration;
    if mean == 0.0 {
        return Ok(vec![0; n_bins]);
    }
    let dist = Poisson::new(mean).expect("validated positive finite mean");
    Ok((0..n_bins).map(|_| dist.sample(&mut rng) as u64).collect())
}
