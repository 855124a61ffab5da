//! Counting statistics for the two-beam nonlinearity measurement: predicted
//! uncertainty of the nonlinearity estimate, measurement-time budgeting, and
//! chi-square goodness of fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::NonlinearityPoint;

pub mod allan;
pub mod gamma;

pub use allan::{relative_allan_deviation, AllanSeries};
pub use gamma::{gamma_q, ln_gamma, ln_gamma_q, log10_gamma_q};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("detected rate must be finite and positive, got {0}")]
    NonPositiveRate(f64),
    #[error("integration time must be finite and positive, got {0}")]
    NonPositiveIntegrationTime(f64),
    #[error("nonlinearity must be finite and at least -1, got {0}")]
    InvalidDelta(f64),
    #[error("dead time must be finite and non-negative, got {0}")]
    InvalidDeadTime(f64),
    #[error("dead-time loss fraction {0} is at or past saturation; the spread formula needs dead_time * rate < 1")]
    SaturatedRate(f64),
    #[error("need at least one repetition, got {0}")]
    NoRepetitions(usize),
    #[error("point {index}: standard error of the mean must be finite and positive, got {sem}")]
    NeedPositiveSem { index: usize, sem: f64 },
    #[error("point {index}: non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("model curve is undefined at point {index} (detected rate {rate})")]
    CurveUndefined { index: usize, rate: f64 },
    #[error("chi-square needs more points than parameters: {points} points, {params} parameters")]
    TooFewPoints { points: usize, params: usize },
    #[error("counts series is empty")]
    EmptyCounts,
    #[error("counts series sums to zero; relative deviation is undefined")]
    ZeroMeanCounts,
    #[error("averaging factor must be at least 1, got {0}")]
    InvalidAveragingFactor(usize),
}

fn check_rate(rate: f64) -> Result<(), StatsError> {
    if !rate.is_finite() || rate <= 0.0 {
        return Err(StatsError::NonPositiveRate(rate));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<(), StatsError> {
    if !t.is_finite() || t <= 0.0 {
        return Err(StatsError::NonPositiveIntegrationTime(t));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<(), StatsError> {
    if !delta.is_finite() || delta < -1.0 {
        return Err(StatsError::InvalidDelta(delta));
    }
    Ok(())
}

/// Single-cycle standard deviation of the nonlinearity estimate from Poisson
/// counting alone, with every phase integrated for `integration_time`:
/// `sqrt((1 + delta)(2 + delta) / (rate_ab * integration_time))`.
pub fn sigma_delta(delta: f64, rate_ab: f64, integration_time: f64) -> Result<f64, StatsError> {
    check_delta(delta)?;
    check_rate(rate_ab)?;
    check_time(integration_time)?;
    Ok(((1.0 + delta) * (2.0 + delta) / (rate_ab * integration_time)).sqrt())
}

/// Small-nonlinearity limit of [`sigma_delta`]: `sqrt(2 / (rate_ab * T))`.
pub fn sigma_delta_approx(rate_ab: f64, integration_time: f64) -> Result<f64, StatsError> {
    check_rate(rate_ab)?;
    check_time(integration_time)?;
    Ok((2.0 / (rate_ab * integration_time)).sqrt())
}

/// Standard error of the mean nonlinearity over `repetitions` independent
/// cycles.
pub fn sigma_delta_mean(
    delta: f64,
    rate_ab: f64,
    integration_time: f64,
    repetitions: usize,
) -> Result<f64, StatsError> {
    if repetitions == 0 {
        return Err(StatsError::NoRepetitions(repetitions));
    }
    Ok(sigma_delta(delta, rate_ab, integration_time)? / (repetitions as f64).sqrt())
}

/// Variance of the nonlinearity estimate when the three phases get unequal
/// integration times `t_a`, `t_b`, `t_ab`.
pub fn sigma_delta_allocated(
    delta: f64,
    rate_ab: f64,
    t_a: f64,
    t_b: f64,
    t_ab: f64,
) -> Result<f64, StatsError> {
    check_delta(delta)?;
    check_rate(rate_ab)?;
    for t in [t_a, t_b, t_ab] {
        check_time(t)?;
    }
    let var = (1.0 + delta) / (2.0 * rate_ab * t_a)
        + (1.0 + delta) / (2.0 * rate_ab * t_b)
        + (1.0 + delta) * (1.0 + delta) / (rate_ab * t_ab);
    Ok(var.sqrt())
}

/// Standard deviation of a detected rate measured over `integration_time` on
/// a non-paralyzable detector: dead time narrows the Poisson spread by
/// `(1 - dead_time * detected_rate)`.
pub fn sub_poissonian_sigma_rate(
    detected_rate: f64,
    dead_time: f64,
    integration_time: f64,
) -> Result<f64, StatsError> {
    check_rate(detected_rate)?;
    check_time(integration_time)?;
    if !dead_time.is_finite() || dead_time < 0.0 {
        return Err(StatsError::InvalidDeadTime(dead_time));
    }
    let loss = dead_time * detected_rate;
    if loss >= 1.0 {
        return Err(StatsError::SaturatedRate(loss));
    }
    Ok((1.0 - loss) * (detected_rate / integration_time).sqrt())
}

/// Predicted measurement precision at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBound {
    /// Combined-beam detected rate, events/s.
    pub detected_rate_ab: f64,
    /// Integration time per phase per cycle, seconds.
    pub integration_time: f64,
    /// Number of measurement cycles averaged.
    pub repetitions: usize,
    /// Single-cycle standard deviation of the nonlinearity.
    pub sigma_delta: f64,
    /// Standard error after averaging the cycles.
    pub sigma_delta_mean: f64,
}

impl UncertaintyBound {
    pub fn for_point(
        detected_rate_ab: f64,
        delta: f64,
        integration_time: f64,
        repetitions: usize,
    ) -> Result<Self, StatsError> {
        let single = sigma_delta(delta, detected_rate_ab, integration_time)?;
        if repetitions == 0 {
            return Err(StatsError::NoRepetitions(repetitions));
        }
        Ok(UncertaintyBound {
            detected_rate_ab,
            integration_time,
            repetitions,
            sigma_delta: single,
            sigma_delta_mean: single / (repetitions as f64).sqrt(),
        })
    }
}

/// Goodness-of-fit summary for a weighted least-squares comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    /// Upper-tail probability of the chi-square statistic. Underflows to
    /// zero for hopeless fits; see `log10_p`.
    pub p_value: f64,
    /// log10 of the p-value, finite far into the tail.
    pub log10_p: f64,
}

/// Chi-square of measured nonlinearity points against a model curve
/// evaluated at each point's detected rate. `curve` returns `None` where the
/// model is undefined; that is an error, not a silent skip. `n_params` is
/// the number of parameters the curve was tuned on (zero for a fixed
/// prediction).
pub fn chi_square<F>(
    points: &[NonlinearityPoint],
    curve: F,
    n_params: usize,
) -> Result<ChiSquareReport, StatsError>
where
    F: Fn(f64) -> Option<f64>,
{
    if points.len() <= n_params {
        return Err(StatsError::TooFewPoints {
            points: points.len(),
            params: n_params,
        });
    }
    let mut chi2 = 0.0;
    for (index, pt) in points.iter().enumerate() {
        if !pt.detected_rate_ab.is_finite() || !pt.delta_mean.is_finite() {
            return Err(StatsError::NonFinitePoint { index });
        }
        if !pt.delta_sem.is_finite() || pt.delta_sem <= 0.0 {
            return Err(StatsError::NeedPositiveSem {
                index,
                sem: pt.delta_sem,
            });
        }
        let model = curve(pt.detected_rate_ab).ok_or(StatsError::CurveUndefined {
            index,
            rate: pt.detected_rate_ab,
        })?;
        let r = (pt.delta_mean - model) / pt.delta_sem;
        chi2 += r * r;
    }
    let dof = points.len() - n_params;
    let (a, x) = (dof as f64 / 2.0, chi2 / 2.0);
    Ok(ChiSquareReport {
        chi2,
        dof,
        chi2_per_dof: chi2 / dof as f64,
        p_value: gamma_q(a, x),
        log10_p: log10_gamma_q(a, x),
    })
}
