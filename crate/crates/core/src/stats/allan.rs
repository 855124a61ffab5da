//! Overlapping Allan deviation of binned counts, normalized by the mean so
//! different count levels compare directly.
//!
//! For shot-noise-limited (white) counting the curve falls as the inverse
//! square root of the integration time; a floor or upturn at long times flags
//! drift that averaging cannot remove.

use serde::{Deserialize, Serialize};

use super::StatsError;

/// Relative Allan deviation per integration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanSeries {
    /// Integration times in seconds, one per kept averaging factor.
    pub integration_times: Vec<f64>,
    /// Dimensionless relative Allan deviation at each integration time.
    pub relative_deviation: Vec<f64>,
    /// Requested integration times dropped for lack of samples.
    pub omitted: Vec<f64>,
}

/// Overlapping Allan deviation of `counts` (one entry per bin of
/// `bin_duration` seconds), evaluated at integration times
/// `factor * bin_duration` for each averaging factor. A factor `m` needs at
/// least `2m` bins; factors that do not fit are reported in `omitted`.
pub fn relative_allan_deviation(
    counts: &[u64],
    bin_duration: f64,
    factors: &[usize],
) -> Result<AllanSeries, StatsError> {
    if counts.is_empty() {
        return Err(StatsError::EmptyCounts);
    }
    if !bin_duration.is_finite() || bin_duration <= 0.0 {
        return Err(StatsError::NonPositiveIntegrationTime(bin_duration));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::ZeroMeanCounts);
    }
    let n = counts.len();
    let mean = total as f64 / n as f64;

    // Prefix sums; counts are integers, so these are exact in f64 up to 2^53.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &c in counts {
        acc += c as f64;
        prefix.push(acc);
    }

    let mut series = AllanSeries {
        integration_times: Vec::new(),
        relative_deviation: Vec::new(),
        omitted: Vec::new(),
    };
    for &m in factors {
        if m == 0 {
            return Err(StatsError::InvalidAveragingFactor(m));
        }
        let tau = m as f64 * bin_duration;
        if n < 2 * m {
            series.omitted.push(tau);
            continue;
        }
        let terms = n - 2 * m + 1;
        let mut sum_sq = 0.0;
        for j in 0..terms {
            let d = prefix[j + 2 * m] - 2.0 * prefix[j + m] + prefix[j];
            sum_sq += d * d;
        }
        let var = sum_sq / (2.0 * (m as f64 * mean).powi(2) * terms as f64);
        series.integration_times.push(tau);
        series.relative_deviation.push(var.sqrt());
    }
    Ok(series)
}
