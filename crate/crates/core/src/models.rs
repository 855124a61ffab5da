//! Closed-form detector response models, their inverses, and the expected
//! nonlinearity curve for balanced two-beam superposition.
//!
//! All rates are events per second, all times seconds. A model maps an
//! incident photon rate `R` to a registered detection rate; internally every
//! formula works on the total Poisson rate `lam = R + dark_rate` because dark
//! counts pass through the same dead-time machinery as photons.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be finite and non-negative, got {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("{kind} model does not use {name}; it must be zero, got {value}")]
    UnusedParam {
        kind: ModelKind,
        name: &'static str,
        value: f64,
    },
    #[error(
        "effective dead time is not positive: twilight_alpha*exp(-mean_afterpulses) = {shift:e} s \
         must stay below dead_time_np = {dead_time_np:e} s"
    )]
    NonPositiveEffectiveDeadTime { shift: f64, dead_time_np: f64 },
    #[error("incident rate must be finite and non-negative, got {0}")]
    InvalidIncidentRate(f64),
    #[error("detected rate must be finite and non-negative, got {0}")]
    InvalidDetectedRate(f64),
    #[error("detected rate {detected} exceeds the peak attainable rate {peak}")]
    AbovePeak { detected: f64, peak: f64 },
    #[error("detected rate {detected} is at or above the saturation bound {supremum}, which the model only approaches")]
    AboveSaturation { detected: f64, supremum: f64 },
    #[error("detected rate {detected} is below the dark-count response {floor}; no non-negative incident rate produces it")]
    BelowDarkResponse { detected: f64, floor: f64 },
    #[error("combined-beam rate must be positive")]
    ZeroCombinedRate,
    #[error("unknown model kind {0:?}; expected NP, P, NP-P, P-NP or AP")]
    UnknownKind(String),
}

/// Dead-time / afterpulsing mechanism shaping the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Dead time follows registered detections only.
    #[serde(rename = "NP")]
    Np,
    /// Every arrival restarts the dead time, registered or not.
    #[serde(rename = "P")]
    P,
    /// Paralyzable thinning feeding a non-paralyzable stage.
    #[serde(rename = "NP-P")]
    NpP,
    /// Non-paralyzable stage whose input is paralyzably thinned.
    #[serde(rename = "P-NP")]
    PNp,
    /// Non-paralyzable dead time with afterpulsing and twilight pulses.
    #[serde(rename = "AP")]
    Ap,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Np,
        ModelKind::P,
        ModelKind::NpP,
        ModelKind::PNp,
        ModelKind::Ap,
    ];

    /// The four kinds that can be fit to a nonlinearity curve.
    pub const FITTABLE: [ModelKind; 4] =
        [ModelKind::Np, ModelKind::P, ModelKind::NpP, ModelKind::PNp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Np => "NP",
            ModelKind::P => "P",
            ModelKind::NpP => "NP-P",
            ModelKind::PNp => "P-NP",
            ModelKind::Ap => "AP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NP" => Ok(ModelKind::Np),
            "P" => Ok(ModelKind::P),
            "NP-P" => Ok(ModelKind::NpP),
            "P-NP" => Ok(ModelKind::PNp),
            "AP" => Ok(ModelKind::Ap),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

/// Physical detector parameters. A given [`ModelKind`] uses a subset; the
/// rest must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Dark-count rate, events/s.
    pub dark_rate: f64,
    /// Non-paralyzable dead time, seconds.
    pub dead_time_np: f64,
    /// Paralyzable dead time, seconds.
    pub dead_time_p: f64,
    /// Mean number of afterpulses per registered detection.
    pub mean_afterpulses: f64,
    /// Twilight-pulse coefficient, seconds.
    pub twilight_alpha: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            dark_rate: 0.0,
            dead_time_np: 0.0,
            dead_time_p: 0.0,
            mean_afterpulses: 0.0,
            twilight_alpha: 0.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("dark_rate", self.dark_rate),
            ("dead_time_np", self.dead_time_np),
            ("dead_time_p", self.dead_time_p),
            ("mean_afterpulses", self.mean_afterpulses),
            ("twilight_alpha", self.twilight_alpha),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    /// Dead time left once twilight pulses are absorbed:
    /// `dead_time_np - twilight_alpha*exp(-mean_afterpulses)`.
    pub fn effective_dead_time(&self) -> f64 {
        self.dead_time_np - self.twilight_alpha * (-self.mean_afterpulses).exp()
    }
}

/// A response model: a kind plus validated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    kind: ModelKind,
    params: DetectorParams,
}

fn require_zero(kind: ModelKind, name: &'static str, value: f64) -> Result<(), ModelError> {
    if value != 0.0 {
        return Err(ModelError::UnusedParam { kind, name, value });
    }
    Ok(())
}

impl ResponseModel {
    pub fn new(kind: ModelKind, params: DetectorParams) -> Result<Self, ModelError> {
        params.validate()?;
        match kind {
            ModelKind::Np => {
                require_zero(kind, "dead_time_p", params.dead_time_p)?;
                require_zero(kind, "mean_afterpulses", params.mean_afterpulses)?;
                require_zero(kind, "twilight_alpha", params.twilight_alpha)?;
            }
            ModelKind::P => {
                require_zero(kind, "dead_time_np", params.dead_time_np)?;
                require_zero(kind, "mean_afterpulses", params.mean_afterpulses)?;
                require_zero(kind, "twilight_alpha", params.twilight_alpha)?;
            }
            ModelKind::NpP | ModelKind::PNp => {
                require_zero(kind, "mean_afterpulses", params.mean_afterpulses)?;
                require_zero(kind, "twilight_alpha", params.twilight_alpha)?;
            }
            ModelKind::Ap => {
                require_zero(kind, "dead_time_p", params.dead_time_p)?;
                let eff = params.effective_dead_time();
                if eff <= 0.0 {
                    return Err(ModelError::NonPositiveEffectiveDeadTime {
                        shift: params.twilight_alpha * (-params.mean_afterpulses).exp(),
                        dead_time_np: params.dead_time_np,
                    });
                }
            }
        }
        Ok(ResponseModel { kind, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    /// Registered rate as a function of the total Poisson rate `lam`
    /// (incident + dark).
    fn registered(&self, lam: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            ModelKind::Np => lam / (1.0 + lam * p.dead_time_np),
            ModelKind::P => lam * (-lam * p.dead_time_p).exp(),
            ModelKind::NpP => {
                lam * (-lam * p.dead_time_p).exp() / (1.0 + lam * p.dead_time_np)
            }
            ModelKind::PNp => {
                let u = lam * (-lam * p.dead_time_p).exp();
                u / (1.0 + p.dead_time_np * u)
            }
            ModelKind::Ap => {
                if lam == 0.0 {
                    return 0.0;
                }
                let survive = (-p.mean_afterpulses).exp();
                1.0 / ((1.0 / lam - p.twilight_alpha) * survive + p.dead_time_np)
            }
        }
    }

    /// d(registered)/d(lam); used to polish the numeric inverse.
    fn registered_slope(&self, lam: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            ModelKind::Np => {
                let d = 1.0 + lam * p.dead_time_np;
                1.0 / (d * d)
            }
            ModelKind::P => (1.0 - lam * p.dead_time_p) * (-lam * p.dead_time_p).exp(),
            ModelKind::NpP => {
                let e = (-lam * p.dead_time_p).exp();
                let d = 1.0 + lam * p.dead_time_np;
                e * ((1.0 - lam * p.dead_time_p) * d - lam * p.dead_time_np) / (d * d)
            }
            ModelKind::PNp => {
                let u = lam * (-lam * p.dead_time_p).exp();
                let du = (1.0 - lam * p.dead_time_p) * (-lam * p.dead_time_p).exp();
                let d = 1.0 + p.dead_time_np * u;
                du / (d * d)
            }
            ModelKind::Ap => {
                let survive = (-p.mean_afterpulses).exp();
                let denom = (1.0 / lam - p.twilight_alpha) * survive + p.dead_time_np;
                survive / (lam * lam * denom * denom)
            }
        }
    }

    /// Detected rate for a given incident photon rate.
    pub fn response(&self, incident_rate: f64) -> Result<f64, ModelError> {
        if !incident_rate.is_finite() || incident_rate < 0.0 {
            return Err(ModelError::InvalidIncidentRate(incident_rate));
        }
        Ok(self.registered(incident_rate + self.params.dark_rate))
    }

    /// Total rate at the response peak, unconstrained by the dark-rate floor.
    /// `None` for monotone responses (NP, AP, and paralyzable kinds with
    /// `dead_time_p == 0`).
    fn peak_total_rate(&self) -> Option<f64> {
        let p = &self.params;
        match self.kind {
            ModelKind::Np | ModelKind::Ap => None,
            // Peak of lam*exp(-lam*tau); the P-NP denominator is monotone in
            // the same thinned rate, so it peaks at the same lam.
            ModelKind::P | ModelKind::PNp => {
                (p.dead_time_p > 0.0).then(|| 1.0 / p.dead_time_p)
            }
            // Root of tau_p*tau_np*lam^2 + tau_p*lam - 1 = 0.
            ModelKind::NpP => {
                let (tn, tp) = (p.dead_time_np, p.dead_time_p);
                if tp == 0.0 {
                    None
                } else if tn == 0.0 {
                    Some(1.0 / tp)
                } else {
                    Some((-tp + (tp * tp + 4.0 * tp * tn).sqrt()) / (2.0 * tp * tn))
                }
            }
        }
    }

    /// Peak of the response over non-negative incident rates, as
    /// `(incident_rate, detected_rate)`. `None` when the response is
    /// monotone and only approaches its supremum.
    pub fn peak(&self) -> Option<(f64, f64)> {
        let lam_peak = self.peak_total_rate()?.max(self.params.dark_rate);
        let incident = lam_peak - self.params.dark_rate;
        Some((incident, self.registered(lam_peak)))
    }

    /// Least upper bound of attainable detected rates: the peak value for
    /// paralyzable-type models, `1/tau_eff` (approached, never reached) for
    /// NP and AP.
    pub fn detected_rate_supremum(&self) -> f64 {
        match self.peak() {
            Some((_, detected)) => detected,
            None => match self.kind {
                ModelKind::Np => {
                    if self.params.dead_time_np > 0.0 {
                        1.0 / self.params.dead_time_np
                    } else {
                        f64::INFINITY
                    }
                }
                ModelKind::Ap => 1.0 / self.params.effective_dead_time(),
                // A paralyzable kind with dead_time_p == 0 degenerates to NP.
                _ => {
                    if self.params.dead_time_np > 0.0 {
                        1.0 / self.params.dead_time_np
                    } else {
                        f64::INFINITY
                    }
                }
            },
        }
    }

    /// Incident rate on the low branch with `response(rate) = detected_rate`,
    /// to 1e-12 relative. NP and AP invert in closed form; paralyzable kinds
    /// are solved by bisection plus Newton polish on the pre-peak branch.
    pub fn inverse_response(&self, detected_rate: f64) -> Result<f64, ModelError> {
        if !detected_rate.is_finite() || detected_rate < 0.0 {
            return Err(ModelError::InvalidDetectedRate(detected_rate));
        }
        let dark = self.params.dark_rate;
        let floor = self.registered(dark);
        if detected_rate < floor {
            return Err(ModelError::BelowDarkResponse {
                detected: detected_rate,
                floor,
            });
        }
        if detected_rate == floor {
            return Ok(0.0);
        }

        match self.kind {
            ModelKind::Np => {
                let sup = self.detected_rate_supremum();
                if detected_rate >= sup {
                    return Err(ModelError::AboveSaturation {
                        detected: detected_rate,
                        supremum: sup,
                    });
                }
                let lam = detected_rate / (1.0 - detected_rate * self.params.dead_time_np);
                Ok(lam - dark)
            }
            ModelKind::Ap => {
                let sup = self.detected_rate_supremum();
                if detected_rate >= sup {
                    return Err(ModelError::AboveSaturation {
                        detected: detected_rate,
                        supremum: sup,
                    });
                }
                let p = &self.params;
                let grow = p.mean_afterpulses.exp();
                let lam = 1.0
                    / ((1.0 / detected_rate - p.dead_time_np) * grow + p.twilight_alpha);
                Ok(lam - dark)
            }
            ModelKind::P | ModelKind::NpP | ModelKind::PNp => {
                match self.peak() {
                    None => {
                        // dead_time_p == 0: NP-form with dead_time_np (which
                        // may itself be zero, giving the identity response).
                        let sup = self.detected_rate_supremum();
                        if detected_rate >= sup {
                            return Err(ModelError::AboveSaturation {
                                detected: detected_rate,
                                supremum: sup,
                            });
                        }
                        let lam = detected_rate
                            / (1.0 - detected_rate * self.params.dead_time_np);
                        Ok(lam - dark)
                    }
                    Some((peak_incident, peak_detected)) => {
                        if detected_rate > peak_detected {
                            return Err(ModelError::AbovePeak {
                                detected: detected_rate,
                                peak: peak_detected,
                            });
                        }
                        if detected_rate == peak_detected {
                            return Ok(peak_incident);
                        }
                        Ok(self.invert_on_branch(detected_rate, dark, dark + peak_incident)
                            - dark)
                    }
                }
            }
        }
    }

    /// Bisection on `[lo, hi]` (total-rate domain, response increasing),
    /// finished with bracket-guarded Newton steps.
    fn invert_on_branch(&self, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.registered(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut lam = 0.5 * (lo + hi);
        for _ in 0..6 {
            let err = self.registered(lam) - target;
            let slope = self.registered_slope(lam);
            if slope <= 0.0 {
                break;
            }
            let next = lam - err / slope;
            if !(lo..=hi).contains(&next) {
                break;
            }
            if (next - lam).abs() <= 1e-15 * lam.abs() {
                lam = next;
                break;
            }
            lam = next;
        }
        lam
    }

    /// Expected nonlinearity at a combined-beam detected rate under balanced
    /// splitting: `2*f(f_inv(rate)/2)/rate - 1`.
    pub fn delta_curve(&self, detected_rate_ab: f64) -> Result<f64, ModelError> {
        if detected_rate_ab <= 0.0 {
            return Err(ModelError::ZeroCombinedRate);
        }
        let incident_ab = self.inverse_response(detected_rate_ab)?;
        let detected_single = self.response(incident_ab / 2.0)?;
        Ok(2.0 * detected_single / detected_rate_ab - 1.0)
    }

    /// NP-model twin of an AP model: parameters
    /// `(dark_rate*e^n, dead_time_np - twilight_alpha*e^-n)` and the incident
    /// scale `e^n` satisfying `f_AP(R) = f_NP(R*scale)` for all R.
    pub fn afterpulse_equivalent(&self) -> Result<(ResponseModel, f64), ModelError> {
        let p = &self.params;
        debug_assert_eq!(self.kind, ModelKind::Ap);
        let eff = p.effective_dead_time();
        if eff <= 0.0 {
            return Err(ModelError::NonPositiveEffectiveDeadTime {
                shift: p.twilight_alpha * (-p.mean_afterpulses).exp(),
                dead_time_np: p.dead_time_np,
            });
        }
        let scale = p.mean_afterpulses.exp();
        let mapped = ResponseModel::new(
            ModelKind::Np,
            DetectorParams {
                dark_rate: p.dark_rate * scale,
                dead_time_np: eff,
                ..DetectorParams::default()
            },
        )?;
        Ok((mapped, scale))
    }
}

/// Maps AP-model parameters onto the equivalent NP parameters plus the
/// incident-rate scale factor.
pub fn afterpulse_equivalent_params(
    params: &DetectorParams,
) -> Result<(DetectorParams, f64), ModelError> {
    let model = ResponseModel::new(ModelKind::Ap, *params)?;
    let (mapped, scale) = model.afterpulse_equivalent()?;
    Ok((*mapped.params(), scale))
}

/// Measured nonlinearity `(rate_a + rate_b)/rate_ab - 1`.
pub fn delta_from_rates(rate_a: f64, rate_b: f64, rate_ab: f64) -> Result<f64, ModelError> {
    for r in [rate_a, rate_b, rate_ab] {
        if !r.is_finite() || r < 0.0 {
            return Err(ModelError::InvalidDetectedRate(r));
        }
    }
    if rate_ab == 0.0 {
        return Err(ModelError::ZeroCombinedRate);
    }
    Ok((rate_a + rate_b) / rate_ab - 1.0)
}
