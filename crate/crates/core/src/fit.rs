//! Weighted least-squares fitting of detector response models to measured
//! nonlinearity curves.
//!
//! The optimizer is a damped Gauss-Newton (Levenberg-Marquardt) loop over
//! log-transformed parameters: dark rate and dead times stay positive by
//! construction and the step scale is relative, which matters when the data
//! spans seven decades of rate. Standard errors come from the inverse
//! normal-equations matrix at the optimum and are 1-sigma.

use serde::Serialize;
use thiserror::Error;

use crate::harness::NonlinearityPoint;
use crate::models::{DetectorParams, ModelError, ModelKind, ResponseModel};
use crate::stats::{chi_square, ChiSquareReport, StatsError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0} cannot be fitted directly; its parameters are degenerate with NP (fit NP and map instead)")]
    UnfittableKind(ModelKind),
    #[error("the model cannot reproduce the data from the starting point: {reason}")]
    InvalidInitialGuess { reason: String },
    #[error(
        "fit did not converge within {iterations} iterations; best chi2/dof {:.3}",
        best.chi2_report.chi2_per_dof
    )]
    DidNotConverge {
        iterations: usize,
        best: Box<FitResult>,
    },
    #[error("every candidate model failed to fit")]
    AllModelsFailed {
        failures: Vec<(ModelKind, String)>,
    },
}

/// One fitted parameter in reporting units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FittedParam {
    /// `dark_rate_hz`, `dead_time_np_ns` or `dead_time_p_ns`.
    pub name: &'static str,
    pub value: f64,
    /// 1-sigma standard error, same unit as `value`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model_kind: ModelKind,
    /// Dark rate in Hz, dead times in nanoseconds, in a fixed per-kind order.
    pub params: Vec<FittedParam>,
    /// Covariance of `params`, same order and units.
    pub covariance: Vec<Vec<f64>>,
    pub chi2_report: ChiSquareReport,
    pub converged: bool,
    /// For hybrid kinds whose extra dead time vanished: the pure kind the
    /// fit collapsed to.
    pub degenerate_to: Option<ModelKind>,
}

impl FitResult {
    /// Fitted parameters back in natural units (Hz, seconds).
    pub fn detector_params(&self) -> DetectorParams {
        let layout = ParamLayout::for_kind(self.model_kind);
        let mut p = DetectorParams::default();
        for (slot, fitted) in layout.names.iter().zip(&self.params) {
            let natural = fitted.value / layout.scale_of(slot);
            match *slot {
                DARK => p.dark_rate = natural,
                TAU_NP => p.dead_time_np = natural,
                TAU_P => p.dead_time_p = natural,
                _ => unreachable!(),
            }
        }
        p
    }

    pub fn response_model(&self) -> Result<ResponseModel, ModelError> {
        ResponseModel::new(self.model_kind, self.detector_params())
    }
}

const DARK: &str = "dark_rate_hz";
const TAU_NP: &str = "dead_time_np_ns";
const TAU_P: &str = "dead_time_p_ns";

/// Which DetectorParams fields a kind fits, and their reporting units.
struct ParamLayout {
    names: &'static [&'static str],
}

impl ParamLayout {
    fn for_kind(kind: ModelKind) -> ParamLayout {
        let names: &[&str] = match kind {
            ModelKind::Np => &[DARK, TAU_NP],
            ModelKind::P => &[DARK, TAU_P],
            ModelKind::NpP | ModelKind::PNp => &[DARK, TAU_NP, TAU_P],
            ModelKind::Ap => &[],
        };
        ParamLayout { names }
    }

    fn len(&self) -> usize {
        self.names.len()
    }

    /// Reporting-unit factor: values in seconds are reported in ns.
    fn scale_of(&self, name: &str) -> f64 {
        if name == DARK {
            1.0
        } else {
            1e9
        }
    }

    fn build(&self, natural: &[f64]) -> DetectorParams {
        let mut p = DetectorParams::default();
        for (slot, &v) in self.names.iter().zip(natural) {
            match *slot {
                DARK => p.dark_rate = v,
                TAU_NP => p.dead_time_np = v,
                TAU_P => p.dead_time_p = v,
                _ => unreachable!(),
            }
        }
        p
    }

    fn extract(&self, params: &DetectorParams) -> Vec<f64> {
        self.names
            .iter()
            .map(|slot| match *slot {
                DARK => params.dark_rate,
                TAU_NP => params.dead_time_np,
                TAU_P => params.dead_time_p,
                _ => unreachable!(),
            })
            .collect()
    }
}

/// Canonical point order; makes the fit exactly permutation-invariant.
fn sorted_points(points: &[NonlinearityPoint]) -> Vec<NonlinearityPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.detected_rate_ab
            .total_cmp(&b.detected_rate_ab)
            .then(a.delta_mean.total_cmp(&b.delta_mean))
            .then(a.delta_sem.total_cmp(&b.delta_sem))
    });
    pts
}

/// Weighted residuals at parameters `base[j] * exp(theta[j])`; `None` when
/// the candidate model cannot be evaluated at every point. The search runs
/// in log offsets from the starting point rather than absolute logs: floats
/// are densest around zero, and the sharpest chi-square valleys here are
/// narrower than one ulp of ln(dead time).
fn residuals(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
    theta: &[f64],
) -> Option<Vec<f64>> {
    let natural: Vec<f64> = base.iter().zip(theta).map(|(b, t)| b * t.exp()).collect();
    let model = ResponseModel::new(kind, layout.build(&natural)).ok()?;
    let mut r = Vec::with_capacity(points.len());
    for pt in points {
        let m = model.delta_curve(pt.detected_rate_ab).ok()?;
        let res = (pt.delta_mean - m) / pt.delta_sem;
        if !res.is_finite() {
            return None;
        }
        r.push(res);
    }
    Some(r)
}

fn chi2_of(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Central-difference Jacobian of the residual vector in theta space, with
/// one-sided fallback when a probe point is not evaluable.
fn jacobian(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
    theta: &[f64],
    r0: &[f64],
) -> Option<Vec<Vec<f64>>> {
    let h = 1e-6;
    let n = theta.len();
    let mut columns = Vec::with_capacity(n);
    for j in 0..theta.len() {
        let mut plus = theta.to_vec();
        plus[j] += h;
        let mut minus = theta.to_vec();
        minus[j] -= h;
        let rp = residuals(kind, layout, points, base, &plus);
        let rm = residuals(kind, layout, points, base, &minus);
        let col: Vec<f64> = match (rp, rm) {
            (Some(rp), Some(rm)) => rp
                .iter()
                .zip(&rm)
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect(),
            (Some(rp), None) => rp.iter().zip(r0).map(|(p, c)| (p - c) / h).collect(),
            (None, Some(rm)) => r0.iter().zip(&rm).map(|(c, m)| (c - m) / h).collect(),
            (None, None) => return None,
        };
        columns.push(col);
    }
    // Row-major: J[i][j] = d r_i / d theta_j.
    let m = points.len();
    Some(
        (0..m)
            .map(|i| (0..n).map(|j| columns[j][i]).collect())
            .collect(),
    )
}

/// Five-point central-difference gradient of chi-square in theta space. The
/// plain central rule is useless for the convergence decision: its O(h^2)
/// truncation term exceeds the gradient tolerance in the sharply curved
/// valleys this problem produces, at every workable h.
fn chi2_gradient(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
    theta: &[f64],
) -> Option<Vec<f64>> {
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let mut component = None;
        let mut h = 1e-5;
        for _ in 0..3 {
            let eval = |offset: f64| {
                let mut t = theta.to_vec();
                t[j] += offset;
                residuals(kind, layout, points, base, &t).map(|r| chi2_of(&r))
            };
            if let (Some(m2), Some(m1), Some(p1), Some(p2)) =
                (eval(-2.0 * h), eval(-h), eval(h), eval(2.0 * h))
            {
                component = Some((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h));
                break;
            }
            // A probe fell outside the evaluable domain; tighten the stencil.
            h *= 0.1;
        }
        grad.push(component?);
    }
    Some(grad)
}

fn normal_matrix(j: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = j[0].len();
    let mut a = vec![vec![0.0; n]; n];
    for row in j {
        for p in 0..n {
            for q in 0..n {
                a[p][q] += row[p] * row[q];
            }
        }
    }
    a
}

fn gradient(j: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    let n = j[0].len();
    let mut g = vec![0.0; n];
    for (row, &ri) in j.iter().zip(r) {
        for p in 0..n {
            g[p] += row[p] * ri;
        }
    }
    g
}

/// Gaussian elimination with partial pivoting; small systems only.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Inverse by Gauss-Jordan; `None` when singular.
fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| aug[p][col].abs().total_cmp(&aug[q][col].abs()))?;
        if aug[pivot][col].abs() < 1e-300 {
            return None;
        }
        aug.swap(col, pivot);
        let d = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = aug[row][col];
            if f != 0.0 {
                for k in 0..2 * n {
                    let sub = f * aug[col][k];
                    aug[row][k] -= sub;
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

const MAX_ITERATIONS: usize = 200;
const DARK_FLOOR: f64 = 1e-6;
const TAU_FLOOR: f64 = 1e-12;
/// A dead time below this is not physical for the detectors considered.
const COLLAPSE_NS: f64 = 0.1;
/// Gradient tolerance at the optimum, relative to 1 + chi-square.
const GRAD_TOL: f64 = 1e-6;

/// Closed-form starting point from the curve's two ends: the low-rate end is
/// dark-count dominated (delta ~ R0/rate), the high-rate end dead-time
/// dominated (delta ~ rate*tau/2 / (1 - rate*tau/2)).
fn default_guess(kind: ModelKind, layout: &ParamLayout, points: &[NonlinearityPoint]) -> Vec<f64> {
    let lo = &points[0];
    let hi = &points[points.len() - 1];
    let dark = (lo.delta_mean * lo.detected_rate_ab)
        .clamp(DARK_FLOOR, 0.5 * lo.detected_rate_ab.max(2.0 * DARK_FLOOR));
    let tau_total = (2.0 * hi.delta_mean
        / (hi.detected_rate_ab * (1.0 + hi.delta_mean)))
    .clamp(TAU_FLOOR, 0.9 / hi.detected_rate_ab);
    let mut natural = Vec::with_capacity(layout.len());
    for slot in layout.names {
        natural.push(match *slot {
            DARK => dark,
            // Hybrids start mostly non-paralyzable; the paralyzable share
            // shrinks below if it would put the model peak under the data.
            TAU_NP => {
                if layout.len() == 3 {
                    0.9 * tau_total
                } else {
                    tau_total
                }
            }
            TAU_P => {
                if layout.len() == 3 {
                    0.1 * tau_total
                } else {
                    tau_total
                }
            }
            _ => unreachable!(),
        });
    }
    // A paralyzable dead time caps the detected rate; keep the starting
    // peak above the highest measured rate.
    if let Some(tau_p_idx) = layout.names.iter().position(|s| *s == TAU_P) {
        for _ in 0..80 {
            let model = match ResponseModel::new(kind, layout.build(&natural)) {
                Ok(m) => m,
                Err(_) => break,
            };
            match model.peak() {
                Some((_, peak)) if peak < 1.2 * hi.detected_rate_ab => {
                    natural[tau_p_idx] *= 0.5;
                    if natural[tau_p_idx] < TAU_FLOOR {
                        natural[tau_p_idx] = TAU_FLOOR;
                        break;
                    }
                }
                _ => break,
            }
        }
    }
    natural
}

struct Optimum {
    theta: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Newton refinement on the finite-difference gradient, entered once the
/// chi-square comparisons steering the main loop sink below evaluation
/// rounding while the gradient is still resolvable. Returns whether the
/// gradient criterion holds at the final point.
#[allow(clippy::too_many_arguments)]
fn polish(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
    theta: &mut Vec<f64>,
    r: &mut Vec<f64>,
    chi2: &mut f64,
    normal: &[Vec<f64>],
) -> bool {
    for _ in 0..4 {
        let Some(fd) = chi2_gradient(kind, layout, points, base, theta) else {
            return false;
        };
        let limit = GRAD_TOL * (1.0 + *chi2);
        // Park well inside the tolerance: reconstructing the reported
        // parameters downstream shifts the measured gradient by a few ulps
        // of curvature.
        if fd.iter().all(|v| v.abs() <= 0.1 * limit) {
            return true;
        }
        let within = fd.iter().all(|v| v.abs() <= limit);
        // Newton step on the gradient; the chi-square Hessian is 2 J^T J up
        // to second-order residual terms.
        let rhs: Vec<f64> = fd.iter().map(|v| -0.5 * v).collect();
        let Some(step) = solve(normal.to_vec(), rhs) else {
            return within;
        };
        // The raw gradient misjudges sharply curved minima: at the rounding
        // floor it scales with the curvature, not with the distance left to
        // the optimum. Scale-free substitutes: the chi-square a full Newton
        // step could still recover, and the step itself, which at a rounding
        // floor sits near machine epsilon whatever the curvature.
        let recoverable = -0.5 * fd.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        if recoverable.abs() <= 1e-9 * (1.0 + *chi2) && step.iter().all(|s| s.abs() <= 1e-11) {
            return true;
        }
        if step.iter().any(|s| !s.is_finite() || s.abs() > 1e-4) {
            return within;
        }
        let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        let Some(trial_r) = residuals(kind, layout, points, base, &trial) else {
            return within;
        };
        let trial_chi2 = chi2_of(&trial_r);
        // Rounding-level ties are expected here; genuine ascent means the
        // quadratic model does not describe this neighbourhood.
        if trial_chi2 > *chi2 + 1e-9 * (1.0 + *chi2) {
            return within;
        }
        *theta = trial;
        *r = trial_r;
        *chi2 = trial_chi2;
    }
    chi2_gradient(kind, layout, points, base, theta)
        .is_some_and(|fd| fd.iter().all(|v| v.abs() <= GRAD_TOL * (1.0 + *chi2)))
}

fn minimize(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
) -> Result<Optimum, FitError> {
    let mut theta = vec![0.0; base.len()];
    let mut r = residuals(kind, layout, points, base, &theta).ok_or_else(|| {
        FitError::InvalidInitialGuess {
            reason: format!(
                "model {kind} is undefined at one or more measured rates for the starting parameters"
            ),
        }
    })?;
    let mut chi2 = chi2_of(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        let j = match jacobian(kind, layout, points, base, &theta, &r) {
            Some(j) => j,
            None => break,
        };
        let a = normal_matrix(&j);
        let g = gradient(&j, &r);
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = a.clone();
            for (p, row) in damped.iter_mut().enumerate() {
                let d = if a[p][p] > 0.0 { a[p][p] } else { 1.0 };
                row[p] += lambda * d;
            }
            let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
            let step = match solve(damped, rhs) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
            let trial_r = match residuals(kind, layout, points, base, &trial) {
                Some(tr) => tr,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_chi2 = chi2_of(&trial_r);
            if trial_chi2 <= chi2 {
                let step_small = step.iter().all(|s| s.abs() < 1e-9);
                let drop_small = chi2 - trial_chi2 <= 1e-12 * (1.0 + chi2);
                theta = trial;
                r = trial_r;
                chi2 = trial_chi2;
                lambda = (lambda * 0.1).max(1e-14);
                accepted = true;
                // A tiny accepted step alone can just mean the damping grew
                // large; only a vanished gradient marks a real optimum.
                if step_small && drop_small {
                    converged =
                        polish(kind, layout, points, base, &mut theta, &mut r, &mut chi2, &a);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e15 {
                break;
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // Damping exhausted: either we are at a minimum to rounding
            // precision, or the surface is hostile. Decide by gradient size.
            converged = polish(kind, layout, points, base, &mut theta, &mut r, &mut chi2, &a);
            break;
        }
    }
    Ok(Optimum {
        theta,
        converged,
        iterations,
    })
}

fn assemble_result(
    kind: ModelKind,
    layout: &ParamLayout,
    points: &[NonlinearityPoint],
    base: &[f64],
    opt: &Optimum,
) -> Result<FitResult, FitError> {
    let natural: Vec<f64> = base
        .iter()
        .zip(&opt.theta)
        .map(|(b, t)| b * t.exp())
        .collect();
    let r = residuals(kind, layout, points, base, &opt.theta).expect("optimum is evaluable");
    let j = jacobian(kind, layout, points, base, &opt.theta, &r)
        .expect("jacobian exists at an evaluable optimum");
    let cov_theta = invert(&normal_matrix(&j));

    let n = layout.len();
    let mut covariance = vec![vec![f64::NAN; n]; n];
    let mut std_errors = vec![f64::NAN; n];
    if let Some(ct) = &cov_theta {
        for p in 0..n {
            for q in 0..n {
                // Delta method from theta = ln(param), then reporting units.
                let up = layout.scale_of(layout.names[p]);
                let uq = layout.scale_of(layout.names[q]);
                covariance[p][q] = natural[p] * natural[q] * ct[p][q] * up * uq;
            }
            std_errors[p] = covariance[p][p].max(0.0).sqrt();
        }
    }

    let params: Vec<FittedParam> = layout
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| FittedParam {
            name,
            value: natural[i] * layout.scale_of(name),
            std_error: std_errors[i],
        })
        .collect();

    let model = ResponseModel::new(kind, layout.build(&natural))
        .expect("optimizer keeps parameters in the valid domain");
    let chi2_report = chi_square(points, |rate| model.delta_curve(rate).ok(), n)?;

    let degenerate_to = if n == 3 {
        let vanished = |name: &str| {
            let i = layout.names.iter().position(|s| *s == name).unwrap();
            let threshold = COLLAPSE_NS.max(params[i].std_error);
            params[i].value < threshold
        };
        if vanished(TAU_P) {
            Some(ModelKind::Np)
        } else if vanished(TAU_NP) {
            Some(ModelKind::P)
        } else {
            None
        }
    } else {
        None
    };

    Ok(FitResult {
        model_kind: kind,
        params,
        covariance,
        chi2_report,
        converged: opt.converged,
        degenerate_to,
    })
}

/// Fits one model kind to the measured points. `initial_guess` overrides the
/// closed-form starting heuristics; its irrelevant fields are ignored.
pub fn fit_delta(
    points: &[NonlinearityPoint],
    kind: ModelKind,
    initial_guess: Option<DetectorParams>,
) -> Result<FitResult, FitError> {
    if kind == ModelKind::Ap {
        return Err(FitError::UnfittableKind(kind));
    }
    let layout = ParamLayout::for_kind(kind);
    if points.len() <= layout.len() {
        return Err(StatsError::TooFewPoints {
            points: points.len(),
            params: layout.len(),
        }
        .into());
    }
    for (index, pt) in points.iter().enumerate() {
        if !pt.delta_sem.is_finite() || pt.delta_sem <= 0.0 {
            return Err(StatsError::NeedPositiveSem {
                index,
                sem: pt.delta_sem,
            }
            .into());
        }
        if !pt.detected_rate_ab.is_finite()
            || pt.detected_rate_ab <= 0.0
            || !pt.delta_mean.is_finite()
        {
            return Err(StatsError::NonFinitePoint { index }.into());
        }
    }
    let points = sorted_points(points);

    let base: Vec<f64> = match initial_guess {
        Some(guess) => layout
            .extract(&guess)
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let floor = if layout.names[i] == DARK { DARK_FLOOR } else { TAU_FLOOR };
                v.max(floor)
            })
            .collect(),
        None => default_guess(kind, &layout, &points),
    };

    let opt = minimize(kind, &layout, &points, &base)?;
    let result = assemble_result(kind, &layout, &points, &base, &opt)?;
    if !opt.converged {
        return Err(FitError::DidNotConverge {
            iterations: opt.iterations,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Fits every directly fittable kind (NP, P, NP-P, P-NP). Per-kind failures
/// are collected, not fatal; an error is returned only when nothing fits.
pub fn fit_all_models(points: &[NonlinearityPoint]) -> Result<Vec<FitResult>, FitError> {
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for kind in ModelKind::FITTABLE {
        match fit_delta(points, kind, None) {
            Ok(res) => results.push(res),
            Err(err) => failures.push((kind, err.to_string())),
        }
    }
    if results.is_empty() {
        return Err(FitError::AllModelsFailed { failures });
    }
    Ok(results)
}
