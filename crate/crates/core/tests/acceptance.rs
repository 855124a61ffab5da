//! End-to-end gate for the crate: each test pins one release criterion and
//! prints a single [PASS] line with the measured numbers. Tolerances are
//! deliberate, written next to the assertions they guard.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use twobeam_core::harness::{optimal_allocation, stability_series, sweep, Drift, MeasurementPlan};
use twobeam_core::models::{DetectorParams, ModelKind, ResponseModel};
use twobeam_core::sim::{empirical_rate_std, simulate, SimConfig};
use twobeam_core::stats::{
    ln_gamma_q, relative_allan_deviation, sigma_delta, sigma_delta_allocated, sigma_delta_mean,
    sub_poissonian_sigma_rate,
};
use twobeam_core::{fit_delta, NonlinearityPoint};

const DET1: DetectorParams = DetectorParams {
    dark_rate: 83.0,
    dead_time_np: 36.7e-9,
    dead_time_p: 0.0,
    mean_afterpulses: 0.0,
    twilight_alpha: 0.0,
};

fn sim_config(kind: ModelKind, params: DetectorParams, seed: u64) -> SimConfig {
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

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.log10(), hi.log10());
    10f64.powf(a + (b - a) * rng.random::<f64>())
}

/// Draws a random detector and incident rate, runs the event stream long
/// enough for ~2e4 detections, and scores the rate against the closed form
/// at 4 sigma of shot noise.
fn oracle_draw(kind: ModelKind, rng: &mut ChaCha8Rng, seed: u64) -> bool {
    let tau = log_uniform(rng, 1e-8, 1e-6);
    let dark = rng.random::<f64>() * 1e3;
    let incident = match kind {
        // Past 1/tau the paralyzable response declines; cover both sides.
        ModelKind::P => log_uniform(rng, 1e4, 1.2 / tau),
        _ => log_uniform(rng, 1e4, (0.8 / tau).min(5e6)),
    };
    let params = DetectorParams {
        dark_rate: dark,
        dead_time_np: if kind == ModelKind::Np { tau } else { 0.0 },
        dead_time_p: if kind == ModelKind::P { tau } else { 0.0 },
        ..DetectorParams::default()
    };
    let model = ResponseModel::new(kind, params).unwrap();
    let expected = model.response(incident).unwrap();
    let mut cfg = sim_config(kind, params, seed);
    cfg.incident_rate = incident;
    cfg.duration = (2e4 / expected).clamp(0.02, 10.0);
    let stream = simulate(&cfg).unwrap();
    let rate = stream.timestamps.len() as f64 / cfg.duration;
    // Dead time regularizes the stream, so Poisson spread is an upper bound.
    let sigma = (expected / cfg.duration).sqrt();
    (rate - expected).abs() < 4.0 * sigma
}

#[test]
fn c01_monte_carlo_rates_match_the_closed_forms() {
    let mut scores = Vec::new();
    for kind in [ModelKind::Np, ModelKind::P] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC101 + kind as u64);
        let draws: usize = 100;
        let hits = (0..draws)
            .filter(|&i| oracle_draw(kind, &mut rng, 0xC101_0000 + i as u64))
            .count();
        assert!(
            hits * 100 >= draws * 95,
            "{kind:?}: only {hits}/{draws} draws within 4 sigma"
        );
        scores.push((kind, hits, draws));
    }
    println!(
        "[PASS] 01 oracle equivalence: {:?} {}/{} and {:?} {}/{} draws within 4 sigma",
        scores[0].0, scores[0].1, scores[0].2, scores[1].0, scores[1].1, scores[1].2
    );
}

#[test]
fn c02_no_simulated_stream_violates_the_dead_time_floor() {
    let mut checked_gaps = 0usize;
    let mut stress = Vec::new();

    let mut np = sim_config(ModelKind::Np, DetectorParams::default(), 0xC201);
    np.params.dead_time_np = 100e-9;
    np.incident_rate = 3e7;
    np.duration = 0.05;
    stress.push(np);

    let mut ap = sim_config(ModelKind::Np, DetectorParams::default(), 0xC202);
    ap.params.dead_time_np = 100e-9;
    ap.params.mean_afterpulses = 0.4;
    ap.afterpulse_delay_tau = 130e-9;
    ap.incident_rate = 5e6;
    ap.duration = 0.2;
    stress.push(ap);

    let mut p = sim_config(ModelKind::P, DetectorParams::default(), 0xC203);
    p.params.dead_time_p = 50e-9;
    p.incident_rate = 4e7;
    p.duration = 0.05;
    stress.push(p);

    let mut dark_heavy = sim_config(ModelKind::Np, DetectorParams::default(), 0xC204);
    dark_heavy.params.dead_time_np = 200e-9;
    dark_heavy.params.dark_rate = 1e6;
    dark_heavy.incident_rate = 1e6;
    dark_heavy.duration = 0.5;
    stress.push(dark_heavy);

    for cfg in &stress {
        let tau = cfg.params.dead_time_np.max(cfg.params.dead_time_p);
        let stream = simulate(cfg).unwrap();
        assert!(stream.timestamps.len() > 10_000, "stress case too quiet");
        for w in stream.timestamps.windows(2) {
            // Exact comparison: the floor is a hard guarantee, not a tolerance.
            assert!(w[1] - w[0] >= tau, "gap {} below {tau}", w[1] - w[0]);
        }
        checked_gaps += stream.timestamps.len() - 1;
    }
    println!("[PASS] 02 dead-time floor: 0 violations in {checked_gaps} inter-detection gaps");
}

#[test]
fn c03_afterpulsing_is_degenerate_with_a_remapped_plain_detector() {
    let params = DetectorParams {
        mean_afterpulses: 0.1,
        twilight_alpha: 12e-9,
        ..DET1
    };
    let ap = ResponseModel::new(ModelKind::Ap, params).unwrap();
    let (np, _) = ap.afterpulse_equivalent().unwrap();

    let floor = ap.response(0.0).unwrap();
    let sup = ap.detected_rate_supremum();
    let (lo, hi) = ((floor * 1.02).ln(), (sup * 0.98).ln());
    let mut worst = 0.0f64;
    for i in 0..50 {
        let y = (lo + (hi - lo) * i as f64 / 49.0).exp();
        let delta_ap = ap.delta_curve(y).unwrap();
        let delta_np = np.delta_curve(y).unwrap();
        let rel = (delta_ap - delta_np).abs() / delta_ap.abs();
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-12, "worst pointwise split {worst:.3e}");
    println!("[PASS] 03 afterpulse degeneracy: 50-point grid agrees to {worst:.1e} relative (limit 1e-12)");
}

#[test]
fn c04_nonlinearity_curve_has_the_right_asymptotes() {
    let model = ResponseModel::new(ModelKind::Np, DET1).unwrap();
    let dark = DET1.dark_rate;

    // Dark-dominated side: the product delta * rate pins the dark rate.
    let mut worst_low = 0.0f64;
    for i in 0..40 {
        let incident = dark / 100.0 * 10f64.powf(2.0 * i as f64 / 39.0);
        let y = model.response(incident).unwrap();
        let product = model.delta_curve(y).unwrap() * y;
        worst_low = worst_low.max((product - dark).abs() / dark);
    }
    assert!(worst_low <= 0.01, "delta * rate off dark rate by {worst_low:.4}");

    // Saturation side: delta approaches unity as the rate nears 1/tau.
    let near_sat = 0.999 / DET1.dead_time_np;
    let delta_sat = model.delta_curve(near_sat).unwrap();
    assert!(
        (delta_sat - 1.0).abs() <= 0.02,
        "delta at 0.999/tau is {delta_sat}"
    );
    println!(
        "[PASS] 04 asymptotes: low-rate product within {:.2e} of the dark rate, delta({:.3e} Hz) = {delta_sat:.4}",
        worst_low, near_sat
    );
}

#[test]
fn c05_uncertainty_formulas_match_the_monte_carlo() {
    // Per-cycle nonlinearity spread over 1000 cycles of a linear detector.
    let (rate, time) = (2e4, 0.1);
    let plan = MeasurementPlan::balanced(time, 1, vec![rate]).unwrap();
    let base = sim_config(ModelKind::Np, DetectorParams::default(), 0xC501);
    let mut deltas = Vec::with_capacity(1000);
    for cycle in 0..1000u64 {
        let records =
            twobeam_core::harness::run_cycle(rate, 0.5, &plan, &base, cycle).unwrap();
        let [a, b, ab] = records.map(|r| r.detected_rate());
        deltas.push(twobeam_core::models::delta_from_rates(a, b, ab).unwrap());
    }
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let predicted = sigma_delta(0.0, rate, time).unwrap();
    let delta_err = (std - predicted).abs() / predicted;
    assert!(delta_err < 0.15, "sigma(delta): MC {std} vs formula {predicted}");

    // Sub-Poissonian count spread over 1000 independent streams.
    let mut cfg = sim_config(ModelKind::Np, DetectorParams::default(), 0xC502);
    cfg.params.dead_time_np = 517e-9;
    cfg.incident_rate = 1e6;
    cfg.duration = 0.1;
    let (mean_rate, rate_std) = empirical_rate_std(&cfg, 1000).unwrap();
    let rate_predicted =
        sub_poissonian_sigma_rate(mean_rate, cfg.params.dead_time_np, cfg.duration).unwrap();
    let rate_err = (rate_std - rate_predicted).abs() / rate_predicted;
    assert!(
        rate_err < 0.15,
        "sigma(rate): MC {rate_std} vs formula {rate_predicted}"
    );

    // Reference bound: 200 kHz, 20 s, 30 cycles comes out at 1.29e-4.
    let sem = sigma_delta_mean(0.0, 2e5, 20.0, 30).unwrap();
    assert!(
        (sem - 1.29e-4).abs() <= 0.005e-4,
        "bound {sem:.6e} does not round to 1.29e-4"
    );
    println!(
        "[PASS] 05 uncertainty formulas: sigma(delta) within {:.1}%, sigma(rate) within {:.1}%, bound {sem:.3e}",
        100.0 * delta_err,
        100.0 * rate_err
    );
}

#[test]
fn c06_time_allocation_minimizes_the_predicted_variance() {
    let total = 1.0;
    let delta = 0.0;
    let (t_a, t_b, t_ab) = optimal_allocation(delta, total).unwrap();
    assert!((t_a - 0.29289321881345248).abs() < 1e-15);
    assert!((t_b - 0.29289321881345248).abs() < 1e-15);
    assert!((t_ab - 0.41421356237309505).abs() < 1e-15);

    let mut best = (f64::INFINITY, 0.0);
    for i in 1..5000 {
        let u = total * i as f64 / 5000.0;
        let t_single = (total - u) / 2.0;
        let sigma = sigma_delta_allocated(delta, 1e5, t_single, t_single, u).unwrap();
        if sigma < best.0 {
            best = (sigma, u);
        }
    }
    let off = (best.1 - t_ab).abs() / total;
    assert!(off < 0.01, "scan minimizer {} vs closed form {t_ab}", best.1);
    println!(
        "[PASS] 06 optimal allocation: scan minimizer within {:.2}% of closed form, split 0.2929:0.2929:0.4142",
        100.0 * off
    );
}

/// Synthetic measurement campaign: the true curve plus Gaussian noise at the
/// shot-noise standard error each point would carry.
fn synthetic_points(
    model: &ResponseModel,
    grid: &[f64],
    time: f64,
    reps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NonlinearityPoint> {
    grid.iter()
        .map(|&y| {
            let delta = model.delta_curve(y).unwrap();
            let sem = sigma_delta_mean(delta, y, time, reps).unwrap();
            let noise: f64 = StandardNormal.sample(rng);
            NonlinearityPoint {
                detected_rate_ab: y,
                delta_mean: delta + sem * noise,
                delta_sem: sem,
                repetitions: reps,
            }
        })
        .collect()
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[test]
fn c07_fits_recover_the_true_parameters_within_errors() {
    let model = ResponseModel::new(ModelKind::Np, DET1).unwrap();
    let grid = log_grid(2e2, 5e6, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC701);
    let trials = 100;
    let mut recovered = 0;
    for _ in 0..trials {
        let points = synthetic_points(&model, &grid, 20.0, 30, &mut rng);
        let fit = fit_delta(&points, ModelKind::Np, None).unwrap();
        assert!(fit.converged);
        let dark = &fit.params[0];
        let tau = &fit.params[1];
        assert_eq!(dark.name, "dark_rate_hz");
        assert_eq!(tau.name, "dead_time_np_ns");
        let dark_ok = (dark.value - 83.0).abs() <= 3.0 * dark.std_error;
        let tau_ok = (tau.value - 36.7).abs() <= 3.0 * tau.std_error;
        if dark_ok && tau_ok {
            recovered += 1;
        }
    }
    assert!(
        recovered >= 95,
        "only {recovered}/{trials} trials recovered both parameters within 3 standard errors"
    );

    // Hybrid kinds fitted to the same data shed their paralyzable stage.
    let points = synthetic_points(&model, &grid, 20.0, 30, &mut rng);
    for kind in [ModelKind::NpP, ModelKind::PNp] {
        let fit = fit_delta(&points, kind, None).unwrap();
        assert_eq!(
            fit.degenerate_to,
            Some(ModelKind::Np),
            "{kind:?} kept its paralyzable dead time"
        );
    }
    println!(
        "[PASS] 07 fit recovery: {recovered}/{trials} trials within 3 standard errors; hybrids collapse to NP"
    );
}

#[test]
fn c08_chi_square_is_calibrated_and_its_tail_stays_finite() {
    let model = ResponseModel::new(ModelKind::Np, DET1).unwrap();
    // 202 points leave 200 degrees of freedom, where the +-30% band around
    // chi2/dof = 1 holds all but ~3 per thousand of well-specified fits.
    let grid = log_grid(2e2, 5e6, 202);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC801);
    let trials = 100;
    let mut banded = 0;
    for _ in 0..trials {
        let points = synthetic_points(&model, &grid, 20.0, 30, &mut rng);
        let fit = fit_delta(&points, ModelKind::Np, None).unwrap();
        assert_eq!(fit.chi2_report.dof, 200);
        let per_dof = fit.chi2_report.chi2_per_dof;
        if (0.7..=1.3).contains(&per_dof) {
            banded += 1;
        }
    }
    assert!(banded >= 95, "chi2/dof in [0.7, 1.3] in only {banded}/{trials} trials");

    // Tail behavior at 38 degrees of freedom: log10(p) stays finite and
    // strictly falls out to chi2/dof = 1000.
    let dof = 38.0;
    let mut prev = f64::INFINITY;
    for per_dof in [1.0, 2.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0] {
        let chi2 = per_dof * dof;
        let log10_p = ln_gamma_q(dof / 2.0, chi2 / 2.0) / std::f64::consts::LN_10;
        assert!(log10_p.is_finite(), "log10(p) diverged at chi2/dof = {per_dof}");
        assert!(log10_p < prev, "tail not monotone at chi2/dof = {per_dof}");
        prev = log10_p;
    }
    let extreme = ln_gamma_q(19.0, 19000.0) / std::f64::consts::LN_10;
    assert!((extreme - (-8190.3835207546962)).abs() <= 1e-12 * 8190.0);
    println!(
        "[PASS] 08 chi-square calibration: {banded}/{trials} in band; log10(p) finite down to {extreme:.1}"
    );
}

#[test]
fn c09_allan_deviation_slope_is_minus_one_half_for_white_noise() {
    let counts = stability_series(1e5, 0.01, 1 << 14, Drift::None, 0xC901).unwrap();
    let factors: Vec<usize> = (0..8).map(|k| 1 << k).collect();
    let series = relative_allan_deviation(&counts, 0.01, &factors).unwrap();
    assert!(series.omitted.is_empty());
    let span = series.integration_times.last().unwrap() / series.integration_times[0];
    assert!(span >= 100.0, "need two decades of integration time, got {span}");

    let xs: Vec<f64> = series.integration_times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = series.relative_deviation.iter().map(|s| s.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = cov / var;
    assert!((slope + 0.5).abs() <= 0.05, "slope {slope}");
    println!("[PASS] 09 averaging law: Allan slope {slope:.3} over {span:.0}x of integration time");
}

#[test]
fn c10_simulated_sweep_places_the_nonlinearity_minimum_correctly() {
    let base = sim_config(ModelKind::Np, DET1, 0xC0A1);
    let grid = log_grid(1e3, 4e6, 14);
    let plan = MeasurementPlan::balanced(1.0, 8, grid).unwrap();
    let points = sweep(&plan, 0.5, &base).unwrap();

    let fit = fit_delta(&points, ModelKind::Np, None).unwrap();
    assert!(fit.converged);
    let fitted = ResponseModel::new(ModelKind::Np, fit.detector_params()).unwrap();

    let mut min_rate = 0.0;
    let mut min_delta = f64::INFINITY;
    for &y in &log_grid(1e3, 1e7, 2000) {
        let d = fitted.delta_curve(y).unwrap();
        if d < min_delta {
            min_delta = d;
            min_rate = y;
        }
    }
    assert!(
        (1e4..=1e5).contains(&min_rate),
        "minimum at {min_rate:.3e} Hz, outside [1e4, 1e5]"
    );
    assert!(
        (1e-3..=1e-2).contains(&min_delta),
        "minimum value {min_delta:.3e}, outside [1e-3, 1e-2]"
    );
    println!(
        "[PASS] 10 V-shape: sweep minimum at {min_rate:.2e} Hz with delta {min_delta:.2e}"
    );
}
