//! Absolute nonlinearity measurement of photon-counting detectors with a
//! single superposed pair of beams.
//!
//! A detector is linear when the rate measured with both beams open equals
//! the sum of the rates with each beam alone. This crate provides the pieces
//! to measure and model the deviation:
//!
//! * [`models`]: closed-form detector responses (non-paralyzable,
//!   paralyzable, their hybrids, afterpulsing), inverses, and the expected
//!   nonlinearity curve;
//! * [`sim`]: an event-level Monte Carlo of the same detectors, used as an
//!   independent oracle for every closed form;
//! * [`harness`]: three-phase measurement cycles, sweeps over operating
//!   points, and source-drift stability series;
//! * [`stats`]: counting-statistics uncertainty, time budgeting, chi-square
//!   goodness of fit, and Allan deviation;
//! * [`fit`]: weighted least-squares model fitting with parameter
//!   uncertainties and hybrid-collapse detection.
//!
//! Everything stochastic runs on seeded, splittable generators: a result is
//! reproducible bit for bit from its configuration and seed, with or without
//! the `parallel` feature.

mod exec;
pub mod fit;
pub mod harness;
pub mod models;
pub mod seeds;
pub mod sim;
pub mod stats;

pub use fit::{fit_all_models, fit_delta, FitError, FitResult, FittedParam};
pub use harness::{
    estimate_point, optimal_allocation, run_cycle, stability_series, sweep, sweep_records, Drift,
    HarnessError, MeasurementPlan, MeasurementRecord, NonlinearityPoint, Phase,
};
pub use models::{
    afterpulse_equivalent_params, delta_from_rates, DetectorParams, ModelError, ModelKind,
    ResponseModel,
};
pub use sim::{
    apply_detector, empirical_rate_std, generate_arrivals, poisson_bin_counts, simulate,
    simulate_counts, simulate_detected_rate, EventStream, SimConfig, SimError,
};
pub use stats::{
    chi_square, gamma_q, ln_gamma_q, relative_allan_deviation, sigma_delta, sigma_delta_allocated,
    sigma_delta_approx, sigma_delta_mean, sub_poissonian_sigma_rate, AllanSeries, ChiSquareReport,
    StatsError, UncertaintyBound,
};
