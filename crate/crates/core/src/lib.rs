//! Schrödinger–Föllmer diffusion sampler.
//!
//! A target density `rho` on `R^d` is transported from the origin at time 0
//! to `rho` at time `T` by the SDE `dY = b(t, Y) dt + dW`, with
//! `b(t, y) = grad log E[phi(y + sqrt(T - t) Z)]` and `phi = rho / N(0, T I)`.
//! This crate simulates that SDE with Euler–Maruyama, estimating the drift
//! by Monte Carlo, by Gauss–Hermite quadrature, or in closed form for the
//! catalog targets, and measures how far the output is from `rho`.
//!
//! Everything is generic over [`Scalar`] (`f64` or `f32`); the `*64`
//! aliases below fix the common `f64` case.

// `!(x > 0)` is how NaN is rejected alongside the range check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod drift;
pub mod error;
pub mod integrator;
pub mod io;
pub mod logspace;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod target;

pub use diagnostics::{
    bootstrap_w1_se, compute_metrics, fit_convergence, moment_errors, probe_a2, probe_a4, tv_histogram, w1, w1_1d,
    Binning, ConditionProbeResult, ConvergenceFit, MetricsOptions, MetricsReport, ProbeRegion, RunEcho,
};
pub use drift::{
    drift_bound_epsilon, drift_exact, drift_exact_gaussian, drift_exact_mixture, drift_mc, drift_terminal, DriftConfig,
    DriftEstimate, DriftMode, DriftWorkspace, TerminalPolicy,
};
pub use error::{Error, Result};
pub use integrator::{em_run, em_run_with_threads, em_sweep, Ensemble, PathFlags, RunConfig, SweepCell, TimeGrid};
pub use quadrature::{gh_expectation, quadrature_drift, quadrature_drift_epsilon, QuadratureRule};
pub use scalar::Scalar;
pub use target::{
    log_phi, log_phi_epsilon, make_gaussian_mixture_target, make_gaussian_target, make_triangular_kde_target, Catalog,
    EpsilonTarget, GaussianParams, MixtureComponent, Support, TargetSpec, TriangularKdeParams,
};

pub type Target64 = TargetSpec<f64>;
pub type EpsilonTarget64 = EpsilonTarget<f64>;
pub type DriftConfig64 = DriftConfig<f64>;
pub type RunConfig64 = RunConfig<f64>;
pub type Ensemble64 = Ensemble<f64>;
pub type MetricsReport64 = MetricsReport<f64>;

pub type Target32 = TargetSpec<f32>;
pub type RunConfig32 = RunConfig<f32>;
pub type Ensemble32 = Ensemble<f32>;
