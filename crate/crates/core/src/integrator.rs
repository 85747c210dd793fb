//! Euler-Maruyama simulation of the bridge SDE for an ensemble of paths.
//!
//! Each path starts at `Y_0 = 0` and takes `n` steps
//! `Y_{i+1} = Y_i + b(t_i, Y_i) h + sqrt(h) Z_{i+1}` with `h = T / n`.
//! Paths own their random streams (see [`crate::rng`]), so the ensemble is a
//! pure function of the master seed whatever the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{deterministic_drift, terminal_unchecked, DriftConfig, DriftMode, DriftWorkspace, TerminalPolicy};
use crate::error::{usage, Error, Result};
use crate::quadrature::QuadratureRule;
use crate::rng::{derive_seed, PathRngs};
use crate::scalar::Scalar;
use crate::target::TargetSpec;

/// Uniform grid `t_i = i T / n`, `i = 0..=n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<F> {
    steps: usize,
    horizon: F,
}

impl<F: Scalar> TimeGrid<F> {
    pub fn new(steps: usize, horizon: F) -> Result<Self> {
        if steps == 0 {
            return usage("step count n must be positive");
        }
        if !(horizon > F::zero()) || !horizon.is_finite() {
            return usage(format!("horizon T must be positive, got {horizon}"));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    /// Step size `h = T / n`.
    pub fn step(&self) -> F {
        self.horizon / F::from_usize(self.steps).unwrap()
    }

    pub fn time(&self, i: usize) -> F {
        assert!(i <= self.steps, "grid index {i} beyond n = {}", self.steps);
        if i == self.steps {
            return self.horizon;
        }
        self.horizon * F::from_usize(i).unwrap() / F::from_usize(self.steps).unwrap()
    }

    pub fn times(&self) -> Vec<F> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig<F> {
    pub grid: TimeGrid<F>,
    pub ensemble_size: usize,
    pub master_seed: u64,
    pub drift: DriftConfig<F>,
    pub record_paths: bool,
}

impl<F: Scalar> RunConfig<F> {
    pub fn new(grid: TimeGrid<F>, ensemble_size: usize, master_seed: u64, drift: DriftConfig<F>) -> Self {
        Self { grid, ensemble_size, master_seed, drift, record_paths: false }
    }

    pub fn validate(&self, target: &TargetSpec<F>) -> Result<()> {
        if self.ensemble_size == 0 {
            return usage("ensemble size must be at least 1");
        }
        if self.grid.horizon() != target.horizon() {
            return usage(format!(
                "grid horizon {} differs from target horizon {}",
                self.grid.horizon(),
                target.horizon()
            ));
        }
        self.drift.validate(target)?;
        if self.drift.mode == DriftMode::Stein
            && self.drift.terminal_policy == TerminalPolicy::AnalyticLimit
            && !target.has_gradient()
        {
            return usage(format!(
                "stein mode with terminal_policy = analytic_limit needs a gradient; \
                 `{}` has none (use last_interior)",
                target.name()
            ));
        }
        Ok(())
    }
}

/// Per-path event counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathFlags {
    pub degenerate: u32,
    pub clamped: u32,
}

impl PathFlags {
    pub fn any(&self) -> bool {
        self.degenerate > 0 || self.clamped > 0
    }
}

/// Terminal samples of one run (row-major `K x d`, one row per path).
#[derive(Clone, Debug)]
pub struct Ensemble<F> {
    pub dim: usize,
    pub terminal: Vec<F>,
    /// `K x (n + 1) x d` when `record_paths` was set.
    pub paths: Option<Vec<F>>,
    pub flags: Vec<PathFlags>,
    pub target_name: String,
    pub config: RunConfig<F>,
}

impl<F: Scalar> Ensemble<F> {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn row(&self, k: usize) -> &[F] {
        &self.terminal[k * self.dim..(k + 1) * self.dim]
    }

    /// Values of coordinate `axis` across paths.
    pub fn coordinate(&self, axis: usize) -> Vec<F> {
        self.terminal.iter().skip(axis).step_by(self.dim).copied().collect()
    }

    /// Number of paths with at least one degenerate or clamped drift event.
    pub fn flagged_paths(&self) -> usize {
        self.flags.iter().filter(|f| f.any()).count()
    }

    pub fn total_flags(&self) -> PathFlags {
        self.flags.iter().fold(PathFlags::default(), |acc, f| PathFlags {
            degenerate: acc.degenerate + f.degenerate,
            clamped: acc.clamped + f.clamped,
        })
    }
}

struct PathOutput<F> {
    terminal: Vec<F>,
    path: Option<Vec<F>>,
    flags: PathFlags,
}

struct Simulator<'a, F: Scalar> {
    target: &'a TargetSpec<F>,
    cfg: &'a RunConfig<F>,
    rule: Option<QuadratureRule<F>>,
}

impl<F: Scalar> Simulator<'_, F> {
    fn path(&self, k: usize, ws: &mut DriftWorkspace<F>, noise: &mut Vec<F>) -> Result<PathOutput<F>> {
        let d = self.target.dim();
        let grid = &self.cfg.grid;
        let n = grid.steps();
        let horizon = grid.horizon();
        let h = grid.step();
        let sqrt_h = h.sqrt();
        let dcfg = &self.cfg.drift;
        let monte_carlo = matches!(dcfg.mode, DriftMode::GradientRatio | DriftMode::Stein);
        let analytic_last = dcfg.mode == DriftMode::Stein && dcfg.terminal_policy == TerminalPolicy::AnalyticLimit;

        let mut rngs = PathRngs::new(self.cfg.master_seed, k as u64);
        let mut y = vec![F::zero(); d];
        let mut flags = PathFlags::default();
        let mut path = self.cfg.record_paths.then(|| {
            let mut p = Vec::with_capacity((n + 1) * d);
            p.extend_from_slice(&y);
            p
        });
        noise.resize(dcfg.mc_batch * d, F::zero());

        for i in 0..n {
            let t = grid.time(i);
            assert!(t < horizon, "drift evaluated at t = T");
            let est = if analytic_last && i + 1 == n {
                terminal_unchecked(self.target, dcfg, &y)
            } else if monte_carlo {
                for z in noise.iter_mut() {
                    *z = F::standard_normal(&mut rngs.drift);
                }
                ws.estimate(self.target, dcfg, t, &y, noise)
            } else {
                deterministic_drift(self.target, dcfg, self.rule.as_ref(), t, &y)?
            };
            flags.degenerate += u32::from(est.degenerate);
            flags.clamped += u32::from(est.clamped);
            for (yi, &bi) in y.iter_mut().zip(&est.value) {
                *yi = *yi + bi * h + sqrt_h * F::standard_normal(&mut rngs.driving);
            }
            if let Some(p) = path.as_mut() {
                p.extend_from_slice(&y);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("path {k} diverged to a non-finite value; enable a drift clamp")));
        }
        Ok(PathOutput { terminal: y, path, flags })
    }
}

/// Simulates `cfg.ensemble_size` independent paths on the current rayon pool.
pub fn em_run<F: Scalar>(target: &TargetSpec<F>, cfg: &RunConfig<F>) -> Result<Ensemble<F>> {
    cfg.validate(target)?;
    let rule = match cfg.drift.mode {
        DriftMode::Quadrature => Some(QuadratureRule::gauss_hermite(cfg.drift.quadrature_order)?),
        _ => None,
    };
    let sim = Simulator { target, cfg, rule };
    let outputs: Vec<PathOutput<F>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map_init(|| (DriftWorkspace::new(), Vec::new()), |(ws, noise), k| sim.path(k, ws, noise))
        .collect::<Result<_>>()?;

    let d = target.dim();
    let mut terminal = Vec::with_capacity(cfg.ensemble_size * d);
    let mut flags = Vec::with_capacity(cfg.ensemble_size);
    let mut paths = cfg.record_paths.then(|| Vec::with_capacity(cfg.ensemble_size * (cfg.grid.steps() + 1) * d));
    for out in outputs {
        terminal.extend(out.terminal);
        flags.push(out.flags);
        if let (Some(all), Some(p)) = (paths.as_mut(), out.path) {
            all.extend(p);
        }
    }
    Ok(Ensemble { dim: d, terminal, paths, flags, target_name: target.name().to_string(), config: cfg.clone() })
}

/// [`em_run`] on a dedicated pool of `threads` workers (`0` = rayon default).
pub fn em_run_with_threads<F: Scalar>(
    target: &TargetSpec<F>,
    cfg: &RunConfig<F>,
    threads: usize,
) -> Result<Ensemble<F>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build worker pool: {e}")))?;
    pool.install(|| em_run(target, cfg))
}

/// One `(n, eps)` cell of a sweep.
#[derive(Clone, Debug)]
pub struct SweepCell<F> {
    pub steps: usize,
    pub epsilon: F,
    pub seed: u64,
    pub ensemble: Ensemble<F>,
}

/// Seed of the `(n, eps)` cell, independent of the other cells.
pub fn sweep_cell_seed<F: Scalar>(master_seed: u64, steps: usize, epsilon: F) -> u64 {
    derive_seed(master_seed, &[steps as u64, epsilon.to_f64_lossy().to_bits()])
}

/// Configuration of the `(n, eps)` cell derived from `base`.
pub fn sweep_cell_config<F: Scalar>(base: &RunConfig<F>, steps: usize, epsilon: F) -> Result<RunConfig<F>> {
    let mut cfg = base.clone();
    cfg.grid = TimeGrid::new(steps, base.grid.horizon())?;
    cfg.drift.epsilon = epsilon;
    cfg.master_seed = sweep_cell_seed(base.master_seed, steps, epsilon);
    Ok(cfg)
}

/// Runs the `n_values x eps_values` cross product, handing each finished cell to `sink`.
pub fn em_sweep_with<F: Scalar>(
    target: &TargetSpec<F>,
    base: &RunConfig<F>,
    n_values: &[usize],
    eps_values: &[F],
    mut sink: impl FnMut(SweepCell<F>) -> Result<()>,
) -> Result<()> {
    if n_values.is_empty() || eps_values.is_empty() {
        return usage("sweep needs at least one step count and one epsilon");
    }
    // validate every cell before simulating any
    let mut cells = Vec::new();
    for &n in n_values {
        for &eps in eps_values {
            let cfg = sweep_cell_config(base, n, eps)?;
            cfg.validate(target)?;
            cells.push((n, eps, cfg));
        }
    }
    for (n, eps, cfg) in cells {
        let ensemble = em_run(target, &cfg)?;
        sink(SweepCell { steps: n, epsilon: eps, seed: cfg.master_seed, ensemble })?;
    }
    Ok(())
}

/// Collecting variant of [`em_sweep_with`].
pub fn em_sweep<F: Scalar>(
    target: &TargetSpec<F>,
    base: &RunConfig<F>,
    n_values: &[usize],
    eps_values: &[F],
) -> Result<Vec<SweepCell<F>>> {
    let mut out = Vec::new();
    em_sweep_with(target, base, n_values, eps_values, |cell| {
        out.push(cell);
        Ok(())
    })?;
    Ok(out)
}
