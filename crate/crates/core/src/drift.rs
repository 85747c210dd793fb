//! The Schrodinger-Follmer drift `b(t, y) = grad log h(t, y)`.
//!
//! With `u_j = y + sqrt(T - t) z_j` and `w_j proportional to phi(u_j)`:
//!
//! * gradient ratio: `b ~ sum_j w_j grad log phi(u_j) / sum_j w_j`
//! * Stein: `b ~ sum_j w_j z_j / (sqrt(T - t) sum_j w_j)`, no gradient needed
//!
//! Weights are formed as `exp(log phi(u_j) - max_k log phi(u_k))`, so any
//! additive constant on `log rho` cancels. The regularized drift
//! `b_eps = (1 - eps) grad h / ((1 - eps) h + eps)` is the plain drift times
//! a logistic factor evaluated in log-space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, usage, Error, Result};
use crate::logspace::{log_add_exp, sigmoid};
use crate::quadrature::{gh_expectation, piecewise_expectation, QuadratureRule};
use crate::scalar::{norm, norm_sq, Scalar};
use crate::target::{Catalog, GaussianParams, MixtureComponent, TargetSpec};

/// Safety clamp applied when no boundedness guarantee is available.
pub const DEFAULT_CLAMP: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    GradientRatio,
    Stein,
    /// Closed form for catalog Gaussians and variance-`T` Gaussian mixtures.
    ExactGaussian,
    /// Fixed-order Gauss-Hermite oracle (d <= 2).
    Quadrature,
}

/// How the last Euler step treats the drift in Stein mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalPolicy {
    /// Use the `t -> T` limit `grad phi / phi` (needs a gradient).
    AnalyticLimit,
    /// Keep the Monte Carlo estimate at `t_{n-1}`.
    LastInterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig<F> {
    pub mode: DriftMode,
    pub mc_batch: usize,
    pub epsilon: F,
    pub terminal_policy: TerminalPolicy,
    /// Maximum drift norm; `None` disables clamping.
    pub clamp: Option<F>,
    /// Rule order for [`DriftMode::Quadrature`].
    pub quadrature_order: usize,
}

impl<F: Scalar> DriftConfig<F> {
    pub fn new(mode: DriftMode, mc_batch: usize) -> Self {
        Self {
            mode,
            mc_batch,
            epsilon: F::zero(),
            terminal_policy: TerminalPolicy::AnalyticLimit,
            clamp: None,
            quadrature_order: 64,
        }
    }

    pub fn with_epsilon(mut self, epsilon: F) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_clamp(mut self, clamp: Option<F>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_terminal_policy(mut self, policy: TerminalPolicy) -> Self {
        self.terminal_policy = policy;
        self
    }

    /// Checks the configuration on its own and against `target`.
    pub fn validate(&self, target: &TargetSpec<F>) -> Result<()> {
        if self.mc_batch == 0 {
            return usage("mc_batch must be at least 1");
        }
        if !(self.epsilon >= F::zero() && self.epsilon < F::one()) {
            return usage(format!("epsilon must lie in [0, 1), got {}", self.epsilon));
        }
        if let Some(c) = self.clamp {
            if !(c > F::zero()) {
                return usage(format!("clamp must be positive, got {c}"));
            }
        }
        if self.epsilon > F::zero() && !target.is_normalized() {
            return usage(format!("epsilon > 0 needs a normalized target; `{}` is unnormalized", target.name()));
        }
        match self.mode {
            DriftMode::GradientRatio if !target.has_gradient() => {
                usage(format!("gradient_ratio mode needs grad log rho for `{}`", target.name()))
            }
            DriftMode::ExactGaussian
                if !matches!(target.catalog(), Catalog::Gaussian(_) | Catalog::GaussianMixture(_)) =>
            {
                usage(format!("exact_gaussian mode is unavailable for `{}`", target.name()))
            }
            DriftMode::Quadrature if target.dim() > 2 => {
                Err(Error::Unsupported(format!("quadrature drift supports d <= 2, got {}", target.dim())))
            }
            DriftMode::Quadrature if self.quadrature_order == 0 => usage("quadrature_order must be positive"),
            _ => Ok(()),
        }
    }
}

/// Clamp used when the configuration leaves it unset: off for `eps > 0` and
/// for targets with certified Lipschitz `log phi`, `1e4` otherwise.
pub fn default_clamp<F: Scalar>(target: &TargetSpec<F>, epsilon: F) -> Option<F> {
    if epsilon > F::zero() || target.a2_certified() {
        None
    } else {
        Some(F::lit(DEFAULT_CLAMP))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate<F> {
    pub value: Vec<F>,
    /// Log of the estimated `h` (or `(1 - eps) h + eps`), offset included.
    pub log_denominator: F,
    /// `(sum w)^2 / (M sum w^2)`; zero when every weight vanished.
    pub ess_fraction: F,
    /// Every `phi(u_j)` was zero and `eps = 0`; the value is then zero.
    pub degenerate: bool,
    /// Delta-method standard error of each coordinate of `value`.
    pub std_error: Vec<F>,
    pub clamped: bool,
}

impl<F: Scalar> DriftEstimate<F> {
    fn zero(dim: usize, log_denominator: F, degenerate: bool) -> Self {
        Self {
            value: vec![F::zero(); dim],
            log_denominator,
            ess_fraction: F::zero(),
            degenerate,
            std_error: vec![F::zero(); dim],
            clamped: false,
        }
    }

    fn exact(value: Vec<F>, log_denominator: F) -> Self {
        let dim = value.len();
        Self {
            value,
            log_denominator,
            ess_fraction: F::one(),
            degenerate: false,
            std_error: vec![F::zero(); dim],
            clamped: false,
        }
    }

    fn apply_clamp(&mut self, clamp: Option<F>) {
        if let Some(c) = clamp {
            let n = norm(&self.value);
            if n > c {
                let scale = c / n;
                self.value.iter_mut().for_each(|v| *v = *v * scale);
                self.clamped = true;
            }
        }
    }
}

/// Scratch buffers reused across drift evaluations.
#[derive(Debug, Default)]
pub struct DriftWorkspace<F> {
    u: Vec<F>,
    score: Vec<F>,
    // per coordinate: sum w s, sum w^2 s, sum w^2 s^2
    num: Vec<F>,
    m1: Vec<F>,
    m2: Vec<F>,
}

impl<F: Scalar> DriftWorkspace<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Monte Carlo drift; `noise` holds `M` standard-normal `d`-vectors, row-major.
    /// Assumes `cfg` was validated against `target`.
    ///
    /// One pass over the batch: weights are `exp(log phi - running max)`, and
    /// the accumulators are rescaled whenever the max grows.
    pub fn estimate(
        &mut self,
        target: &TargetSpec<F>,
        cfg: &DriftConfig<F>,
        t: F,
        y: &[F],
        noise: &[F],
    ) -> DriftEstimate<F> {
        let d = y.len();
        let m = noise.len() / d;
        let s = (target.horizon() - t).sqrt();
        let inv_s = s.recip();
        let stein = cfg.mode == DriftMode::Stein;
        let bounded = target.phi_bounded();

        let zero = F::zero();
        for buf in [&mut self.u, &mut self.score, &mut self.num, &mut self.m1, &mut self.m2] {
            buf.clear();
            buf.resize(d, zero);
        }
        // bounded phi is used as is, so its reference level stays at 0
        let mut max = if bounded.is_some() { zero } else { F::neg_infinity() };
        let mut sum_w = zero;
        let mut sum_w2 = zero;
        for z in noise.chunks_exact(d) {
            for k in 0..d {
                self.u[k] = y[k] + s * z[k];
            }
            let w = match bounded {
                Some(phi) => phi(&self.u),
                None => {
                    let l = target.log_phi_unshifted(&self.u);
                    debug_assert!(!l.is_nan() && l != F::infinity(), "log phi must be finite or -inf");
                    if l == F::neg_infinity() {
                        continue;
                    }
                    if l > max {
                        if sum_w > zero {
                            let r = (max - l).exp();
                            let r2 = r * r;
                            sum_w = sum_w * r;
                            sum_w2 = sum_w2 * r2;
                            for k in 0..d {
                                self.num[k] = self.num[k] * r;
                                self.m1[k] = self.m1[k] * r2;
                                self.m2[k] = self.m2[k] * r2;
                            }
                        }
                        max = l;
                    }
                    (l - max).exp()
                }
            };
            if w == zero {
                continue;
            }
            if stein {
                for (sc, &zk) in self.score.iter_mut().zip(z) {
                    *sc = zk * inv_s;
                }
            } else {
                target.grad_log_phi_into(&self.u, &mut self.score);
            }
            let w2 = w * w;
            sum_w = sum_w + w;
            sum_w2 = sum_w2 + w2;
            for k in 0..d {
                let sc = self.score[k];
                self.num[k] = self.num[k] + w * sc;
                self.m1[k] = self.m1[k] + w2 * sc;
                self.m2[k] = self.m2[k] + w2 * sc * sc;
            }
        }

        let eps = cfg.epsilon;
        if sum_w == zero {
            let mut est = if eps > zero {
                DriftEstimate::zero(d, eps.ln(), false)
            } else {
                DriftEstimate::zero(d, F::neg_infinity(), true)
            };
            est.apply_clamp(cfg.clamp);
            return est;
        }

        let mut value: Vec<F> = self.num.iter().map(|&nk| nk / sum_w).collect();
        // delta method: sum_j w_j^2 (s_j - v)^2 / (sum_j w_j)^2
        let mut std_error: Vec<F> = (0..d)
            .map(|k| {
                let v = value[k];
                let ss = self.m2[k] - F::lit(2.0) * v * self.m1[k] + v * v * sum_w2;
                ss.max(zero).sqrt() / sum_w
            })
            .collect();

        let mf = F::from_usize(m).unwrap();
        let log_b = max + (sum_w / mf).ln();
        let log_denominator = if eps > zero {
            let log_keep = (-eps).ln_1p();
            let factor = sigmoid(log_keep + log_b - eps.ln());
            value.iter_mut().for_each(|v| *v = *v * factor);
            std_error.iter_mut().for_each(|v| *v = *v * factor);
            log_add_exp(log_keep + log_b, eps.ln())
        } else {
            log_b + target.log_offset()
        };
        let mut est = DriftEstimate {
            value,
            log_denominator,
            ess_fraction: sum_w * sum_w / (mf * sum_w2),
            degenerate: false,
            std_error,
            clamped: false,
        };
        est.apply_clamp(cfg.clamp);
        est
    }
}

/// Monte Carlo estimate of `b(t, y)` (or `b_eps`) from caller-supplied noise.
pub fn drift_mc<F: Scalar>(
    target: &TargetSpec<F>,
    cfg: &DriftConfig<F>,
    t: F,
    y: &[F],
    noise: &[F],
) -> Result<DriftEstimate<F>> {
    cfg.validate(target)?;
    check_dim(target.dim(), y.len())?;
    if !matches!(cfg.mode, DriftMode::GradientRatio | DriftMode::Stein) {
        return usage("drift_mc needs gradient_ratio or stein mode");
    }
    let horizon = target.horizon();
    if !(t >= F::zero() && t < horizon) {
        return usage(format!("drift_mc needs 0 <= t < T (got t = {t}, T = {horizon}); use drift_terminal at t = T"));
    }
    let expected = cfg.mc_batch * target.dim();
    if noise.len() != expected {
        return usage(format!(
            "noise must hold {} standard-normal vectors ({} values), got {} values",
            cfg.mc_batch,
            expected,
            noise.len()
        ));
    }
    Ok(DriftWorkspace::new().estimate(target, cfg, t, y, noise))
}

/// The terminal drift `b(T, y) = grad phi(y) / phi(y)`, or
/// `(1 - eps) grad phi / ((1 - eps) phi + eps)` when `eps > 0`.
pub fn drift_terminal<F: Scalar>(target: &TargetSpec<F>, cfg: &DriftConfig<F>, y: &[F]) -> Result<DriftEstimate<F>> {
    cfg.validate(target)?;
    check_dim(target.dim(), y.len())?;
    if cfg.terminal_policy != TerminalPolicy::AnalyticLimit {
        return usage("drift_terminal needs terminal_policy = analytic_limit");
    }
    if !target.has_gradient() {
        return usage(format!("terminal drift needs grad log rho; `{}` has none", target.name()));
    }
    Ok(terminal_unchecked(target, cfg, y))
}

pub(crate) fn terminal_unchecked<F: Scalar>(target: &TargetSpec<F>, cfg: &DriftConfig<F>, y: &[F]) -> DriftEstimate<F> {
    let d = y.len();
    let eps = cfg.epsilon;
    let l = target.log_phi_unshifted(y);
    let mut est = if l == F::neg_infinity() {
        if eps > F::zero() {
            DriftEstimate::zero(d, eps.ln(), false)
        } else {
            DriftEstimate::zero(d, F::neg_infinity(), true)
        }
    } else {
        let mut g = vec![F::zero(); d];
        target.grad_log_phi_into(y, &mut g);
        if eps > F::zero() {
            let log_keep = (-eps).ln_1p();
            let factor = sigmoid(log_keep + l - eps.ln());
            g.iter_mut().for_each(|v| *v = *v * factor);
            DriftEstimate::exact(g, log_add_exp(log_keep + l, eps.ln()))
        } else {
            DriftEstimate::exact(g, l + target.log_offset())
        }
    };
    est.apply_clamp(cfg.clamp);
    est
}

/// Closed-form drift for `rho = N(m, sigma^2 I)`:
/// `(m - (1 - sigma^2/T) y) / (sigma^2 + (1 - sigma^2/T)(T - t))`.
pub fn drift_exact_gaussian<F: Scalar>(params: &GaussianParams<F>, horizon: F, t: F, y: &[F]) -> Result<Vec<F>> {
    check_dim(params.mean.len(), y.len())?;
    if !(t >= F::zero() && t <= horizon) {
        return usage(format!("exact drift needs 0 <= t <= T, got t = {t}"));
    }
    let var = params.variance;
    let kappa = F::one() - var / horizon;
    let denom = var + kappa * (horizon - t);
    Ok(params.mean.iter().zip(y).map(|(&m, &yi)| (m - kappa * yi) / denom).collect())
}

/// Closed-form drift for a mixture of `N(m_k, T I)`: softmax-weighted `m_k / T`
/// with logits `log w_k + m_k.y / T - |m_k|^2 t / (2 T^2)`.
pub fn drift_exact_mixture<F: Scalar>(components: &[MixtureComponent<F>], horizon: F, t: F, y: &[F]) -> Result<Vec<F>> {
    if components.is_empty() {
        return usage("mixture needs at least one component");
    }
    let (logits, _) = mixture_logits(components, horizon, t, y)?;
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out = vec![F::zero(); y.len()];
    let mut total = F::zero();
    for (&l, c) in logits.iter().zip(components) {
        let w = (l - max).exp();
        total = total + w;
        for (o, &m) in out.iter_mut().zip(&c.mean) {
            *o = *o + w * m;
        }
    }
    Ok(out.into_iter().map(|o| o / (total * horizon)).collect())
}

// logits of log h(t, y) = logsumexp_k(logit_k); second value is the log-sum.
fn mixture_logits<F: Scalar>(components: &[MixtureComponent<F>], horizon: F, t: F, y: &[F]) -> Result<(Vec<F>, F)> {
    if !(t >= F::zero() && t <= horizon) {
        return usage(format!("exact drift needs 0 <= t <= T, got t = {t}"));
    }
    let two = F::lit(2.0);
    let mut logits = Vec::with_capacity(components.len());
    for c in components {
        check_dim(c.mean.len(), y.len())?;
        let lin = c.mean.iter().zip(y).fold(F::zero(), |a, (&m, &yi)| a + m * yi);
        let msq = norm_sq(&c.mean);
        logits.push(c.weight.ln() + lin / horizon - msq * t / (two * horizon * horizon));
    }
    let lse = crate::logspace::log_sum_exp(&logits);
    Ok((logits, lse))
}

/// Exact `log h(t, y)` for catalog Gaussians and variance-`T` mixtures.
pub fn exact_log_h<F: Scalar>(target: &TargetSpec<F>, t: F, y: &[F]) -> Result<F> {
    check_dim(target.dim(), y.len())?;
    let horizon = target.horizon();
    let value = match target.catalog() {
        Catalog::GaussianMixture(comps) => mixture_logits(comps, horizon, t, y)?.1,
        Catalog::Gaussian(p) => {
            if !(t >= F::zero() && t <= horizon) {
                return usage(format!("exact drift needs 0 <= t <= T, got t = {t}"));
            }
            let two = F::lit(2.0);
            let var = p.variance;
            let s2 = horizon - t;
            // log phi(u) = a |u|^2 + b.u + c, completed per coordinate
            let a = (var - horizon) / (two * horizon * var);
            let c =
                -norm_sq(&p.mean) / (two * var) + F::lit(0.5) * F::from_usize(y.len()).unwrap() * (horizon / var).ln();
            let shrink = F::one() - two * a * s2;
            let mut acc = c;
            for (&m, &yi) in p.mean.iter().zip(y) {
                let b = m / var;
                let lin = two * a * yi + b;
                acc = acc - F::lit(0.5) * shrink.ln() + a * yi * yi + b * yi + lin * lin * s2 / (two * shrink);
            }
            acc
        }
        _ => return Err(Error::Unsupported(format!("no closed-form h for `{}`", target.name()))),
    };
    Ok(value + target.log_offset())
}

/// Closed-form drift for catalog targets, with the `eps` factor applied.
pub fn drift_exact<F: Scalar>(target: &TargetSpec<F>, epsilon: F, t: F, y: &[F]) -> Result<Vec<F>> {
    let horizon = target.horizon();
    let mut value = match target.catalog() {
        Catalog::Gaussian(p) => drift_exact_gaussian(p, horizon, t, y)?,
        Catalog::GaussianMixture(c) => drift_exact_mixture(c, horizon, t, y)?,
        _ => return Err(Error::Unsupported(format!("no closed-form drift for `{}`", target.name()))),
    };
    if epsilon > F::zero() {
        let log_h = exact_log_h(target, t, y)? - target.log_offset();
        let factor = sigmoid((-epsilon).ln_1p() + log_h - epsilon.ln());
        value.iter_mut().for_each(|v| *v = *v * factor);
    }
    Ok(value)
}

/// Upper bound `C1 (1 - eps) / eps + 2 C1` on `|b_eps|` under the relative
/// Lipschitz condition with constant `C1`.
pub fn drift_bound_epsilon<F: Scalar>(c1: F, epsilon: F) -> F {
    c1 * (F::one() - epsilon) / epsilon + F::lit(2.0) * c1
}

/// Deterministic drift for the non-Monte-Carlo modes.
pub(crate) fn deterministic_drift<F: Scalar>(
    target: &TargetSpec<F>,
    cfg: &DriftConfig<F>,
    rule: Option<&QuadratureRule<F>>,
    t: F,
    y: &[F],
) -> Result<DriftEstimate<F>> {
    let eps = cfg.epsilon;
    let mut est = match cfg.mode {
        DriftMode::ExactGaussian => {
            let v = drift_exact(target, eps, t, y)?;
            DriftEstimate::exact(v, exact_log_h(target, t, y)?)
        }
        DriftMode::Quadrature => {
            let r = match target.breakpoints() {
                Some(points) => piecewise_expectation(target, points, t, y[0], cfg.quadrature_order)?,
                None => gh_expectation(target, t, y, rule.expect("quadrature rule prepared"))?,
            };
            if r.degenerate {
                if eps > F::zero() {
                    DriftEstimate::zero(y.len(), eps.ln(), false)
                } else {
                    DriftEstimate::zero(y.len(), F::neg_infinity(), true)
                }
            } else {
                let mut v = r.grad_log_h;
                if eps > F::zero() {
                    let log_h = r.log_h - target.log_offset();
                    let factor = sigmoid((-eps).ln_1p() + log_h - eps.ln());
                    v.iter_mut().for_each(|x| *x = *x * factor);
                }
                DriftEstimate::exact(v, r.log_h)
            }
        }
        _ => unreachable!("monte carlo modes handled by DriftWorkspace"),
    };
    est.apply_clamp(cfg.clamp);
    Ok(est)
}
