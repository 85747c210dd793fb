//! Target distributions and the terminal ratio `phi = rho / G_T`.
//!
//! A [`TargetSpec`] wraps a (possibly unnormalized) log-density on `R^d`
//! together with the horizon `T` of the bridge. Everything downstream works
//! with `log phi(y) = log rho(y) + |y|^2 / (2T) + (d/2) log(2 pi T)`; `phi`
//! itself is never materialized because it overflows for moderate `|y|`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, usage, Error, Result};
use crate::logspace::{log_add_exp, log_sum_exp};
use crate::scalar::{norm_sq, Scalar};

/// Log-density (or log-ratio) evaluator.
pub type LogDensityFn<F> = Arc<dyn Fn(&[F]) -> F + Send + Sync>;

/// Gradient evaluator writing into the output slice.
pub type GradientFn<F> = Arc<dyn Fn(&[F], &mut [F]) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Full,
    Compact,
}

/// Isotropic Gaussian `N(mean, variance * I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams<F> {
    pub mean: Vec<F>,
    pub variance: F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent<F> {
    pub weight: F,
    pub mean: Vec<F>,
}

/// One-dimensional kernel density estimate with the triangular kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangularKdeParams<F> {
    pub centers: Vec<F>,
    pub bandwidth: F,
}

/// Closed-form knowledge about catalog targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Catalog<F> {
    Gaussian(GaussianParams<F>),
    /// Components all have covariance `T * I`.
    GaussianMixture(Vec<MixtureComponent<F>>),
    TriangularKde(TriangularKdeParams<F>),
    Custom,
}

/// Target distribution `mu` with density `rho` on `R^d` and bridge horizon `T`.
#[derive(Clone)]
pub struct TargetSpec<F: Scalar> {
    dim: usize,
    horizon: F,
    name: String,
    log_rho: LogDensityFn<F>,
    grad_log_rho: Option<GradientFn<F>>,
    // Closed-form log phi / grad log phi without the offset; avoids the
    // cancellation of the two quadratics in `log rho + |y|^2/(2T)`.
    log_phi_direct: Option<LogDensityFn<F>>,
    grad_log_phi_direct: Option<GradientFn<F>>,
    // phi itself (offset excluded) for targets where it is bounded; lets the
    // estimators skip the log/exp round trip.
    phi_bounded: Option<LogDensityFn<F>>,
    // 1D only: sorted points between which rho is smooth; rho vanishes
    // outside [first, last]
    breakpoints: Option<Vec<F>>,
    support: Support,
    log_offset: F,
    normalized: bool,
    catalog: Catalog<F>,
    a2_certified: bool,
    lipschitz_log_phi: Option<F>,
    log_gauss_norm: F,
}

impl<F: Scalar> fmt::Debug for TargetSpec<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("support", &self.support)
            .field("log_offset", &self.log_offset)
            .field("normalized", &self.normalized)
            .field("has_gradient", &self.grad_log_rho.is_some())
            .field("catalog", &self.catalog)
            .finish()
    }
}

fn half_log_two_pi<F: Scalar>(dim: usize, variance: F) -> F {
    F::lit(0.5) * F::from_usize(dim).unwrap() * (F::TAU() * variance).ln()
}

impl<F: Scalar> TargetSpec<F> {
    /// User-defined target. It is treated as unnormalized until
    /// [`assume_normalized`](Self::assume_normalized) is called.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        horizon: F,
        log_rho: impl Fn(&[F]) -> F + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return usage("dimension must be positive");
        }
        if !(horizon > F::zero()) || !horizon.is_finite() {
            return usage(format!("horizon T must be positive and finite, got {horizon}"));
        }
        Ok(Self {
            dim,
            horizon,
            name: name.into(),
            log_rho: Arc::new(log_rho),
            grad_log_rho: None,
            log_phi_direct: None,
            grad_log_phi_direct: None,
            phi_bounded: None,
            breakpoints: None,
            support: Support::Full,
            log_offset: F::zero(),
            normalized: false,
            catalog: Catalog::Custom,
            a2_certified: false,
            lipschitz_log_phi: None,
            log_gauss_norm: half_log_two_pi(dim, horizon),
        })
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[F], &mut [F]) + Send + Sync + 'static) -> Self {
        self.grad_log_rho = Some(Arc::new(grad));
        self.grad_log_phi_direct = None;
        self
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    /// Declares a 1D density that is smooth between consecutive `points` and
    /// zero outside their range. The quadrature oracle then integrates piece
    /// by piece instead of across the kinks.
    pub fn with_breakpoints(mut self, mut points: Vec<F>) -> Result<Self> {
        if self.dim != 1 {
            return usage("breakpoints are only supported in one dimension");
        }
        if points.len() < 2 || points.iter().any(|p| !p.is_finite()) {
            return usage("need at least two finite breakpoints");
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup();
        self.breakpoints = Some(points);
        self.support = Support::Compact;
        Ok(self)
    }

    pub fn breakpoints(&self) -> Option<&[F]> {
        self.breakpoints.as_deref()
    }

    /// Declares that `log_rho` integrates to one.
    pub fn assume_normalized(mut self) -> Self {
        self.normalized = self.log_offset == F::zero();
        self
    }

    /// Same target with `log rho` shifted by `c`, i.e. density `e^c * rho`.
    pub fn shifted(&self, c: F) -> Self {
        let mut out = self.clone();
        out.log_offset = self.log_offset + c;
        if c != F::zero() {
            out.normalized = false;
            out.name = format!("{}+{}", self.name, c);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> F {
        self.horizon
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn log_offset(&self) -> F {
        self.log_offset
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn has_gradient(&self) -> bool {
        self.grad_log_rho.is_some()
    }

    pub fn catalog(&self) -> &Catalog<F> {
        &self.catalog
    }

    /// Whether `log phi` is known to be globally Lipschitz.
    pub fn a2_certified(&self) -> bool {
        self.a2_certified
    }

    /// Certified Lipschitz constant of `log phi`, when one is known.
    pub fn certified_lipschitz(&self) -> Option<F> {
        self.lipschitz_log_phi
    }

    /// `log rho(y)` including the unnormalization offset.
    pub fn log_rho(&self, y: &[F]) -> Result<F> {
        check_dim(self.dim, y.len())?;
        let v = (self.log_rho)(y);
        if v.is_nan() || v == F::infinity() {
            return Err(Error::Usage(format!("log density of `{}` returned {v} at a finite point", self.name)));
        }
        Ok(v + self.log_offset)
    }

    /// Gradient of `log rho`, `None` when the target has no gradient.
    pub fn grad_log_rho(&self, y: &[F]) -> Result<Option<Vec<F>>> {
        check_dim(self.dim, y.len())?;
        Ok(self.grad_log_rho.as_ref().map(|g| {
            let mut out = vec![F::zero(); self.dim];
            g(y, &mut out);
            out
        }))
    }

    /// `log phi(y) - log_offset`, without argument checks. Hot path of the
    /// drift estimators, where the offset cancels.
    #[inline]
    pub(crate) fn log_phi_unshifted(&self, y: &[F]) -> F {
        match &self.log_phi_direct {
            Some(f) => f(y),
            None => {
                let lr = (self.log_rho)(y);
                if lr == F::neg_infinity() {
                    return lr;
                }
                lr + norm_sq(y) / (F::lit(2.0) * self.horizon) + self.log_gauss_norm
            }
        }
    }

    /// `phi(y) / exp(log_offset)` when the target supplies a bounded closed form.
    #[inline]
    pub(crate) fn phi_bounded(&self) -> Option<&LogDensityFn<F>> {
        self.phi_bounded.as_ref()
    }

    /// Writes `grad log phi(y)` into `out`; returns `false` if no gradient exists.
    #[inline]
    pub(crate) fn grad_log_phi_into(&self, y: &[F], out: &mut [F]) -> bool {
        if let Some(g) = &self.grad_log_phi_direct {
            g(y, out);
            return true;
        }
        match &self.grad_log_rho {
            Some(g) => {
                g(y, out);
                let inv_t = self.horizon.recip();
                for (o, &yi) in out.iter_mut().zip(y) {
                    *o = *o + yi * inv_t;
                }
                true
            }
            None => false,
        }
    }

    /// `log phi(y)` with the offset included.
    pub fn log_phi(&self, y: &[F]) -> Result<F> {
        check_dim(self.dim, y.len())?;
        let v = self.log_phi_unshifted(y);
        if v.is_nan() || v == F::infinity() {
            return Err(Error::Usage(format!("log phi of `{}` is {v} at a finite point", self.name)));
        }
        Ok(v + self.log_offset)
    }

    /// `grad log phi(y) = grad log rho(y) + y / T`.
    pub fn grad_log_phi(&self, y: &[F]) -> Result<Option<Vec<F>>> {
        check_dim(self.dim, y.len())?;
        let mut out = vec![F::zero(); self.dim];
        Ok(self.grad_log_phi_into(y, &mut out).then_some(out))
    }

    /// Analytic mean and covariance (row-major `d x d`) for catalog targets.
    pub fn moments(&self) -> Option<(Vec<F>, Vec<F>)> {
        let d = self.dim;
        match &self.catalog {
            Catalog::Gaussian(p) => {
                let mut cov = vec![F::zero(); d * d];
                for i in 0..d {
                    cov[i * d + i] = p.variance;
                }
                Some((p.mean.clone(), cov))
            }
            Catalog::GaussianMixture(comps) => {
                let mut mean = vec![F::zero(); d];
                for c in comps {
                    for (m, &x) in mean.iter_mut().zip(&c.mean) {
                        *m = *m + c.weight * x;
                    }
                }
                let mut cov = vec![F::zero(); d * d];
                for i in 0..d {
                    cov[i * d + i] = self.horizon;
                    for j in 0..d {
                        let second = comps.iter().fold(F::zero(), |acc, c| acc + c.weight * c.mean[i] * c.mean[j]);
                        cov[i * d + j] = cov[i * d + j] + second - mean[i] * mean[j];
                    }
                }
                Some((mean, cov))
            }
            Catalog::TriangularKde(p) => {
                let m = F::from_usize(p.centers.len()).unwrap();
                let mean = p.centers.iter().fold(F::zero(), |a, &c| a + c) / m;
                let spread = p.centers.iter().fold(F::zero(), |a, &c| a + (c - mean) * (c - mean)) / m;
                let var = spread + p.bandwidth * p.bandwidth / F::lit(6.0);
                Some((vec![mean], vec![var]))
            }
            Catalog::Custom => None,
        }
    }

    /// Exact draws from catalog targets, row-major `k x d`.
    ///
    /// The triangular KDE is sampled by numerically inverting its CDF.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Result<Vec<F>> {
        let d = self.dim;
        let mut out = Vec::with_capacity(k * d);
        match &self.catalog {
            Catalog::Gaussian(p) => {
                let sd = p.variance.sqrt();
                for _ in 0..k {
                    for &m in &p.mean {
                        out.push(m + sd * F::standard_normal(rng));
                    }
                }
            }
            Catalog::GaussianMixture(comps) => {
                let sd = self.horizon.sqrt();
                for _ in 0..k {
                    let c = pick_component(comps, F::unit_uniform(rng));
                    for &m in &c.mean {
                        out.push(m + sd * F::standard_normal(rng));
                    }
                }
            }
            Catalog::TriangularKde(p) => {
                for _ in 0..k {
                    out.push(kde_inverse_cdf(p, F::unit_uniform(rng)));
                }
            }
            Catalog::Custom => return Err(Error::Unsupported(format!("target `{}` has no exact sampler", self.name))),
        }
        Ok(out)
    }
}

fn pick_component<F: Scalar>(comps: &[MixtureComponent<F>], u: F) -> &MixtureComponent<F> {
    let mut acc = F::zero();
    for c in comps {
        acc = acc + c.weight;
        if u < acc {
            return c;
        }
    }
    comps.last().expect("non-empty mixture")
}

/// `log phi(y)` of `target`; see [`TargetSpec::log_phi`].
pub fn log_phi<F: Scalar>(target: &TargetSpec<F>, y: &[F]) -> Result<F> {
    target.log_phi(y)
}

/// `log G_T(y)` for the centred heat kernel at time `T`.
pub fn log_heat_kernel<F: Scalar>(horizon: F, y: &[F]) -> F {
    -norm_sq(y) / (F::lit(2.0) * horizon) - half_log_two_pi(y.len(), horizon)
}

/// The regularized target `rho_eps = (1 - eps) rho + eps G_T`.
#[derive(Clone, Debug)]
pub struct EpsilonTarget<F: Scalar> {
    base: TargetSpec<F>,
    epsilon: F,
    log_eps: F,
    log_one_minus_eps: F,
}

impl<F: Scalar> EpsilonTarget<F> {
    pub fn new(base: TargetSpec<F>, epsilon: F) -> Result<Self> {
        if !(epsilon >= F::zero() && epsilon < F::one()) {
            return usage(format!("epsilon must lie in [0, 1), got {epsilon}"));
        }
        if epsilon > F::zero() && !base.is_normalized() {
            return usage(format!("epsilon mixture needs a normalized density; `{}` is unnormalized", base.name()));
        }
        Ok(Self { base, epsilon, log_eps: epsilon.ln(), log_one_minus_eps: (-epsilon).ln_1p() })
    }

    pub fn base(&self) -> &TargetSpec<F> {
        &self.base
    }

    pub fn epsilon(&self) -> F {
        self.epsilon
    }

    /// `log phi_eps(y) = log((1 - eps) phi(y) + eps)`; finite for every `y` when `eps > 0`.
    pub fn log_phi(&self, y: &[F]) -> Result<F> {
        let l = self.base.log_phi(y)?;
        if self.epsilon == F::zero() {
            return Ok(l);
        }
        Ok(log_add_exp(self.log_one_minus_eps + l, self.log_eps))
    }

    /// `log rho_eps(y)`.
    pub fn log_rho(&self, y: &[F]) -> Result<F> {
        let lr = self.base.log_rho(y)?;
        if self.epsilon == F::zero() {
            return Ok(lr);
        }
        Ok(log_add_exp(self.log_one_minus_eps + lr, self.log_eps + log_heat_kernel(self.base.horizon(), y)))
    }

    /// Draws from `mu_eps`: the base target with probability `1 - eps`, else `G_T`.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Result<Vec<F>> {
        let d = self.base.dim();
        let sd = self.base.horizon().sqrt();
        let mut out = Vec::with_capacity(k * d);
        for _ in 0..k {
            if F::unit_uniform(rng) < self.epsilon {
                for _ in 0..d {
                    out.push(sd * F::standard_normal(rng));
                }
            } else {
                out.extend(self.base.sample_exact(rng, 1)?);
            }
        }
        Ok(out)
    }
}

/// `log phi_eps(y)` of the regularized target.
pub fn log_phi_epsilon<F: Scalar>(etarget: &EpsilonTarget<F>, y: &[F]) -> Result<F> {
    etarget.log_phi(y)
}

/// Normalized isotropic Gaussian `N(m, sigma^2 I)` with exact gradient.
///
/// `log phi` is the quadratic
/// `(1/(2T) - 1/(2 sigma^2)) |y|^2 + m.y / sigma^2 - |m|^2 / (2 sigma^2) + (d/2) log(T / sigma^2)`,
/// globally Lipschitz only when `sigma^2 = T`; the certification flag records exactly that.
pub fn make_gaussian_target<F: Scalar>(params: GaussianParams<F>, horizon: F) -> Result<TargetSpec<F>> {
    let dim = params.mean.len();
    if !(params.variance > F::zero()) {
        return usage(format!("variance must be positive, got {}", params.variance));
    }
    if params.mean.iter().any(|m| !m.is_finite()) {
        return usage("gaussian mean must be finite");
    }
    let var = params.variance;
    let two = F::lit(2.0);
    let log_norm = half_log_two_pi(dim, var);
    let mean = params.mean.clone();
    let log_rho = move |y: &[F]| {
        let q = y.iter().zip(&mean).fold(F::zero(), |a, (&yi, &mi)| a + (yi - mi) * (yi - mi));
        -q / (two * var) - log_norm
    };
    let mean = params.mean.clone();
    let grad = move |y: &[F], out: &mut [F]| {
        for ((o, &yi), &mi) in out.iter_mut().zip(y).zip(&mean) {
            *o = (mi - yi) / var;
        }
    };
    let mut target =
        TargetSpec::new(format!("gaussian(var={var})"), dim, horizon, log_rho)?.with_gradient(grad).assume_normalized();

    let quad = (var - horizon) / (two * horizon * var);
    let mean = params.mean.clone();
    let m_sq = norm_sq(&mean);
    let constant = -m_sq / (two * var) + F::lit(0.5) * F::from_usize(dim).unwrap() * (horizon / var).ln();
    target.log_phi_direct = Some(Arc::new(move |y: &[F]| {
        let lin = y.iter().zip(&mean).fold(F::zero(), |a, (&yi, &mi)| a + yi * mi);
        quad * norm_sq(y) + lin / var + constant
    }));
    let mean = params.mean.clone();
    let slope = (var - horizon) / (horizon * var);
    target.grad_log_phi_direct = Some(Arc::new(move |y: &[F], out: &mut [F]| {
        for ((o, &yi), &mi) in out.iter_mut().zip(y).zip(&mean) {
            *o = slope * yi + mi / var;
        }
    }));
    target.a2_certified = var == horizon;
    target.lipschitz_log_phi = target.a2_certified.then(|| m_sq.sqrt() / horizon);
    target.catalog = Catalog::Gaussian(params);
    Ok(target)
}

/// Mixture of Gaussians `sum_k w_k N(m_k, T I)`.
///
/// With every component at variance `T`, `log phi(y) = logsumexp_k(log w_k + m_k.y/T - |m_k|^2/(2T))`
/// is Lipschitz with constant `max_k |m_k| / T`, recorded as the certified constant.
pub fn make_gaussian_mixture_target<F: Scalar>(
    components: Vec<MixtureComponent<F>>,
    horizon: F,
) -> Result<TargetSpec<F>> {
    let Some(first) = components.first() else {
        return usage("gaussian mixture needs at least one component");
    };
    let dim = first.mean.len();
    if dim == 0 {
        return usage("mixture component means must be non-empty");
    }
    let mut total = F::zero();
    for c in &components {
        check_dim(dim, c.mean.len())?;
        if !(c.weight > F::zero()) {
            return usage(format!("mixture weights must be positive, got {}", c.weight));
        }
        total = total + c.weight;
    }
    if (total - F::one()).abs() > F::lit(1e-6) {
        return usage(format!("mixture weights must sum to 1, got {total}"));
    }
    let two = F::lit(2.0);
    let inv_t = horizon.recip();
    let log_w: Vec<F> = components.iter().map(|c| c.weight.ln()).collect();
    let means: Vec<Vec<F>> = components.iter().map(|c| c.mean.clone()).collect();
    let k = components.len();

    // log phi = logsumexp_k(a_k + m_k.y / T) with a_k = log w_k - |m_k|^2/(2T)
    let offsets: Vec<F> = log_w.iter().zip(&means).map(|(&lw, m)| lw - norm_sq(m) / (two * horizon)).collect();
    let log_norm = half_log_two_pi(dim, horizon);

    let (lw, ms) = (log_w.clone(), means.clone());
    let log_rho = move |y: &[F]| {
        let mut terms = [F::zero(); 8];
        let mut heap;
        let buf: &mut [F] = if k <= 8 {
            &mut terms[..k]
        } else {
            heap = vec![F::zero(); k];
            &mut heap
        };
        for (b, (&w, m)) in buf.iter_mut().zip(lw.iter().zip(&ms)) {
            let q = y.iter().zip(m).fold(F::zero(), |a, (&yi, &mi)| a + (yi - mi) * (yi - mi));
            *b = w - q / (two * horizon);
        }
        log_sum_exp(buf) - log_norm
    };

    let ms = means.clone();
    let offs = offsets.clone();
    let logits = move |y: &[F], buf: &mut [F]| {
        for (b, (&a, m)) in buf.iter_mut().zip(offs.iter().zip(&ms)) {
            let lin = y.iter().zip(m).fold(F::zero(), |acc, (&yi, &mi)| acc + yi * mi);
            *b = a + lin * inv_t;
        }
    };
    let logits = Arc::new(logits);

    // grad log phi = sum_k softmax_k m_k / T; grad log rho = that - y / T.
    let softmax_mean = {
        let logits = logits.clone();
        let ms = means.clone();
        move |y: &[F], out: &mut [F]| {
            let mut heap = vec![F::zero(); k];
            logits(y, &mut heap);
            let max = heap.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            out.iter_mut().for_each(|o| *o = F::zero());
            for (&l, m) in heap.iter().zip(&ms) {
                let w = (l - max).exp();
                total = total + w;
                for (o, &mi) in out.iter_mut().zip(m) {
                    *o = *o + w * mi;
                }
            }
            for o in out.iter_mut() {
                *o = *o / (total * horizon);
            }
        }
    };
    let softmax_mean = Arc::new(softmax_mean);
    let grad_rho = {
        let sm = softmax_mean.clone();
        move |y: &[F], out: &mut [F]| {
            sm(y, out);
            for (o, &yi) in out.iter_mut().zip(y) {
                *o = *o - yi * inv_t;
            }
        }
    };

    let name = if k == 1 { "gaussian_mixture(1)".to_string() } else { format!("gaussian_mixture({k})") };
    let mut target = TargetSpec::new(name, dim, horizon, log_rho)?.with_gradient(grad_rho).assume_normalized();
    let lg = logits.clone();
    target.log_phi_direct = Some(Arc::new(move |y: &[F]| {
        let mut terms = [F::zero(); 8];
        let mut heap;
        let buf: &mut [F] = if k <= 8 {
            &mut terms[..k]
        } else {
            heap = vec![F::zero(); k];
            &mut heap
        };
        lg(y, buf);
        log_sum_exp(buf)
    }));
    target.grad_log_phi_direct = Some(softmax_mean);
    let c0 = means.iter().map(|m| norm_sq(m).sqrt()).fold(F::zero(), F::max) / horizon;
    target.a2_certified = true;
    target.lipschitz_log_phi = Some(c0);
    target.catalog = Catalog::GaussianMixture(components);
    Ok(target)
}

/// Triangular-kernel density estimate `rho(x) = 1/(m h) sum_j (1 - |x - x_j| / h)_+` on `R`.
///
/// `log rho = -inf` off the support. The gradient at kinks and support edges
/// is the left derivative.
pub fn make_triangular_kde_target<F: Scalar>(params: TriangularKdeParams<F>, horizon: F) -> Result<TargetSpec<F>> {
    if params.centers.is_empty() {
        return usage("triangular KDE needs at least one center");
    }
    if !(params.bandwidth > F::zero()) {
        return usage(format!("bandwidth must be positive, got {}", params.bandwidth));
    }
    if params.centers.iter().any(|c| !c.is_finite()) {
        return usage("KDE centers must be finite");
    }
    let h = params.bandwidth;
    let centers = params.centers.clone();
    let log_norm = (F::from_usize(centers.len()).unwrap() * h).ln();
    let cs = centers.clone();
    let log_rho = move |y: &[F]| {
        let s = kde_kernel_sum(&cs, h, y[0]);
        if s > F::zero() {
            s.ln() - log_norm
        } else {
            F::neg_infinity()
        }
    };
    let cs = centers.clone();
    let grad = move |y: &[F], out: &mut [F]| {
        let x = y[0];
        let s = kde_kernel_sum(&cs, h, x);
        if !(s > F::zero()) {
            out[0] = F::zero();
            return;
        }
        // left derivative of each kernel: +1/h on (c - h, c], -1/h on (c, c + h]
        let mut slope = F::zero();
        for &c in &cs {
            if x > c - h && x <= c {
                slope = slope + F::one();
            } else if x > c && x <= c + h {
                slope = slope - F::one();
            }
        }
        out[0] = slope / (h * s);
    };
    let cs = centers.clone();
    let scale = (F::TAU() * horizon).sqrt() / (F::from_usize(centers.len()).unwrap() * h);
    let half_inv_t = F::lit(0.5) / horizon;
    let phi = move |y: &[F]| {
        let s = kde_kernel_sum(&cs, h, y[0]);
        if s > F::zero() {
            scale * s * (half_inv_t * y[0] * y[0]).exp()
        } else {
            F::zero()
        }
    };
    let kinks = centers.iter().flat_map(|&c| [c - h, c, c + h]).collect();
    let mut target = TargetSpec::new("triangular_kde", 1, horizon, log_rho)?
        .with_gradient(grad)
        .with_breakpoints(kinks)?
        .assume_normalized();
    target.catalog = Catalog::TriangularKde(params);
    target.phi_bounded = Some(Arc::new(phi));
    Ok(target)
}

/// `sum_j (1 - |x - x_j| / h)_+`.
#[inline]
fn kde_kernel_sum<F: Scalar>(centers: &[F], h: F, x: F) -> F {
    let inv_h = h.recip();
    centers.iter().fold(F::zero(), |acc, &c| {
        let u = F::one() - (x - c).abs() * inv_h;
        if u > F::zero() {
            acc + u
        } else {
            acc
        }
    })
}

/// CDF of the triangular KDE.
pub fn kde_cdf<F: Scalar>(params: &TriangularKdeParams<F>, x: F) -> F {
    let half = F::lit(0.5);
    let total = params.centers.iter().fold(F::zero(), |acc, &c| {
        let u = (x - c) / params.bandwidth;
        let v = if u <= -F::one() {
            F::zero()
        } else if u <= F::zero() {
            half * (F::one() + u) * (F::one() + u)
        } else if u < F::one() {
            F::one() - half * (F::one() - u) * (F::one() - u)
        } else {
            F::one()
        };
        acc + v
    });
    total / F::from_usize(params.centers.len()).unwrap()
}

/// Inverse CDF of the triangular KDE by bisection.
pub fn kde_inverse_cdf<F: Scalar>(params: &TriangularKdeParams<F>, p: F) -> F {
    let h = params.bandwidth;
    let mut lo = params.centers.iter().copied().fold(F::infinity(), F::min) - h;
    let mut hi = params.centers.iter().copied().fold(F::neg_infinity(), F::max) + h;
    for _ in 0..200 {
        let mid = F::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kde_cdf(params, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    F::lit(0.5) * (lo + hi)
}
