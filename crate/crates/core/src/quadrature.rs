//! Gauss-Hermite evaluation of the heat-smoothed ratio `h(t, y) = E[phi(y + sqrt(T - t) Z)]`.
//!
//! This is the deterministic oracle for the Monte Carlo drift: for smooth
//! `phi` in one or two dimensions it converges spectrally in the rule order.
//! 1D targets with declared breakpoints (kinks, compact support) are instead
//! integrated piece by piece with Gauss-Legendre rules, which keeps the
//! spectral convergence that a single Hermite rule loses at the kinks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{check_dim, usage, Error, Result};
use crate::logspace::sigmoid;
use crate::scalar::Scalar;
use crate::target::{Support, TargetSpec};

/// Largest rule order used by [`quadrature_drift`] escalation.
pub const MAX_ORDER: usize = 1024;

/// Successive-order agreement required by [`quadrature_drift`].
pub const ESCALATION_TOL: f64 = 1e-9;

/// Gauss-Hermite rule for the standard normal measure (weights sum to one).
#[derive(Clone, Debug)]
pub struct QuadratureRule<F> {
    pub nodes: Vec<F>,
    pub weights: Vec<F>,
    /// `ln` of the weights; stays finite where the weights underflow.
    pub log_weights: Vec<F>,
    pub order: usize,
}

impl<F: Scalar> QuadratureRule<F> {
    /// Probabilists' Gauss-Hermite rule with `order` nodes (cached per order).
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return usage("quadrature order must be positive");
        }
        let base = cached_rule(order);
        Ok(Self {
            nodes: base.nodes.iter().map(|&x| F::lit(x)).collect(),
            weights: base.weights.iter().map(|&x| F::lit(x)).collect(),
            log_weights: base.log_weights.iter().map(|&x| F::lit(x)).collect(),
            order,
        })
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(F) -> F) -> F {
        self.nodes.iter().zip(&self.weights).fold(F::zero(), |acc, (&x, &w)| acc + w * f(x))
    }
}

fn cached_rule(order: usize) -> Arc<QuadratureRule<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadratureRule<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&order) {
        return rule.clone();
    }
    let rule = Arc::new(build_rule(order));
    cache.lock().unwrap().insert(order, rule.clone());
    rule
}

/// Golub-Welsch on the Jacobi matrix, then Newton polishing of the nodes and
/// weights from the orthonormal three-term recurrence.
fn build_rule(n: usize) -> QuadratureRule<f64> {
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    off.push(0.0);
    let mut first_row = vec![0.0; n];
    first_row[0] = 1.0;
    implicit_ql(&mut diag, &mut off, &mut first_row);

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let mut nodes: Vec<f64> = idx.iter().map(|&i| diag[i]).collect();

    let mut log_weights = vec![0.0; n];
    for (x, lw) in nodes.iter_mut().zip(log_weights.iter_mut()) {
        for _ in 0..3 {
            let (hn, hn1, _) = orthonormal_hermite(n, *x);
            if hn1 == 0.0 {
                break;
            }
            let step = hn / ((n as f64).sqrt() * hn1);
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, hn1, log_scale) = orthonormal_hermite(n, *x);
        // w = 1 / (n h_{n-1}(x)^2)
        *lw = -(n as f64).ln() - 2.0 * (hn1.abs().ln() + log_scale);
    }
    // enforce the reflection symmetry of the rule
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let lw = 0.5 * (log_weights[i] + log_weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        log_weights[i] = lw;
        log_weights[j] = lw;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let max_lw = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|&l| (l - max_lw).exp()).sum();
    let log_total = max_lw + total.ln();
    for lw in &mut log_weights {
        *lw -= log_total;
    }
    let weights = log_weights.iter().map(|&l| l.exp()).collect();
    QuadratureRule { nodes, weights, log_weights, order: n }
}

type LegendreRule = Arc<(Vec<f64>, Vec<f64>)>;

/// Gauss-Legendre nodes and weights on `[-1, 1]` (cached per order).
fn legendre_rule(order: usize) -> LegendreRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, LegendreRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&order) {
        return rule.clone();
    }
    let rule = Arc::new(build_legendre(order));
    cache.lock().unwrap().insert(order, rule.clone());
    rule
}

/// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
fn build_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let step = p / d;
            x -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let dp = legendre(n, x).1;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 1..=n {
        let next = ((2 * k - 1) as f64 * x * cur - (k - 1) as f64 * prev) / k as f64;
        prev = cur;
        cur = next;
    }
    let d = n as f64 * (x * cur - prev) / (x * x - 1.0);
    (cur, d)
}

/// Orthonormal probabilists' Hermite values `(h_n(x), h_{n-1}(x))`, both
/// divided by `exp(log_scale)` to stay in range.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > 1e150 {
            cur *= 1e-150;
            prev *= 1e-150;
            log_scale += 150.0 * std::f64::consts::LN_10;
        }
    }
    (cur, prev, log_scale)
}

/// Implicit QL iteration for a symmetric tridiagonal matrix. `diag` receives
/// the eigenvalues; `first_row` the first components of the eigenvectors.
/// `off[i]` couples rows `i` and `i + 1`.
fn implicit_ql(diag: &mut [f64], off: &mut [f64], first_row: &mut [f64]) {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 100, "implicit QL failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
                let z = first_row[i + 1];
                first_row[i + 1] = s * first_row[i] + c * z;
                first_row[i] = c * first_row[i] - s * z;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}

/// Quadrature evaluation of `log h(t, y)` and `grad log h(t, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureResult<F> {
    pub log_h: F,
    pub grad_log_h: Vec<F>,
    /// Every node landed where `phi = 0`.
    pub degenerate: bool,
}

/// Tensorized Gauss-Hermite evaluation of `h(t, y)` for `d <= 2`.
///
/// The gradient uses `grad log phi` at the nodes when the target has a
/// gradient and Gaussian integration by parts otherwise.
pub fn gh_expectation<F: Scalar>(
    target: &TargetSpec<F>,
    t: F,
    y: &[F],
    rule: &QuadratureRule<F>,
) -> Result<QuadratureResult<F>> {
    let d = target.dim();
    check_dim(d, y.len())?;
    if d > 2 {
        return Err(Error::Unsupported(format!("quadrature oracle supports d <= 2, got d = {d}")));
    }
    let horizon = target.horizon();
    if !(t >= F::zero() && t < horizon) {
        return usage(format!("quadrature needs 0 <= t < T, got t = {t}, T = {horizon}"));
    }
    let s = (horizon - t).sqrt();
    let n = rule.order;
    let points = n.pow(d as u32);

    let mut log_terms = Vec::with_capacity(points);
    let mut u = vec![F::zero(); d];
    let node_at = |p: usize, axis: usize| (p / n.pow(axis as u32)) % n;
    for p in 0..points {
        let mut lw = F::zero();
        for (axis, ui) in u.iter_mut().enumerate() {
            let k = node_at(p, axis);
            *ui = y[axis] + s * rule.nodes[k];
            lw = lw + rule.log_weights[k];
        }
        log_terms.push(target.log_phi_unshifted(&u) + lw);
    }
    let max = log_terms.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return Ok(QuadratureResult { log_h: F::neg_infinity(), grad_log_h: vec![F::zero(); d], degenerate: true });
    }
    // grad phi jumps at the kinks of compactly supported targets, while
    // phi(u) z stays continuous
    let use_gradient = target.has_gradient() && target.support() == Support::Full;
    let mut total = F::zero();
    let mut grad = vec![F::zero(); d];
    let mut g = vec![F::zero(); d];
    for (p, &lt) in log_terms.iter().enumerate() {
        let w = (lt - max).exp();
        if w == F::zero() {
            continue;
        }
        total = total + w;
        for (axis, ui) in u.iter_mut().enumerate() {
            *ui = y[axis] + s * rule.nodes[node_at(p, axis)];
        }
        if use_gradient {
            target.grad_log_phi_into(&u, &mut g);
            for (gr, &gi) in grad.iter_mut().zip(&g) {
                *gr = *gr + w * gi;
            }
        } else {
            for (axis, gr) in grad.iter_mut().enumerate() {
                *gr = *gr + w * rule.nodes[node_at(p, axis)] / s;
            }
        }
    }
    for gr in &mut grad {
        *gr = *gr / total;
    }
    Ok(QuadratureResult { log_h: max + total.ln() + target.log_offset(), grad_log_h: grad, degenerate: false })
}

/// Most sub-intervals used by [`piecewise_expectation`].
const MAX_PIECES: usize = 4096;

/// `h` and `grad log h` for a 1D target with breakpoints: a Gauss-Legendre
/// rule of `order` nodes on every smooth piece of
/// `h = int phi(u) N(u; y, s^2) du`, with `grad h = int phi(u) (u - y) / s^2 N du`.
/// Pieces are split to at most `4 s` wide so the Gaussian factor stays
/// resolved as `t -> T`.
pub fn piecewise_expectation<F: Scalar>(
    target: &TargetSpec<F>,
    points: &[F],
    t: F,
    y: F,
    order: usize,
) -> Result<QuadratureResult<F>> {
    let horizon = target.horizon();
    if !(t >= F::zero() && t < horizon) {
        return usage(format!("quadrature needs 0 <= t < T, got t = {t}, T = {horizon}"));
    }
    if order == 0 {
        return usage("quadrature order must be positive");
    }
    let s2 = horizon - t;
    let s = s2.sqrt();
    let (first, last) = (points[0], points[points.len() - 1]);
    // beyond 60 s the Gaussian factor is below e^-1800 of its peak
    let (lo, hi) = if y >= first && y <= last {
        let reach = F::lit(60.0) * s;
        (first.max(y - reach), last.min(y + reach))
    } else {
        (first, last)
    };
    let width = F::lit(4.0) * s;
    let mut pieces = Vec::new();
    for seg in points.windows(2) {
        let (a, b) = (seg[0].max(lo), seg[1].min(hi));
        if !(b > a) {
            continue;
        }
        let k = ((b - a) / width).ceil().to_usize().unwrap_or(MAX_PIECES).clamp(1, MAX_PIECES);
        pieces.push((a, b, k));
    }
    let total_k: usize = pieces.iter().map(|p| p.2).sum();
    if total_k > MAX_PIECES {
        // keep the split proportional but bounded
        let scale = MAX_PIECES as f64 / total_k as f64;
        for p in &mut pieces {
            p.2 = ((p.2 as f64 * scale).floor() as usize).max(1);
        }
    }
    let rule = legendre_rule(order);
    let mut terms = Vec::new();
    let half = F::lit(0.5);
    for &(a, b, k) in &pieces {
        let step = (b - a) / F::from_usize(k).unwrap();
        for j in 0..k {
            let left = a + step * F::from_usize(j).unwrap();
            let (mid, radius) = (left + half * step, half * step);
            for (&x, &w) in rule.0.iter().zip(&rule.1) {
                let u = mid + radius * F::lit(x);
                let d = u - y;
                let lt = target.log_phi_unshifted(&[u]) - d * d / (F::lit(2.0) * s2) + (radius * F::lit(w)).ln();
                terms.push((lt, d / s2));
            }
        }
    }
    let max = terms.iter().map(|p| p.0).fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return Ok(QuadratureResult { log_h: F::neg_infinity(), grad_log_h: vec![F::zero()], degenerate: true });
    }
    let (mut total, mut num) = (F::zero(), F::zero());
    for &(lt, score) in &terms {
        let w = (lt - max).exp();
        total = total + w;
        num = num + w * score;
    }
    let log_norm = half * (F::TAU() * s2).ln();
    Ok(QuadratureResult {
        log_h: max + total.ln() - log_norm + target.log_offset(),
        grad_log_h: vec![num / total],
        degenerate: false,
    })
}

/// Oracle drift with order escalation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureDrift<F> {
    pub value: Vec<F>,
    /// Order of the returned evaluation.
    pub order: usize,
    /// Two successive orders agreed within [`ESCALATION_TOL`].
    pub converged: bool,
    pub degenerate: bool,
}

/// `b(t, y)` by quadrature, doubling the order from `order` until successive
/// values agree within `1e-9` or [`MAX_ORDER`] is reached. Gauss-Hermite in
/// general, piecewise Gauss-Legendre for targets with breakpoints.
pub fn quadrature_drift<F: Scalar>(target: &TargetSpec<F>, t: F, y: &[F], order: usize) -> Result<QuadratureDrift<F>> {
    quadrature_drift_epsilon(target, F::zero(), t, y, order)
}

/// [`quadrature_drift`] for the regularized target: `b_eps = (1 - eps) grad h / ((1 - eps) h + eps)`.
pub fn quadrature_drift_epsilon<F: Scalar>(
    target: &TargetSpec<F>,
    epsilon: F,
    t: F,
    y: &[F],
    order: usize,
) -> Result<QuadratureDrift<F>> {
    if !(epsilon >= F::zero() && epsilon < F::one()) {
        return usage(format!("epsilon must lie in [0, 1), got {epsilon}"));
    }
    if epsilon > F::zero() && !target.is_normalized() {
        return usage("epsilon drift needs a normalized target");
    }
    let eval = |order: usize| -> Result<(Vec<F>, bool)> {
        let r = match target.breakpoints() {
            Some(points) if y.len() == 1 => piecewise_expectation(target, points, t, y[0], order)?,
            _ => gh_expectation(target, t, y, &QuadratureRule::gauss_hermite(order)?)?,
        };
        let mut v = r.grad_log_h;
        if epsilon > F::zero() {
            let factor = if r.degenerate { F::zero() } else { sigmoid((-epsilon).ln_1p() + r.log_h - epsilon.ln()) };
            v.iter_mut().for_each(|x| *x = *x * factor);
        }
        Ok((v, r.degenerate))
    };
    let mut order = order.clamp(1, MAX_ORDER);
    let (mut value, mut degenerate) = eval(order)?;
    let tol = F::lit(ESCALATION_TOL);
    while order < MAX_ORDER {
        let next = (order * 2).min(MAX_ORDER);
        let (v, deg) = eval(next)?;
        let diff = v.iter().zip(&value).fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        value = v;
        degenerate = deg;
        order = next;
        if diff < tol {
            return Ok(QuadratureDrift { value, order, converged: true, degenerate });
        }
    }
    Ok(QuadratureDrift { value, order, converged: false, degenerate })
}
