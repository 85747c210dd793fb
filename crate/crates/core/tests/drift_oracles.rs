//! Monte Carlo drift against independent oracles, the regularized bound, and
//! run-level determinism.

use sf_sampler::diagnostics::probe_a4;
use sf_sampler::diagnostics::ProbeRegion;
use sf_sampler::drift::{drift_bound_epsilon, drift_exact, drift_exact_gaussian, drift_mc, DriftConfig, DriftMode};
use sf_sampler::integrator::{em_run, em_run_with_threads, RunConfig, TimeGrid};
use sf_sampler::quadrature::{quadrature_drift, quadrature_drift_epsilon};
use sf_sampler::rng::{derive_seed, stream};
use sf_sampler::target::{
    make_gaussian_mixture_target, make_gaussian_target, make_triangular_kde_target, GaussianParams, MixtureComponent,
    TargetSpec, TriangularKdeParams,
};
use sf_sampler::Scalar;

fn normals(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = stream(seed);
    (0..count).map(|_| f64::standard_normal(&mut rng)).collect()
}

fn mixture_2d() -> TargetSpec<f64> {
    make_gaussian_mixture_target(
        vec![
            MixtureComponent { weight: 0.3, mean: vec![-1.5, 0.5] },
            MixtureComponent { weight: 0.7, mean: vec![1.0, -1.0] },
        ],
        1.0,
    )
    .unwrap()
}

fn kde() -> TargetSpec<f64> {
    make_triangular_kde_target(TriangularKdeParams { centers: vec![-1.0, 0.0, 1.0], bandwidth: 0.5 }, 1.0).unwrap()
}

#[test]
fn quadrature_matches_closed_form_mixture_in_2d() {
    let target = mixture_2d();
    for (t, y) in [(0.0, [0.0, 0.0]), (0.4, [1.2, -0.3]), (0.9, [-2.0, 1.0])] {
        let q = quadrature_drift(&target, t, &y, 64).unwrap();
        let exact = drift_exact(&target, 0.0, t, &y).unwrap();
        assert!(q.converged);
        for (a, b) in q.value.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn both_estimators_agree_with_the_closed_form_mixture() {
    let target = mixture_2d();
    let m = 8192;
    let mut misses = 0;
    let mut total = 0;
    for mode in [DriftMode::GradientRatio, DriftMode::Stein] {
        let cfg = DriftConfig::new(mode, m);
        for i in 0..20u64 {
            let t = i as f64 / 20.0;
            let y = [-2.0 + 0.2 * i as f64, 1.0 - 0.1 * i as f64];
            let exact = drift_exact(&target, 0.0, t, &y).unwrap();
            let est = drift_mc(&target, &cfg, t, &y, &normals(derive_seed(1, &[i]), 2 * m)).unwrap();
            for ((v, e), se) in est.value.iter().zip(&exact).zip(&est.std_error) {
                total += 1;
                if (v - e).abs() > 5.0 * se {
                    misses += 1;
                }
            }
        }
    }
    assert!(misses <= 2, "{misses} of {total} outside 5 SE");
}

#[test]
fn kde_drift_agrees_with_piecewise_quadrature() {
    let target = kde();
    let m = 16384;
    for mode in [DriftMode::GradientRatio, DriftMode::Stein] {
        let cfg = DriftConfig::new(mode, m);
        for (i, (t, y)) in [(0.0, 0.3), (0.3, -0.8), (0.6, 1.1), (0.8, 0.0)].into_iter().enumerate() {
            let q = quadrature_drift(&target, t, &[y], 64).unwrap();
            let est = drift_mc(&target, &cfg, t, &[y], &normals(derive_seed(2, &[i as u64]), m)).unwrap();
            // piecewise rules integrate between the kinks, so the oracle converges
            assert!(q.converged);
            let gate = 5.0 * est.std_error[0];
            assert!(
                (est.value[0] - q.value[0]).abs() <= gate,
                "{mode:?} t={t} y={y}: {} vs {} (gate {gate})",
                est.value[0],
                q.value[0]
            );
        }
    }
}

#[test]
fn regularized_drift_matches_its_quadrature() {
    let target = kde();
    let m = 16384;
    let cfg = DriftConfig::new(DriftMode::GradientRatio, m).with_epsilon(0.2);
    for (i, (t, y)) in [(0.1, 2.5), (0.5, -0.2), (0.7, -3.0)].into_iter().enumerate() {
        let q = quadrature_drift_epsilon(&target, 0.2, t, &[y], 64).unwrap();
        let est = drift_mc(&target, &cfg, t, &[y], &normals(derive_seed(3, &[i as u64]), m)).unwrap();
        assert!(q.converged);
        assert!((est.value[0] - q.value[0]).abs() <= 5.0 * est.std_error[0]);
    }
}

#[test]
fn gradient_ratio_estimates_respect_the_epsilon_bound() {
    let target = kde();
    let region = ProbeRegion::cube(1, -3.0, 3.0);
    let c1 = 1.1 * probe_a4(&target, &region, 20_000, &mut stream(4)).unwrap().a4_ratio_est.unwrap();
    for eps in [0.05, 0.3] {
        let bound = drift_bound_epsilon(c1, eps);
        let cfg = DriftConfig::new(DriftMode::GradientRatio, 256).with_epsilon(eps);
        for i in 0..200u64 {
            let t = (i % 20) as f64 / 20.0;
            let y = -2.5 + 5.0 * (i / 20) as f64 / 9.0;
            let est = drift_mc(&target, &cfg, t, &[y], &normals(derive_seed(5, &[i]), 256)).unwrap();
            assert!(est.value[0].abs() <= bound, "eps={eps} t={t} y={y}: {} > {bound}", est.value[0]);
        }
    }
}

#[test]
fn runs_do_not_depend_on_the_thread_count() {
    let target = kde();
    let cfg = RunConfig::new(
        TimeGrid::new(8, 1.0).unwrap(),
        300,
        42,
        DriftConfig::new(DriftMode::Stein, 64).with_epsilon(0.1),
    );
    let one = em_run_with_threads(&target, &cfg, 1).unwrap();
    let four = em_run_with_threads(&target, &cfg, 4).unwrap();
    assert_eq!(one.terminal, four.terminal);
    assert_eq!(one.flags, four.flags);
}

#[test]
fn single_precision_bridge_hits_the_target_moments() {
    let params = GaussianParams { mean: vec![1.0f32, -0.5], variance: 0.5 };
    let target = make_gaussian_target(params.clone(), 1.0).unwrap();
    let cfg = RunConfig::new(TimeGrid::new(1, 1.0).unwrap(), 20_000, 8, DriftConfig::new(DriftMode::ExactGaussian, 1));
    let e = em_run(&target, &cfg).unwrap();
    for (axis, &mu) in params.mean.iter().enumerate() {
        let xs = e.coordinate(axis);
        let mean = xs.iter().sum::<f32>() / xs.len() as f32;
        assert!((mean - mu).abs() < 0.03, "axis {axis}: {mean}");
    }
    let exact = drift_exact_gaussian(&params, 1.0, 0.5, &[0.0, 0.0]).unwrap();
    assert!(exact.iter().all(|v| v.is_finite()));
}

#[test]
fn custom_target_drift_matches_quadrature() {
    // rho proportional to exp(-y^4 / 4), no closed-form drift
    let target = TargetSpec::new("quartic", 1, 1.0, |y: &[f64]| -0.25 * y[0].powi(4)).unwrap();
    let cfg = DriftConfig::new(DriftMode::Stein, 16384);
    for (i, (t, y)) in [(0.2, 0.5), (0.7, -1.0)].into_iter().enumerate() {
        let q = quadrature_drift(&target, t, &[y], 64).unwrap();
        let est = drift_mc(&target, &cfg, t, &[y], &normals(derive_seed(6, &[i as u64]), 16384)).unwrap();
        assert!((est.value[0] - q.value[0]).abs() <= 5.0 * est.std_error[0], "{} vs {}", est.value[0], q.value[0]);
    }
}
