//! Compressed-iterate descent: operator moments, trajectories, bounds and
//! constant estimation.

use ist::exec::ExecMode;
use ist::gdci::{
    check_unbiasedness, check_variance, corollary_bound_rhs, estimate_constants, gdci_run,
    theorem_bound_rhs, verify, CompressOp, ConstantOptions, LeastSquares, Objective, Quadratic,
    TheoremParams, VerifyOptions,
};
use ist::linalg::Matrix;
use ist::rng::stream_rng;
use ist::IstError;
use rand::Rng;

const SAMPLES: u64 = 100_000;

fn random_vec(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ist::rng::rng_from_seed(seed);
    (0..p).map(|_| rng.gen_range(-3.0..3.0)).collect()
}

#[test]
fn half_mask_on_two_four() {
    let op = CompressOp::new(0.5).unwrap();
    let x = [2.0, 4.0];
    let u = check_unbiasedness(op, &x, SAMPLES, 1, ExecMode::Parallel).unwrap();
    assert!(u.passed, "{u:?}");
    let v = check_variance(op, &x, SAMPLES, 1, ExecMode::Parallel).unwrap();
    assert_eq!(v.expected, 20.0);
    assert!(v.passed && v.relative_error < 0.02, "{v:?}");
}

#[test]
fn operator_checks_across_keep_probabilities() {
    let x = random_vec(20, 4);
    for xi in [0.25, 0.5, 0.75, 1.0] {
        let op = CompressOp::new(xi).unwrap();
        let u = check_unbiasedness(op, &x, SAMPLES, 2, ExecMode::Parallel).unwrap();
        let v = check_variance(op, &x, SAMPLES, 2, ExecMode::Parallel).unwrap();
        assert!(u.passed, "ξ={xi}: z={}", u.max_z);
        assert!(v.passed, "ξ={xi}: rel={}", v.relative_error);
        if xi == 1.0 {
            assert_eq!(v.observed, 0.0);
        }
    }
}

#[test]
fn huge_coordinate_does_not_break_unbiasedness() {
    let mut x = random_vec(10, 5);
    x[3] = 1e9;
    let op = CompressOp::new(0.25).unwrap();
    assert!(check_unbiasedness(op, &x, SAMPLES, 3, ExecMode::Parallel).unwrap().passed);
}

#[test]
fn variance_statistic_is_quadratic_in_scale() {
    let op = CompressOp::new(0.3).unwrap();
    let x = random_vec(8, 6);
    let scaled: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
    let a = check_variance(op, &x, 10_000, 9, ExecMode::Sequential).unwrap();
    let b = check_variance(op, &scaled, 10_000, 9, ExecMode::Sequential).unwrap();
    assert!((b.observed - 9.0 * a.observed).abs() <= 1e-10 * b.observed);
}

#[test]
fn checks_agree_across_exec_modes() {
    let op = CompressOp::new(0.4).unwrap();
    let x = random_vec(6, 7);
    let a = check_unbiasedness(op, &x, 20_000, 8, ExecMode::Sequential).unwrap();
    let b = check_unbiasedness(op, &x, 20_000, 8, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_gradient_descent_contracts_geometrically() {
    let h = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let center = vec![1.0, -2.0];
    let q = Quadratic::new(h, center.clone()).unwrap();
    let eta = 1.0 / (2.0 * q.l_max());
    let op = CompressOp::new(1.0).unwrap();
    let trace = gdci_run(&q, op, eta, 200, 0, &[5.0, 5.0]).unwrap();
    // Contraction factor max |1 − ηλ| over the Hessian spectrum.
    let disc = ((2.0f64 - 1.0).powi(2) + 4.0 * 0.25).sqrt();
    let (lo, hi) = ((3.0 - disc) / 2.0, (3.0 + disc) / 2.0);
    let rho = (1.0 - eta * lo).abs().max((1.0 - eta * hi).abs());
    let dist = |x: &[f64]| ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
    for w in trace.x.windows(2) {
        let (d0, d1) = (dist(&w[0]), dist(&w[1]));
        assert!(d1 <= rho * d0 + 1e-14, "{d1} > {rho} · {d0}");
    }
    assert!(dist(trace.x.last().unwrap()) < 1e-10);
}

#[test]
fn unit_keep_probability_is_plain_sgd() {
    let ls = LeastSquares::conditioned(5, 30, 0.2, 1).unwrap();
    let eta = 1.0 / (2.0 * ls.l_max());
    let seed = 77;
    let x0 = vec![0.5; 5];
    let trace = gdci_run(&ls, CompressOp::new(1.0).unwrap(), eta, 500, seed, &x0).unwrap();

    // Independent SGD on the same index stream.
    let a = ls.design();
    let b = ls.targets();
    let mut rng = stream_rng(seed, "gdci-index", 0);
    let mut x = x0.clone();
    let mut reference = vec![x.clone()];
    for _ in 0..500 {
        let i = rng.gen_range(0..a.rows());
        let mut r = 0.0;
        for (aj, xj) in a.row(i).iter().zip(&x) {
            r += aj * xj;
        }
        r -= b[i];
        for (xj, aj) in x.iter_mut().zip(a.row(i)) {
            *xj -= eta * (aj * r);
        }
        reference.push(x.clone());
    }
    assert_eq!(trace.x, reference);
    assert_eq!(trace.y, reference);
}

#[test]
fn divergent_run_reports_partial_trace() {
    let ls = LeastSquares::conditioned(3, 10, 0.1, 2).unwrap();
    let err = gdci_run(&ls, CompressOp::new(1.0).unwrap(), 1e3, 10_000, 0, &[1.0; 3]).unwrap_err();
    match err {
        IstError::GdciDivergence { iteration, trace } => {
            assert_eq!(trace.len(), iteration + 1);
            assert!(iteration < 10_000);
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn params() -> TheoremParams {
    TheoremParams {
        l_max: 4.0,
        mu: 1.0,
        m: 0.3,
        m_f: 0.5,
        q: 2.0,
        b_noise: 0.1,
        theta: 0.1,
        omega: 0.0,
        x_star_norm_sq: 3.0,
    }
}

#[test]
fn theorem_rhs_without_noise() {
    let p = TheoremParams { m: 0.0, b_noise: 0.0, ..params() };
    let rhs = theorem_bound_rhs(&p, 7.0, 2.0, 49).unwrap();
    let want = 5.0 * 2.0 * 4.0 / ((1.0 - 0.25) * 50.0);
    assert!((rhs - want).abs() < 1e-12);
}

#[test]
fn theorem_rhs_is_monotone() {
    let p = TheoremParams { omega: 0.2 * params().omega_cap(), ..params() };
    let mut last = f64::INFINITY;
    for t in [0, 1, 10, 100, 1000, 100_000] {
        let rhs = theorem_bound_rhs(&p, 5.0, 0.0, t).unwrap();
        assert!(rhs < last);
        last = rhs;
    }
    let mut last = 0.0;
    for frac in [0.0, 0.2, 0.4, 0.6, 0.8, 0.99] {
        let q = TheoremParams { omega: frac * p.omega_cap(), ..p };
        let rhs = theorem_bound_rhs(&q, 5.0, 0.0, 100).unwrap();
        assert!(rhs > last);
        last = rhs;
    }
}

#[test]
fn corollary_without_theta_drops_the_bq_term() {
    let p = TheoremParams { theta: 0.0, ..params() };
    let rhs = corollary_bound_rhs(&p, 5.0, 0.0, 9).unwrap();
    let a = p.alpha_corollary();
    let want = 5.0 / (a * 10.0) + (p.m / (4.0 * p.l_max)) / a;
    assert!((rhs - want).abs() < 1e-12);
}

#[test]
fn corollary_admissibility_boundary() {
    let cap = params().omega_cap_corollary();
    let below = TheoremParams { omega: 0.99 * cap, ..params() };
    assert!(below.alpha_corollary() > 0.0);
    assert!(corollary_bound_rhs(&below, 1.0, 0.0, 10).is_ok());
    let above = TheoremParams { omega: 1.01 * cap, ..params() };
    assert!(matches!(
        corollary_bound_rhs(&above, 1.0, 0.0, 10),
        Err(IstError::Inadmissible(_))
    ));
}

fn constants_for(ls: &LeastSquares, seed: u64) -> ist::gdci::Constants {
    let opts = ConstantOptions { radius: 2.0, seed, ..ConstantOptions::default() };
    let probes = vec![vec![0.5; ls.dim()], vec![-1.0; ls.dim()]];
    estimate_constants(ls, CompressOp::new(0.9).unwrap(), &probes, &opts, ExecMode::Parallel).unwrap()
}

#[test]
fn identity_design_constants() {
    let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
    let ls = LeastSquares::new(eye, vec![0.0; 3]).unwrap();
    let c = constants_for(&ls, 0);
    assert_eq!(c.l_max, 1.0);
    assert_eq!(c.l_min, 1.0);
    // Hessian (1/n) AᵀA = I/3.
    assert!((c.mu - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(c.x_star, vec![0.0; 3]);
    assert!(c.grid_ok);
}

#[test]
fn diagonal_design_constants() {
    let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let ls = LeastSquares::new(a, vec![1.0, 1.0]).unwrap();
    let c = constants_for(&ls, 0);
    // AᵀA = diag(1, 4), so H = diag(1/2, 2).
    assert_eq!(c.l_max, 4.0);
    assert!((c.mu - 0.5).abs() < 1e-12);
    assert!((c.hessian_max - 2.0).abs() < 1e-12);
    assert!((c.x_star[0] - 1.0).abs() < 1e-12 && (c.x_star[1] - 0.5).abs() < 1e-12);
    assert!(c.grid_ok);
}

#[test]
fn constants_reproduce_under_estimator_reseeding() {
    let ls = LeastSquares::conditioned(20, 100, 0.1, 5).unwrap();
    let a = constants_for(&ls, 1);
    let b = constants_for(&ls, 2);
    let close = |x: f64, y: f64| x == y || (x - y).abs() <= 0.05 * x.abs().max(y.abs());
    for (name, x, y) in [
        ("L_max", a.l_max, b.l_max),
        ("mu", a.mu, b.mu),
        ("Q", a.q, b.q),
        ("M", a.m, b.m),
        ("B", a.b_noise, b.b_noise),
        ("theta", a.theta, b.theta),
    ] {
        assert!(close(x, y), "{name}: {x} vs {y}");
    }
}

#[test]
fn inadmissible_keep_probability_is_refused() {
    let opts = VerifyOptions { xi: Some(0.9), iterations: 10, runs: 2, ..VerifyOptions::default() };
    match verify(&opts, ExecMode::Parallel) {
        Err(IstError::Inadmissible(msg)) => assert!(msg.contains("μ²/(10 L_max²)")),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn unit_keep_probability_verifies_with_zero_variance() {
    let opts = VerifyOptions {
        xi: Some(1.0),
        iterations: 500,
        runs: 4,
        check_samples: 10_000,
        lemma2_samples: 10_000,
        ..VerifyOptions::default()
    };
    let r = verify(&opts, ExecMode::Parallel).unwrap();
    assert_eq!(r.omega, 0.0);
    let last = r.variance.last().unwrap();
    assert_eq!((last.xi, last.observed), (1.0, 0.0));
    assert!(r.lemma2.points.iter().all(|p| p.mean == 0.0));
    assert!(r.unbiasedness.iter().all(|u| u.passed) && r.lemma2.passed);
    assert!(r.theorem.passed && r.passed, "{}", r.to_json().unwrap());
}
