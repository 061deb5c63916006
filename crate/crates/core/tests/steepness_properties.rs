use tori_core::series::ClosureFunction;
use tori_core::steepness::{
    auto_tune, genericity_scan, kolmogorov_check, m0, nekhoroshev_exponents,
    stability_time_prediction, stably_steep_check, steep_function_check, verify_function_witness,
    verify_polynomial_witness, SamplingConfig,
};
use tori_core::ActionPolynomial;

fn quadratic(a: f64, b: f64, c: f64) -> ActionPolynomial {
    ActionPolynomial::from_terms(2, 2, [(&[2, 0][..], a), (&[1, 1][..], b), (&[0, 2][..], c)]).unwrap()
}

fn light() -> SamplingConfig {
    SamplingConfig {
        subspaces_per_dim: 32,
        perturbations: 8,
        xi_points: 8,
        eta_per_xi: 16,
        ..SamplingConfig::default()
    }
}

#[test]
fn exponent_relations() {
    assert_eq!([m0(1).unwrap(), m0(2).unwrap(), m0(3).unwrap(), m0(4).unwrap()], [2, 4, 6, 10]);
    for n in 1..5 {
        for p in [1.0, 2.0, 3.5] {
            let e = nekhoroshev_exponents(n, p, 1.0).unwrap();
            assert!((e.radius_exponent * e.threshold_exponent - 1.0).abs() < 1e-15);
            assert_eq!(e.time_exponent, e.radius_exponent);
            let e2 = nekhoroshev_exponents(n, p, 2.0).unwrap();
            assert!((2.0 * e2.time_exponent - e.time_exponent).abs() < 1e-15);
        }
    }
    assert!(nekhoroshev_exponents(2, 0.5, 1.0).is_err());
}

#[test]
fn prediction_grows_as_radius_shrinks() {
    let a = stability_time_prediction(1.0, 0.5, 0.25).unwrap();
    let b = stability_time_prediction(1.0, 0.5, 0.0625).unwrap();
    assert_eq!(a.log_log_t, 2.0);
    assert_eq!(b.log_log_t, 4.0);
    assert!(b.t.unwrap() > a.t.unwrap());
    let far = stability_time_prediction(1.0, 0.5, 1e-6).unwrap();
    assert!(far.t.is_none() && far.log_t.is_infinite());
}

#[test]
fn convex_accepted_and_saddle_refuted() {
    let convex = quadratic(0.5, 0.0, 0.5);
    let v = stably_steep_check(&convex, 1e-2, 1e-2, 1e-1, &light()).unwrap();
    assert!(v.accepted, "{:?}", v.witness);
    let saddle = quadratic(0.5, 0.0, -0.5);
    let v = stably_steep_check(&saddle, 1e-2, 1e-2, 1e-1, &light()).unwrap();
    assert!(!v.accepted);
    let w = v.witness.unwrap();
    assert!(w.value < w.bound);
    assert!(verify_polynomial_witness(&w, &light().minimizer()).unwrap());
}

#[test]
fn verdict_survives_rotation_of_actions() {
    // (cos t I1 + sin t I2)^2/2 + (-sin t I1 + cos t I2)^2/2 is invariant, the saddle is not
    let t: f64 = 0.4;
    let (c, s) = (t.cos(), t.sin());
    let rotated_saddle = quadratic(0.5 * (c * c - s * s), 2.0 * c * s, 0.5 * (s * s - c * c));
    let v = stably_steep_check(&rotated_saddle, 1e-2, 1e-2, 1e-1, &light()).unwrap();
    assert!(!v.accepted);
    let rotated_convex = quadratic(0.5, 0.0, 0.5);
    assert!(stably_steep_check(&rotated_convex, 1e-2, 1e-2, 1e-1, &light()).unwrap().accepted);
}

#[test]
fn auto_tune_reports_candidates() {
    let tuned = auto_tune(&quadratic(0.5, 0.0, 0.5), &light()).unwrap();
    assert!(tuned.verdict.accepted);
    assert_eq!(tuned.candidates_tried, 1);
    let tuned = auto_tune(&quadratic(0.5, 0.0, -0.5), &light()).unwrap();
    assert!(!tuned.verdict.accepted);
    assert_eq!(tuned.candidates_tried, 36);
}

fn convex_function() -> ClosureFunction {
    ClosureFunction::new(2, |x| x[0] + 0.5 * (x[0] * x[0] + x[1] * x[1]) + x[0].powi(3) / 6.0)
        .with_gradient(|x| vec![1.0 + x[0] + 0.5 * x[0] * x[0], x[1]])
}

/// The line orthogonal to `(1, 1)` is isotropic for the quadratic part.
fn saddle_function() -> ClosureFunction {
    ClosureFunction::new(2, |x| x[0] + x[1] + 0.5 * (x[0] * x[0] - x[1] * x[1]))
        .with_gradient(|x| vec![1.0 + x[0], 1.0 - x[1]])
}

#[test]
fn steep_function_check_separates_examples() {
    let points = vec![vec![0.0, 0.0], vec![0.1, -0.05], vec![-0.1, 0.1]];
    let v = steep_function_check(&convex_function(), &points, 0.5, 1e-2, 1e-1, &[1.0], &light()).unwrap();
    assert!(v.accepted, "{:?}", v.witness);
    let v = steep_function_check(&saddle_function(), &points, 0.5, 1e-2, 1e-1, &[1.0], &light()).unwrap();
    assert!(!v.accepted);
    let w = v.witness.unwrap();
    assert!(verify_function_witness(&saddle_function(), &w, &light().minimizer()).unwrap());
    let no_grad = ClosureFunction::new(2, |x| x[0] * x[0]);
    assert!(steep_function_check(&no_grad, &points, 0.5, 1e-2, 1e-1, &[1.0], &light()).is_err());
}

#[test]
fn kolmogorov_flags_rank_deficiency() {
    let points = vec![vec![0.0, 0.0], vec![0.2, 0.1]];
    let v = kolmogorov_check(&convex_function(), &points, 1e-3).unwrap();
    assert!(v.accepted);
    let degenerate = ClosureFunction::new(2, |x| (x[0] + x[1]).powi(2));
    let v = kolmogorov_check(&degenerate, &points, 1e-3).unwrap();
    assert!(!v.accepted);
    assert!(v.witness.unwrap().value < 1e-3);
}

#[test]
fn genericity_scan_is_reproducible() {
    let cfg = light();
    let a = genericity_scan(None, 2, 4, 6, 1.0, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| genericity_scan(None, 2, 4, 6, 1.0, &cfg).unwrap());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.records.len(), 6);
    assert_eq!(a.accepted, a.records.iter().filter(|t| t.accepted).count());
}
