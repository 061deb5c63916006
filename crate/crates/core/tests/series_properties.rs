use proptest::prelude::*;
use tori_core::series::{
    gevrey_norm_estimate, poisson_bracket, taylor_polynomial, taylor_polynomial_sampled,
    ClosureFunction, GevreyParams,
};
use tori_core::FourierTaylorSeries;

type Term = (i32, i32, u32, u32, f64, f64);

fn build(terms: &[Term]) -> FourierTaylorSeries {
    let mut s = FourierTaylorSeries::zero(2, 0, 0);
    for &(k1, k2, l1, l2, a, b) in terms {
        s.add_real_term(&[k1, k2], &[l1, l2], a, b).unwrap();
    }
    s
}

fn series() -> impl Strategy<Value = FourierTaylorSeries> {
    prop::collection::vec(
        (-2i32..=2, -2i32..=2, 0u32..=2, 0u32..=2, -1.0..1.0f64, -1.0..1.0f64),
        1..6,
    )
    .prop_map(|t| build(&t))
}

fn point() -> impl Strategy<Value = ([f64; 2], [f64; 2])> {
    (
        (0.0..6.3f64, 0.0..6.3f64),
        (-0.8..0.8f64, -0.8..0.8f64),
    )
        .prop_map(|((a, b), (c, d))| ([a, b], [c, d]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn product_evaluates_pointwise(a in series(), b in series(), (t, i) in point()) {
        let p = a.mul(&b, 8, 8).unwrap();
        let want = a.evaluate(&t, &i) * b.evaluate(&t, &i);
        prop_assert!((p.evaluate(&t, &i) - want).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn product_commutes(a in series(), b in series()) {
        let ab = a.mul(&b, 8, 8).unwrap();
        let ba = b.mul(&a, 8, 8).unwrap();
        prop_assert!(ab.sub(&ba).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn bracket_is_antisymmetric(a in series(), b in series()) {
        let ab = poisson_bracket(&a, &b, 8, 8).unwrap();
        let ba = poisson_bracket(&b, &a, 8, 8).unwrap();
        prop_assert_eq!(ab.real_terms(), ba.scaled(-1.0).real_terms());
    }

    #[test]
    fn bracket_matches_gradients(a in series(), b in series(), (t, i) in point()) {
        let br = poisson_bracket(&a, &b, 8, 8).unwrap();
        let (ta, ia) = a.gradient(&t, &i);
        let (tb, ib) = b.gradient(&t, &i);
        let want: f64 = (0..2).map(|j| ta[j] * ib[j] - tb[j] * ia[j]).sum();
        prop_assert!((br.evaluate(&t, &i) - want).abs() < 1e-11 * (1.0 + want.abs()));
    }

    #[test]
    fn jacobi_identity(a in series(), b in series(), c in series()) {
        let br = |x: &FourierTaylorSeries, y: &FourierTaylorSeries| poisson_bracket(x, y, 12, 12).unwrap();
        let sum = br(&a, &br(&b, &c)).add(&br(&b, &br(&c, &a))).unwrap().add(&br(&c, &br(&a, &b))).unwrap();
        let scale = a.max_abs() * b.max_abs() * c.max_abs();
        prop_assert!(sum.max_abs() <= 1e-12 * (1.0 + scale) * 100.0);
    }

    #[test]
    fn results_are_real(a in series(), b in series()) {
        prop_assert_eq!(a.mul(&b, 8, 8).unwrap().reality_defect(), 0.0);
        prop_assert_eq!(poisson_bracket(&a, &b, 8, 8).unwrap().reality_defect(), 0.0);
    }

    #[test]
    fn gradient_matches_differences(a in series(), (t, i) in point()) {
        let (gt, gi) = a.gradient(&t, &i);
        let h = 1e-6;
        for j in 0..2 {
            let (mut tp, mut tm) = (t, t);
            tp[j] += h;
            tm[j] -= h;
            let fd = (a.evaluate(&tp, &i) - a.evaluate(&tm, &i)) / (2.0 * h);
            prop_assert!((fd - gt[j]).abs() < 1e-7);
            let (mut ip, mut im) = (i, i);
            ip[j] += h;
            im[j] -= h;
            let fd = (a.evaluate(&t, &ip) - a.evaluate(&t, &im)) / (2.0 * h);
            prop_assert!((fd - gi[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn json_round_trip(a in series()) {
        let text = serde_json::to_string(&a).unwrap();
        let back: FourierTaylorSeries = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.real_terms(), a.real_terms());
    }

    #[test]
    fn taylor_polynomial_is_exact_for_polynomials(a in series(), c in (-0.5..0.5f64, -0.5..0.5f64), x in (-0.3..0.3f64, -0.3..0.3f64)) {
        let avg = a.average();
        let center = [c.0, c.1];
        let poly = taylor_polynomial(&a, &center, 4).unwrap();
        let y = [c.0 + x.0, c.1 + x.1];
        let z = [0.0, 0.0];
        let (_, g) = avg.gradient(&z, &center);
        let want = avg.evaluate(&z, &y) - avg.evaluate(&z, &center) - g[0] * x.0 - g[1] * x.1;
        prop_assert!((poly.evaluate(&[x.0, x.1]) - want).abs() < 1e-12);
    }
}

#[test]
fn sampled_taylor_agrees_with_exact() {
    let h = build(&[(0, 0, 3, 0, 1.0, 0.0), (0, 0, 1, 2, -0.5, 0.0), (0, 0, 2, 2, 0.25, 0.0)]);
    let f = {
        let h = h.clone();
        ClosureFunction::new(2, move |x| h.evaluate(&[0.0, 0.0], x))
    };
    let center = [0.2, -0.1];
    let exact = taylor_polynomial(&h, &center, 4).unwrap();
    let sampled = taylor_polynomial_sampled(&f, &center, 4).unwrap();
    assert!(exact.sub(&sampled.polynomial).unwrap().sup_norm() < 1e-6);
}

#[test]
fn gevrey_estimate_grows_with_radius() {
    let h = build(&[(1, 0, 0, 0, 0.1, 0.0), (0, 0, 2, 0, 0.5, 0.0), (1, -1, 1, 1, 0.0, 0.2)]);
    let values: Vec<f64> = [0.0, 0.25, 0.5, 1.0]
        .iter()
        .map(|&r| {
            gevrey_norm_estimate(&h, GevreyParams::new(1.0, 1.0, 1.0, 1.0).with_radius(r), None)
                .unwrap()
                .value
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]), "{values:?}");
    assert!(values[0] > 0.0);
}

#[test]
fn gevrey_rejects_parameters_below_one() {
    let h = build(&[(1, 0, 0, 0, 1.0, 0.0)]);
    assert!(gevrey_norm_estimate(&h, GevreyParams::new(0.5, 1.0, 1.0, 1.0), None).is_err());
}
