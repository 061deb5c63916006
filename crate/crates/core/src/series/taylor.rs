//! Taylor polynomials `T_I^m h` of action-only functions.

use serde::Serialize;

use super::{check_dim, ActionPolynomial, FourierTaylorSeries, Monomial, SeriesError};

/// A real function of the actions, with optional analytic derivatives.
pub trait SmoothFunction: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }

    /// Whether [`gradient`](Self::gradient) is analytic rather than a difference quotient.
    fn has_gradient(&self) -> bool {
        false
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = 1e-6 * (1.0 + norm(x));
        let mut g = vec![0.0; x.len()];
        let mut y = x.to_vec();
        for j in 0..x.len() {
            y[j] = x[j] + h;
            let fp = self.value(&y);
            y[j] = x[j] - h;
            let fm = self.value(&y);
            y[j] = x[j];
            g[j] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Step used by [`hessian`](Self::hessian), `None` when it is exact.
    fn hessian_step(&self, x: &[f64]) -> Option<f64> {
        Some(1e-5 * (1.0 + norm(x)))
    }

    /// Central differences of the gradient with step `1e-5·(1+‖x‖)`.
    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let h = 1e-5 * (1.0 + norm(x));
        let mut out = vec![vec![0.0; n]; n];
        let mut y = x.to_vec();
        for j in 0..n {
            y[j] = x[j] + h;
            let gp = self.gradient(&y);
            y[j] = x[j] - h;
            let gm = self.gradient(&y);
            y[j] = x[j];
            for i in 0..n {
                out[i][j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (out[i][j] + out[j][i]);
                out[i][j] = s;
                out[j][i] = s;
            }
        }
        out
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type DomainFn = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// [`SmoothFunction`] assembled from closures.
pub struct ClosureFunction {
    n: usize,
    value: ValueFn,
    gradient: Option<VectorFn>,
    domain: Option<DomainFn>,
}

impl ClosureFunction {
    pub fn new(n: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            n,
            value: Box::new(value),
            gradient: None,
            domain: None,
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    pub fn with_domain(mut self, domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Some(Box::new(domain));
        self
    }
}

impl SmoothFunction for ClosureFunction {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.domain.as_ref().map_or(true, |d| d(x))
    }

    fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => {
                let h = 1e-6 * (1.0 + norm(x));
                let mut g = vec![0.0; x.len()];
                let mut y = x.to_vec();
                for j in 0..x.len() {
                    y[j] = x[j] + h;
                    let fp = self.value(&y);
                    y[j] = x[j] - h;
                    let fm = self.value(&y);
                    y[j] = x[j];
                    g[j] = (fp - fm) / (2.0 * h);
                }
                g
            }
        }
    }
}

impl SmoothFunction for ActionPolynomial {
    fn dim(&self) -> usize {
        self.n()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        ActionPolynomial::gradient(self, x)
    }

    fn hessian_step(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        ActionPolynomial::hessian(self, x)
    }
}

/// A series seen as a function of the actions through its angle average.
impl SmoothFunction for FourierTaylorSeries {
    fn dim(&self) -> usize {
        self.n()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let zeros = vec![0.0; self.n()];
        self.average().evaluate(&zeros, x)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; self.n()];
        self.average().gradient(&zeros, x).1
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `T_{center}^m h` for the angle average of `h`, by exact coefficient shifting.
pub fn taylor_polynomial(
    h: &FourierTaylorSeries,
    center: &[f64],
    m: u32,
) -> Result<ActionPolynomial, SeriesError> {
    check_dim(h.n(), center.len())?;
    if m < 2 {
        return Err(SeriesError::InvalidArgument(format!(
            "Taylor order must be at least 2, got {m}"
        )));
    }
    let n = h.n();
    let mut out = ActionPolynomial::zero(n, m)?;
    for (key, c) in h.terms() {
        if !key.is_angle_independent() || key.degree() < 2 {
            continue;
        }
        let l = key.l();
        // (I0 + X)^l = Π_j Σ_{a_j} C(l_j, a_j) I0_j^{l_j − a_j} X_j^{a_j}
        for d in 2..=m.min(key.degree()) {
            for a in Monomial::all_of_degree(n, d) {
                if a.iter().zip(l).any(|(ai, li)| ai > li) {
                    continue;
                }
                let mut coef = c.re;
                for j in 0..n {
                    coef *= binomial(l[j], a[j]) * super::pow_u(center[j], l[j] - a[j]);
                }
                if coef != 0.0 {
                    out.add_term(&a, coef)?;
                }
            }
        }
    }
    Ok(out)
}

/// Taylor polynomial obtained from samples of a smooth function.
#[derive(Clone, Debug, Serialize)]
pub struct SampledTaylor {
    pub polynomial: ActionPolynomial,
    /// Coarsest finite-difference step.
    pub step: f64,
    /// Richardson extrapolation levels applied on top of the central stencil.
    pub richardson_levels: u32,
}

/// `T_{center}^m h` by central finite differences with two Richardson levels.
pub fn taylor_polynomial_sampled(
    h: &dyn SmoothFunction,
    center: &[f64],
    m: u32,
) -> Result<SampledTaylor, SeriesError> {
    let n = h.dim();
    check_dim(n, center.len())?;
    if m < 2 {
        return Err(SeriesError::InvalidArgument(format!(
            "Taylor order must be at least 2, got {m}"
        )));
    }
    if !h.in_domain(center) {
        return Err(SeriesError::OutsideDomain(center.to_vec()));
    }
    let step = 0.1 * (1.0 + norm(center));
    let reach = step * m as f64 / 2.0;
    // every stencil point must be evaluable
    for j in 0..n {
        for s in [-1.0, 1.0] {
            let mut y = center.to_vec();
            y[j] += s * reach;
            if !h.in_domain(&y) {
                return Err(SeriesError::OutsideDomain(y));
            }
        }
    }
    let mut poly = ActionPolynomial::zero(n, m)?;
    for a in ActionPolynomial::basis(n, m) {
        let d0 = stencil(h, center, &a, step);
        let d1 = stencil(h, center, &a, step / 2.0);
        let d2 = stencil(h, center, &a, step / 4.0);
        let r1 = (4.0 * d1 - d0) / 3.0;
        let r2 = (4.0 * d2 - d1) / 3.0;
        let deriv = (16.0 * r2 - r1) / 15.0;
        let fact: f64 = a
            .iter()
            .map(|&p| (1..=p).map(f64::from).product::<f64>())
            .product();
        let c = deriv / fact;
        if c != 0.0 {
            poly.add_term(&a, c)?;
        }
    }
    Ok(SampledTaylor {
        polynomial: poly,
        step,
        richardson_levels: 2,
    })
}

/// Central difference for `∂^a h(x)`; error is even in `h`.
fn stencil(f: &dyn SmoothFunction, x: &[f64], a: &[u32], h: f64) -> f64 {
    let n = x.len();
    let mut idx = vec![0u32; n];
    let mut acc = 0.0;
    let mut y = vec![0.0; n];
    loop {
        let mut w = 1.0;
        for j in 0..n {
            w *= binomial(a[j], idx[j]);
            if idx[j] % 2 == 1 {
                w = -w;
            }
            y[j] = x[j] + h * (a[j] as f64 / 2.0 - idx[j] as f64);
        }
        acc += w * f.value(&y);
        let mut j = 0;
        loop {
            if j == n {
                let total: u32 = a.iter().sum();
                return acc / h.powi(total as i32);
            }
            if idx[j] < a[j] {
                idx[j] += 1;
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn half_norm_squared_at_origin() {
        let h = FourierTaylorSeries::action_monomial(&[2, 0], 0.5)
            .add(&FourierTaylorSeries::action_monomial(&[0, 2], 0.5))
            .unwrap();
        let p = taylor_polynomial(&h, &[0.0, 0.0], 2).unwrap();
        assert_eq!(p, ActionPolynomial::half_norm_squared(2));
    }

    #[test]
    fn cubic_is_copied() {
        let h = FourierTaylorSeries::action_monomial(&[3, 0], 1.0);
        let p = taylor_polynomial(&h, &[0.0, 0.0], 4).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.coefficient(&[3, 0]), 1.0);
    }

    #[test]
    fn order_below_two_is_rejected() {
        let h = FourierTaylorSeries::action_monomial(&[3], 1.0);
        assert!(taylor_polynomial(&h, &[0.0], 1).is_err());
        assert!(taylor_polynomial(&h, &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn exponential_from_samples() {
        let f = ClosureFunction::new(1, |x| x[0].exp());
        let t = taylor_polynomial_sampled(&f, &[0.0], 3).unwrap();
        assert_abs_diff_eq!(t.polynomial.coefficient(&[2]), 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(t.polynomial.coefficient(&[3]), 1.0 / 6.0, epsilon = 1e-8);
        assert_eq!(t.polynomial.len(), 2);
        assert!(t.step > 0.0);
    }

    #[test]
    fn sampled_center_outside_domain() {
        let f = ClosureFunction::new(1, |x| x[0].ln()).with_domain(|x| x[0] > 0.0);
        assert!(matches!(
            taylor_polynomial_sampled(&f, &[-1.0], 3),
            Err(SeriesError::OutsideDomain(_))
        ));
        assert!(taylor_polynomial_sampled(&f, &[2.0], 3).is_ok());
    }

    #[test]
    fn shifted_center_matches_samples() {
        let mut h = FourierTaylorSeries::zero(2, 0, 0);
        h.add_real_term(&[0, 0], &[2, 1], 0.7, 0.0).unwrap();
        h.add_real_term(&[0, 0], &[0, 3], -0.2, 0.0).unwrap();
        h.add_real_term(&[0, 0], &[1, 1], 0.4, 0.0).unwrap();
        let c = [0.3, -0.5];
        let exact = taylor_polynomial(&h, &c, 3).unwrap();
        let sampled = taylor_polynomial_sampled(&h, &c, 3).unwrap().polynomial;
        assert!(exact.sub(&sampled).unwrap().sup_norm() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn remainder_is_higher_order(coefs in proptest::collection::vec(-1.0f64..1.0, 6),
                                     c0 in -0.5f64..0.5, c1 in -0.5f64..0.5,
                                     d0 in -1.0f64..1.0, d1 in -1.0f64..1.0) {
            let exps: [[u32; 2]; 6] = [[2, 0], [1, 1], [0, 2], [3, 0], [1, 2], [2, 2]];
            let mut h = FourierTaylorSeries::linear(&[1.0, 2.0]);
            for (e, c) in exps.iter().zip(&coefs) {
                h.add_real_term(&[0, 0], e, *c, 0.0).unwrap();
            }
            let center = [c0, c1];
            let len = (d0 * d0 + d1 * d1).sqrt().max(1e-3);
            let x = [1e-2 * d0 / len, 1e-2 * d1 / len];
            let zero = [0.0, 0.0];
            let shifted = [c0 + x[0], c1 + x[1]];
            let grad = h.gradient(&zero, &center).1;
            let lhs = h.evaluate(&zero, &shifted) - h.evaluate(&zero, &center)
                - grad[0] * x[0] - grad[1] * x[1];
            for m in 2..=4u32 {
                let p = taylor_polynomial(&h, &center, m).unwrap();
                let err = (p.evaluate(&x) - lhs).abs();
                // remainder O(‖X‖^{m+1}) with modest constants
                prop_assert!(err < 1e-8 || err < 50.0 * 1e-2f64.powi(m as i32 + 1));
            }
        }
    }
}
