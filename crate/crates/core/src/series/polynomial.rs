//! Real polynomials in the actions without constant or linear part.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_dim, pow_u, SeriesError};

/// Exponent vector of `I^l`, ordered by total degree first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    degree: u32,
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self {
            degree: exponents.iter().sum(),
            exponents,
        }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// All exponent vectors in `n` variables with total degree `d`,
    /// in lexicographically decreasing order.
    pub fn all_of_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
        fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if prefix.len() + 1 == n {
                prefix.push(d);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for first in (0..=d).rev() {
                prefix.push(first);
                rec(n, d - first, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        if n > 0 {
            rec(n, d, &mut Vec::with_capacity(n), &mut out);
        }
        out
    }
}

/// Element of `P₂(n, m)`: `P(X) = Σ_{2 ≤ |l| ≤ m} c_l X^l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolynomialJson", into = "PolynomialJson")]
pub struct ActionPolynomial {
    n: usize,
    m: u32,
    coeffs: BTreeMap<Monomial, f64>,
}

impl ActionPolynomial {
    pub fn zero(n: usize, m: u32) -> Result<Self, SeriesError> {
        if n == 0 {
            return Err(SeriesError::InvalidArgument("n must be positive".into()));
        }
        if m < 2 {
            return Err(SeriesError::InvalidArgument(format!(
                "maximal degree must be at least 2, got {m}"
            )));
        }
        Ok(Self {
            n,
            m,
            coeffs: BTreeMap::new(),
        })
    }

    pub fn from_terms<'a>(
        n: usize,
        m: u32,
        terms: impl IntoIterator<Item = (&'a [u32], f64)>,
    ) -> Result<Self, SeriesError> {
        let mut p = Self::zero(n, m)?;
        for (l, c) in terms {
            p.add_term(l, c)?;
        }
        Ok(p)
    }

    /// `‖X‖²/2`.
    pub fn half_norm_squared(n: usize) -> Self {
        let mut p = Self::zero(n, 2).expect("n > 0");
        for j in 0..n {
            let mut l = vec![0; n];
            l[j] = 2;
            p.add_term(&l, 0.5).expect("valid monomial");
        }
        p
    }

    pub fn add_term(&mut self, l: &[u32], c: f64) -> Result<(), SeriesError> {
        check_dim(self.n, l.len())?;
        let mono = Monomial::new(l.to_vec());
        if mono.degree < 2 || mono.degree > self.m {
            return Err(SeriesError::InvalidIndex(format!(
                "monomial degree {} outside 2..={}",
                mono.degree, self.m
            )));
        }
        if !c.is_finite() {
            return Err(SeriesError::InvalidArgument("non-finite coefficient".into()));
        }
        let entry = self.coeffs.entry(mono).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.coeffs.remove(&Monomial::new(l.to_vec()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn coefficient(&self, l: &[u32]) -> f64 {
        self.coeffs
            .get(&Monomial::new(l.to_vec()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.coeffs.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Coefficient-sup norm, the norm used for the ρ-ball around a polynomial.
    pub fn sup_norm(&self) -> f64 {
        self.coeffs.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn add(&self, other: &Self) -> Result<Self, SeriesError> {
        check_dim(self.n, other.n)?;
        let mut out = self.clone();
        out.m = self.m.max(other.m);
        for (mono, c) in &other.coeffs {
            out.add_term(&mono.exponents, *c)?;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, SeriesError> {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= factor;
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }

    /// Drops monomials above degree `m` and relabels the maximal degree.
    pub fn truncated(&self, m: u32) -> Result<Self, SeriesError> {
        let mut out = Self::zero(self.n, m)?;
        for (mono, c) in &self.coeffs {
            if mono.degree <= m {
                out.coeffs.insert(mono.clone(), *c);
            }
        }
        Ok(out)
    }

    /// Relabels the maximal degree without dropping anything.
    pub fn with_degree(&self, m: u32) -> Result<Self, SeriesError> {
        if m < 2 || self.coeffs.keys().any(|k| k.degree > m) {
            return Err(SeriesError::InvalidArgument(format!(
                "cannot relabel to maximal degree {m}"
            )));
        }
        let mut out = self.clone();
        out.m = m;
        Ok(out)
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .map(|(mono, c)| {
                c * mono
                    .exponents
                    .iter()
                    .zip(x)
                    .map(|(&p, &v)| pow_u(v, p))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for (mono, c) in &self.coeffs {
            for (j, gj) in g.iter_mut().enumerate() {
                let pj = mono.exponents[j];
                if pj == 0 {
                    continue;
                }
                let mut term = c * pj as f64;
                for (i, (&p, &v)) in mono.exponents.iter().zip(x).enumerate() {
                    term *= if i == j { pow_u(v, p - 1) } else { pow_u(v, p) };
                }
                *gj += term;
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut h = vec![vec![0.0; n]; n];
        for (mono, c) in &self.coeffs {
            let e = &mono.exponents;
            for a in 0..n {
                for b in a..n {
                    let mut d = e.clone();
                    let mut factor = *c;
                    if d[a] == 0 {
                        continue;
                    }
                    factor *= d[a] as f64;
                    d[a] -= 1;
                    if d[b] == 0 {
                        continue;
                    }
                    factor *= d[b] as f64;
                    d[b] -= 1;
                    let v: f64 = d.iter().zip(x).map(|(&p, &v)| pow_u(v, p)).product();
                    h[a][b] += factor * v;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                h[a][b] = h[b][a];
            }
        }
        h
    }

    /// Coefficients `a_0..a_m` of `t ↦ P(t u)`.
    pub fn restrict_to_line(&self, u: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.m as usize + 1];
        for (mono, c) in &self.coeffs {
            let v: f64 = mono
                .exponents
                .iter()
                .zip(u)
                .map(|(&p, &x)| pow_u(x, p))
                .product();
            a[mono.degree as usize] += c * v;
        }
        a
    }

    /// Monomial basis of `P₂(n, m)`, degree by degree.
    pub fn basis(n: usize, m: u32) -> Vec<Vec<u32>> {
        (2..=m).flat_map(|d| Monomial::all_of_degree(n, d)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialTermJson {
    pub l: Vec<u32>,
    pub re: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialJson {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    pub terms: Vec<PolynomialTermJson>,
}

impl From<ActionPolynomial> for PolynomialJson {
    fn from(p: ActionPolynomial) -> Self {
        PolynomialJson {
            n: p.n,
            m: Some(p.m),
            terms: p
                .coeffs
                .iter()
                .map(|(mono, c)| PolynomialTermJson {
                    l: mono.exponents.clone(),
                    re: *c,
                })
                .collect(),
        }
    }
}

impl TryFrom<PolynomialJson> for ActionPolynomial {
    type Error = SeriesError;

    fn try_from(js: PolynomialJson) -> Result<Self, Self::Error> {
        let m = js.m.unwrap_or_else(|| {
            js.terms
                .iter()
                .map(|t| t.l.iter().sum::<u32>())
                .max()
                .unwrap_or(2)
                .max(2)
        });
        let mut p = ActionPolynomial::zero(js.n, m)?;
        for t in &js.terms {
            p.add_term(&t.l, t.re)?;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_low_degree_terms() {
        let mut p = ActionPolynomial::zero(2, 3).unwrap();
        assert!(p.add_term(&[1, 0], 1.0).is_err());
        assert!(p.add_term(&[0, 0], 1.0).is_err());
        assert!(p.add_term(&[2, 2], 1.0).is_err());
        assert!(ActionPolynomial::zero(2, 1).is_err());
    }

    #[test]
    fn monomial_enumeration_counts() {
        assert_eq!(Monomial::all_of_degree(2, 3).len(), 4);
        assert_eq!(Monomial::all_of_degree(3, 2).len(), 6);
        assert_eq!(ActionPolynomial::basis(2, 4).len(), 3 + 4 + 5);
    }

    #[test]
    fn derivatives_of_mixed_polynomial() {
        // P = x²y + 3y³ − x²/2
        let p = ActionPolynomial::from_terms(
            2,
            3,
            [(&[2u32, 1][..], 1.0), (&[0, 3][..], 3.0), (&[2, 0][..], -0.5)],
        )
        .unwrap();
        let x = [0.7, -1.3];
        assert_abs_diff_eq!(
            p.evaluate(&x),
            0.49 * -1.3 + 3.0 * (-1.3f64).powi(3) - 0.245,
            epsilon = 1e-14
        );
        let g = p.gradient(&x);
        assert_abs_diff_eq!(g[0], 2.0 * 0.7 * -1.3 - 0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.49 + 9.0 * 1.69, epsilon = 1e-13);
        let h = p.hessian(&x);
        assert_abs_diff_eq!(h[0][0], 2.0 * -1.3 - 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[0][1], 1.4, epsilon = 1e-14);
        assert_abs_diff_eq!(h[1][0], 1.4, epsilon = 1e-14);
        assert_abs_diff_eq!(h[1][1], 18.0 * -1.3, epsilon = 1e-13);
    }

    #[test]
    fn line_restriction() {
        let p = ActionPolynomial::from_terms(2, 2, [(&[2u32, 0][..], 1.0), (&[0, 2][..], -1.0)])
            .unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = p.restrict_to_line(&[s, s]);
        assert_abs_diff_eq!(a[2], 0.0, epsilon = 1e-16);
        let a = p.restrict_to_line(&[1.0, 0.0]);
        assert_eq!(a, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn json_round_trip() {
        let p = ActionPolynomial::from_terms(
            2,
            4,
            [(&[1u32, 1][..], 0.1 + 0.2), (&[0, 4][..], -1.0 / 7.0)],
        )
        .unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(!text.contains("\"k\""));
        let back: ActionPolynomial = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
