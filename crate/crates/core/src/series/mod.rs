//! Truncated Fourier–Taylor series in angle–action variables.
//!
//! A [`FourierTaylorSeries`] represents a real function on `T^n × R^n`
//!
//! ```text
//! f(θ, I) = Σ c_{k,l} e^{i k·θ} I^l,      |k| ≤ K_max, |l| ≤ M_max
//! ```
//!
//! with angles in radians. Coefficients live in the complex exponential basis
//! (the homological equation is diagonal there) and the stored table always
//! satisfies `c_{-k,l} = conj(c_{k,l})`. Every product-like operation takes an
//! explicit output truncation `(K_out, M_out)`; nothing is truncated silently.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod gevrey;
mod polynomial;
mod taylor;

pub use gevrey::{gevrey_norm_estimate, GevreyNormEstimate, GevreyParams};
pub use polynomial::{ActionPolynomial, Monomial};
pub use taylor::{
    taylor_polynomial, taylor_polynomial_sampled, ClosureFunction, SampledTaylor, SmoothFunction,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point {0:?} lies outside the function domain")]
    OutsideDomain(Vec<f64>),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), SeriesError> {
    if expected == found {
        Ok(())
    } else {
        Err(SeriesError::DimensionMismatch { expected, found })
    }
}

/// Fourier index `k` together with Taylor index `l`.
///
/// Ordering is by Taylor degree `|l|`, then Fourier norm `|k|`, then the
/// indices themselves, which fixes the iteration order of every table.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndexPair {
    degree: u32,
    fourier_norm: u32,
    l: Vec<u32>,
    k: Vec<i32>,
}

impl MultiIndexPair {
    pub fn new(k: Vec<i32>, l: Vec<u32>) -> Self {
        let degree = l.iter().sum();
        let fourier_norm = k.iter().map(|x| x.unsigned_abs()).sum();
        Self {
            degree,
            fourier_norm,
            l,
            k,
        }
    }

    pub fn k(&self) -> &[i32] {
        &self.k
    }

    pub fn l(&self) -> &[u32] {
        &self.l
    }

    /// `|l|`, the grading weight of the term.
    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// `|k| = |k_1| + ... + |k_n|`.
    pub fn fourier_norm(&self) -> u32 {
        self.fourier_norm
    }

    pub fn is_angle_independent(&self) -> bool {
        self.fourier_norm == 0
    }
}

/// True when `k` is zero or its first non-zero entry is positive.
pub fn is_canonical(k: &[i32]) -> bool {
    match k.iter().find(|&&x| x != 0) {
        Some(&x) => x > 0,
        None => true,
    }
}

/// Representative of `{k, -k}` with first non-zero entry positive.
pub fn canonical(k: &[i32]) -> Vec<i32> {
    if is_canonical(k) {
        k.to_vec()
    } else {
        k.iter().map(|x| -x).collect()
    }
}

fn negated(k: &[i32]) -> Vec<i32> {
    k.iter().map(|x| -x).collect()
}

pub(crate) fn pow_u(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

/// Real-valued truncated Fourier–Taylor series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesJson", into = "SeriesJson")]
pub struct FourierTaylorSeries {
    n: usize,
    k_max: u32,
    m_max: u32,
    coeffs: BTreeMap<MultiIndexPair, Complex64>,
}

impl FourierTaylorSeries {
    pub fn zero(n: usize, k_max: u32, m_max: u32) -> Self {
        Self {
            n,
            k_max,
            m_max,
            coeffs: BTreeMap::new(),
        }
    }

    /// `ω·I`.
    pub fn linear(omega: &[f64]) -> Self {
        let n = omega.len();
        let mut s = Self::zero(n, 0, 1);
        for (j, &w) in omega.iter().enumerate() {
            let mut l = vec![0; n];
            l[j] = 1;
            s.push(vec![0; n], l, Complex64::new(w, 0.0));
        }
        s
    }

    /// `c · I^l`.
    pub fn action_monomial(l: &[u32], c: f64) -> Self {
        let n = l.len();
        let mut s = Self::zero(n, 0, l.iter().sum());
        s.push(vec![0; n], l.to_vec(), Complex64::new(c, 0.0));
        s
    }

    /// `amplitude · cos(k·θ)`.
    pub fn cosine(k: &[i32], amplitude: f64) -> Self {
        let mut s = Self::zero(k.len(), 0, 0);
        s.add_real_term(k, &vec![0; k.len()], amplitude, 0.0)
            .expect("lengths agree");
        s
    }

    /// `amplitude · sin(k·θ)`.
    pub fn sine(k: &[i32], amplitude: f64) -> Self {
        let mut s = Self::zero(k.len(), 0, 0);
        s.add_real_term(k, &vec![0; k.len()], 0.0, amplitude)
            .expect("lengths agree");
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    pub fn m_max(&self) -> u32 {
        self.m_max
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|c| *c == Complex64::new(0.0, 0.0))
    }

    /// Stored terms in deterministic order (`|l|` ascending, then `|k|`).
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndexPair, &Complex64)> {
        self.coeffs.iter()
    }

    pub fn coeff(&self, k: &[i32], l: &[u32]) -> Complex64 {
        self.coeffs
            .get(&MultiIndexPair::new(k.to_vec(), l.to_vec()))
            .copied()
            .unwrap_or_default()
    }

    fn push(&mut self, k: Vec<i32>, l: Vec<u32>, c: Complex64) {
        let key = MultiIndexPair::new(k, l);
        self.k_max = self.k_max.max(key.fourier_norm);
        self.m_max = self.m_max.max(key.degree);
        let entry = self.coeffs.entry(key).or_default();
        *entry += c;
    }

    /// Adds `(a cos(k·θ) + b sin(k·θ)) I^l`; the truncation grows to fit.
    pub fn add_real_term(
        &mut self,
        k: &[i32],
        l: &[u32],
        cos_coeff: f64,
        sin_coeff: f64,
    ) -> Result<(), SeriesError> {
        check_dim(self.n, k.len())?;
        check_dim(self.n, l.len())?;
        if !(cos_coeff.is_finite() && sin_coeff.is_finite()) {
            return Err(SeriesError::InvalidArgument(
                "non-finite coefficient".into(),
            ));
        }
        if k.iter().all(|&x| x == 0) {
            self.push(k.to_vec(), l.to_vec(), Complex64::new(cos_coeff, 0.0));
        } else {
            let half = Complex64::new(cos_coeff / 2.0, -sin_coeff / 2.0);
            self.push(k.to_vec(), l.to_vec(), half);
            self.push(negated(k), l.to_vec(), half.conj());
        }
        self.drop_exact_zeros();
        Ok(())
    }

    /// Re-labels the truncation; fails if stored terms would not fit.
    pub fn with_truncation(mut self, k_max: u32, m_max: u32) -> Result<Self, SeriesError> {
        if self.max_fourier_norm() > k_max || self.max_degree() > m_max {
            return Err(SeriesError::InvalidArgument(format!(
                "stored terms exceed truncation (K={k_max}, M={m_max})"
            )));
        }
        self.k_max = k_max;
        self.m_max = m_max;
        Ok(self)
    }

    pub fn max_fourier_norm(&self) -> u32 {
        self.coeffs.keys().map(|k| k.fourier_norm).max().unwrap_or(0)
    }

    pub fn max_degree(&self) -> u32 {
        self.coeffs.keys().map(|k| k.degree).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest violation of `c_{-k,l} = conj(c_{k,l})`.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (key, c) in &self.coeffs {
            let mirror = MultiIndexPair::new(negated(&key.k), key.l.clone());
            let other = self.coeffs.get(&mirror).copied().unwrap_or_default();
            worst = worst.max((c - other.conj()).norm());
        }
        worst
    }

    fn drop_exact_zeros(&mut self) {
        self.coeffs.retain(|_, c| c.re != 0.0 || c.im != 0.0);
    }

    /// Rebuilds the table from its canonical half so that reality holds exactly.
    fn from_canonical_half(
        n: usize,
        k_max: u32,
        m_max: u32,
        half: BTreeMap<MultiIndexPair, Complex64>,
    ) -> Self {
        let mut coeffs = BTreeMap::new();
        for (key, c) in half {
            if key.fourier_norm == 0 {
                if c.re != 0.0 {
                    coeffs.insert(key, Complex64::new(c.re, 0.0));
                }
            } else if c.re != 0.0 || c.im != 0.0 {
                let mirror = MultiIndexPair::new(negated(&key.k), key.l.clone());
                coeffs.insert(mirror, c.conj());
                coeffs.insert(key, c);
            }
        }
        Self {
            n,
            k_max,
            m_max,
            coeffs,
        }
    }

    /// Value at `(θ, I)`, angles in radians.
    pub fn evaluate(&self, theta: &[f64], actions: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (key, c) in &self.coeffs {
            let phase: f64 = key.k.iter().zip(theta).map(|(&k, &t)| k as f64 * t).sum();
            let e = Complex64::from_polar(1.0, phase);
            let mono: f64 = key
                .l
                .iter()
                .zip(actions)
                .map(|(&p, &x)| pow_u(x, p))
                .product();
            acc += (c * e).re * mono;
        }
        acc
    }

    /// `(∂_θ f, ∂_I f)` at `(θ, I)`.
    pub fn gradient(&self, theta: &[f64], actions: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut d_theta = vec![0.0; n];
        let mut d_action = vec![0.0; n];
        for (key, c) in &self.coeffs {
            let phase: f64 = key.k.iter().zip(theta).map(|(&k, &t)| k as f64 * t).sum();
            let ce = c * Complex64::from_polar(1.0, phase);
            let mono: f64 = key
                .l
                .iter()
                .zip(actions)
                .map(|(&p, &x)| pow_u(x, p))
                .product();
            for j in 0..n {
                if key.k[j] != 0 {
                    // Re(i k_j c e^{ik·θ}) = -k_j Im(c e^{ik·θ})
                    d_theta[j] -= key.k[j] as f64 * ce.im * mono;
                }
                if key.l[j] > 0 {
                    let mut partial = key.l[j] as f64;
                    for (i, (&p, &x)) in key.l.iter().zip(actions).enumerate() {
                        partial *= if i == j { pow_u(x, p - 1) } else { pow_u(x, p) };
                    }
                    d_action[j] += ce.re * partial;
                }
            }
        }
        (d_theta, d_action)
    }

    pub fn add(&self, other: &Self) -> Result<Self, SeriesError> {
        check_dim(self.n, other.n)?;
        let mut out = self.clone();
        out.k_max = self.k_max.max(other.k_max);
        out.m_max = self.m_max.max(other.m_max);
        for (key, c) in &other.coeffs {
            *out.coeffs.entry(key.clone()).or_default() += c;
        }
        out.drop_exact_zeros();
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
        out.drop_exact_zeros();
        out
    }

    /// Cauchy product truncated to `|k| ≤ k_out`, `|l| ≤ m_out`.
    pub fn mul(&self, other: &Self, k_out: u32, m_out: u32) -> Result<Self, SeriesError> {
        check_dim(self.n, other.n)?;
        let n = self.n;
        let mut half: BTreeMap<MultiIndexPair, Complex64> = BTreeMap::new();
        let mut k = vec![0i32; n];
        let mut l = vec![0u32; n];
        for (ka, ca) in &self.coeffs {
            for (kb, cb) in &other.coeffs {
                if ka.degree + kb.degree > m_out {
                    continue;
                }
                for j in 0..n {
                    k[j] = ka.k[j] + kb.k[j];
                    l[j] = ka.l[j] + kb.l[j];
                }
                if !is_canonical(&k) || k.iter().map(|x| x.unsigned_abs()).sum::<u32>() > k_out {
                    continue;
                }
                *half
                    .entry(MultiIndexPair::new(k.clone(), l.clone()))
                    .or_default() += ca * cb;
            }
        }
        Ok(Self::from_canonical_half(n, k_out, m_out, half))
    }

    /// `Σ_j ∂_{θ_j} a · ∂_{I_j} b`, canonical half only.
    fn half_bracket(
        a: &Self,
        b: &Self,
        k_out: u32,
        m_out: u32,
    ) -> BTreeMap<MultiIndexPair, Complex64> {
        let n = a.n;
        let mut half: BTreeMap<MultiIndexPair, Complex64> = BTreeMap::new();
        let mut k = vec![0i32; n];
        for (ka, ca) in &a.coeffs {
            if ka.fourier_norm == 0 {
                continue;
            }
            for (kb, cb) in &b.coeffs {
                if kb.degree == 0 || ka.degree + kb.degree - 1 > m_out {
                    continue;
                }
                for j in 0..n {
                    k[j] = ka.k[j] + kb.k[j];
                }
                if !is_canonical(&k) || k.iter().map(|x| x.unsigned_abs()).sum::<u32>() > k_out {
                    continue;
                }
                let prod = ca * cb;
                for j in 0..n {
                    if ka.k[j] == 0 || kb.l[j] == 0 {
                        continue;
                    }
                    let mut l: Vec<u32> = ka.l.iter().zip(&kb.l).map(|(x, y)| x + y).collect();
                    l[j] -= 1;
                    let factor = ka.k[j] as f64 * kb.l[j] as f64;
                    *half.entry(MultiIndexPair::new(k.clone(), l)).or_default() +=
                        Complex64::new(0.0, factor) * prod;
                }
            }
        }
        half
    }

    /// `{self, other} = ∂_θ self · ∂_I other − ∂_I self · ∂_θ other`, truncated.
    pub fn bracket(&self, other: &Self, k_out: u32, m_out: u32) -> Result<Self, SeriesError> {
        poisson_bracket(self, other, k_out, m_out)
    }

    /// `∂_θ^{dk} ∂_I^{dl} f`.
    pub fn derivative(&self, dk: &[u32], dl: &[u32]) -> Result<Self, SeriesError> {
        check_dim(self.n, dk.len())?;
        check_dim(self.n, dl.len())?;
        let mut half = BTreeMap::new();
        for (key, c) in &self.coeffs {
            if !is_canonical(&key.k) {
                continue;
            }
            if key.l.iter().zip(dl).any(|(l, d)| l < d) {
                continue;
            }
            let mut factor = Complex64::new(1.0, 0.0);
            for j in 0..self.n {
                let ik = Complex64::new(0.0, key.k[j] as f64);
                factor *= ik.powu(dk[j]);
                for t in 0..dl[j] {
                    factor *= (key.l[j] - t) as f64;
                }
            }
            let value = c * factor;
            if value.re == 0.0 && value.im == 0.0 {
                continue;
            }
            let l: Vec<u32> = key.l.iter().zip(dl).map(|(l, d)| l - d).collect();
            half.insert(MultiIndexPair::new(key.k.clone(), l), value);
        }
        Ok(Self::from_canonical_half(self.n, self.k_max, self.m_max, half))
    }

    fn filtered(&self, keep: impl Fn(&MultiIndexPair) -> bool) -> Self {
        Self {
            n: self.n,
            k_max: self.k_max,
            m_max: self.m_max,
            coeffs: self
                .coeffs
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, c)| (k.clone(), *c))
                .collect(),
        }
    }

    /// Angle average (the `k = 0` part).
    pub fn average(&self) -> Self {
        self.filtered(|k| k.fourier_norm == 0)
    }

    /// Angle-dependent part (`k ≠ 0`).
    pub fn oscillating(&self) -> Self {
        self.filtered(|k| k.fourier_norm != 0)
    }

    /// Terms of Taylor degree exactly `j`.
    pub fn homogeneous_part(&self, j: u32) -> Self {
        self.filtered(|k| k.degree == j)
    }

    /// Drops terms outside `|k| ≤ k_max`, `|l| ≤ m_max` and relabels the truncation.
    pub fn truncated(&self, k_max: u32, m_max: u32) -> Self {
        let mut out = self.filtered(|k| k.fourier_norm <= k_max && k.degree <= m_max);
        out.k_max = k_max;
        out.m_max = m_max;
        out
    }

    /// Removes coefficients with modulus below `abs_tol`.
    pub fn pruned(&self, abs_tol: f64) -> Self {
        self.filtered(|_| true).retain_above(abs_tol)
    }

    fn retain_above(mut self, abs_tol: f64) -> Self {
        self.coeffs.retain(|_, c| c.norm() >= abs_tol && c.norm() > 0.0);
        self
    }

    /// Cos/sin form over the canonical half-space, used for serialization.
    pub fn real_terms(&self) -> Vec<RealTerm> {
        self.coeffs
            .iter()
            .filter(|(key, _)| is_canonical(&key.k))
            .map(|(key, c)| {
                if key.fourier_norm == 0 {
                    RealTerm {
                        k: key.k.clone(),
                        l: key.l.clone(),
                        re: c.re,
                        im: 0.0,
                    }
                } else {
                    RealTerm {
                        k: key.k.clone(),
                        l: key.l.clone(),
                        re: 2.0 * c.re,
                        im: -2.0 * c.im,
                    }
                }
            })
            .collect()
    }

    /// Builds a series from cos/sin-form terms; repeated indices accumulate.
    pub fn from_real_terms(n: usize, terms: &[RealTerm]) -> Result<Self, SeriesError> {
        let mut s = Self::zero(n, 0, 0);
        for t in terms {
            s.add_real_term(&t.k, &t.l, t.re, t.im)?;
        }
        Ok(s)
    }
}

/// `{a, b}` computed as `P(a,b) − P(b,a)` with `P(a,b) = Σ_j ∂_{θ_j}a ∂_{I_j}b`,
/// so that `{b, a} = −{a, b}` holds bit for bit.
pub fn poisson_bracket(
    a: &FourierTaylorSeries,
    b: &FourierTaylorSeries,
    k_out: u32,
    m_out: u32,
) -> Result<FourierTaylorSeries, SeriesError> {
    check_dim(a.n, b.n)?;
    let ab = FourierTaylorSeries::half_bracket(a, b, k_out, m_out);
    let ba = FourierTaylorSeries::half_bracket(b, a, k_out, m_out);
    let mut half = BTreeMap::new();
    for key in ab.keys().chain(ba.keys()) {
        if half.contains_key(key) {
            continue;
        }
        let x = ab.get(key).copied().unwrap_or_default();
        let y = ba.get(key).copied().unwrap_or_default();
        half.insert(key.clone(), x - y);
    }
    Ok(FourierTaylorSeries::from_canonical_half(
        a.n, k_out, m_out, half,
    ))
}

/// One term `(re cos(k·θ) + im sin(k·θ)) I^l` of the serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealTerm {
    pub k: Vec<i32>,
    pub l: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesJson {
    pub n: usize,
    pub terms: Vec<RealTerm>,
}

impl From<FourierTaylorSeries> for SeriesJson {
    fn from(s: FourierTaylorSeries) -> Self {
        SeriesJson {
            n: s.n,
            terms: s.real_terms(),
        }
    }
}

impl TryFrom<SeriesJson> for FourierTaylorSeries {
    type Error = SeriesError;

    fn try_from(js: SeriesJson) -> Result<Self, Self::Error> {
        if js.n == 0 {
            return Err(SeriesError::InvalidArgument("n must be positive".into()));
        }
        FourierTaylorSeries::from_real_terms(js.n, &js.terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const PHI: f64 = 1.618_033_988_749_895;

    fn cos1() -> FourierTaylorSeries {
        FourierTaylorSeries::cosine(&[1, 0], 1.0)
    }

    #[test]
    fn add_zero_is_identity() {
        let a = cos1().add(&FourierTaylorSeries::action_monomial(&[2, 0], 0.5)).unwrap();
        let z = FourierTaylorSeries::zero(2, 0, 0);
        assert_eq!(a.add(&z).unwrap().real_terms(), a.real_terms());
    }

    #[test]
    fn doubling_cosine() {
        let s = cos1().add(&cos1()).unwrap();
        assert_eq!(s.coeff(&[1, 0], &[0, 0]), Complex64::new(1.0, 0.0));
        assert_eq!(s.coeff(&[-1, 0], &[0, 0]), Complex64::new(1.0, 0.0));
        assert_eq!(s.reality_defect(), 0.0);
    }

    #[test]
    fn disjoint_supports() {
        let s = FourierTaylorSeries::linear(&[1.0, PHI])
            .add(&FourierTaylorSeries::action_monomial(&[2, 0], 0.5))
            .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.coeff(&[0, 0], &[2, 0]).re, 0.5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = FourierTaylorSeries::cosine(&[1], 1.0);
        assert!(matches!(
            a.add(&cos1()),
            Err(SeriesError::DimensionMismatch { .. })
        ));
        assert!(a.mul(&cos1(), 4, 4).is_err());
        assert!(poisson_bracket(&a, &cos1(), 4, 4).is_err());
    }

    #[test]
    fn cosine_squared_matches_trig_identity() {
        let sq = cos1().mul(&cos1(), 4, 0).unwrap();
        // cos²θ = ½ + ½ cos 2θ: exponential coefficients ½ at k=0 and ¼ at k=±2.
        assert_abs_diff_eq!(sq.coeff(&[0, 0], &[0, 0]).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.coeff(&[2, 0], &[0, 0]).re, 0.25, epsilon = 1e-15);
        for t in [0.0, 0.3, 1.7, 4.0] {
            let c = f64::cos(t);
            assert_abs_diff_eq!(sq.evaluate(&[t, 0.0], &[0.0, 0.0]), c * c, epsilon = 1e-14);
        }
    }

    #[test]
    fn action_products_and_zero() {
        let i1 = FourierTaylorSeries::action_monomial(&[1, 0], 1.0);
        let sq = i1.mul(&i1, 0, 2).unwrap();
        assert_eq!(sq.coeff(&[0, 0], &[2, 0]).re, 1.0);
        assert_eq!(sq.len(), 1);
        let z = FourierTaylorSeries::zero(2, 0, 0);
        assert!(cos1().mul(&z, 4, 4).unwrap().is_empty());
        // truncation in degree
        assert!(i1.mul(&i1, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn bracket_of_linear_flow_with_sine() {
        let omega = [1.3, PHI];
        let lin = FourierTaylorSeries::linear(&omega);
        let s = FourierTaylorSeries::sine(&[1, 0], 1.0);
        // ∂_θ(ω·I)=0, so {ω·I, sin θ₁} = −ω₁ cos θ₁.
        let b = poisson_bracket(&lin, &s, 4, 4).unwrap();
        let expected = FourierTaylorSeries::cosine(&[1, 0], -omega[0]);
        assert_eq!(b.real_terms(), expected.real_terms());
        let rev = poisson_bracket(&s, &lin, 4, 4).unwrap();
        assert_eq!(
            rev.real_terms(),
            FourierTaylorSeries::cosine(&[1, 0], omega[0]).real_terms()
        );
    }

    #[test]
    fn bracket_with_angle_independent_series_vanishes() {
        let i1 = FourierTaylorSeries::action_monomial(&[1, 0], 1.0);
        let h = FourierTaylorSeries::action_monomial(&[2, 1], 0.7)
            .add(&FourierTaylorSeries::action_monomial(&[0, 3], -1.1))
            .unwrap();
        assert!(poisson_bracket(&i1, &h, 4, 6).unwrap().is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut s = FourierTaylorSeries::zero(2, 0, 0);
        s.add_real_term(&[1, -2], &[1, 1], 0.3, -0.7).unwrap();
        s.add_real_term(&[0, 1], &[2, 0], 1.1, 0.2).unwrap();
        s.add_real_term(&[0, 0], &[0, 3], 0.4, 0.0).unwrap();
        let th = [0.4, -1.2];
        let ac = [0.3, 0.8];
        let (gt, ga) = s.gradient(&th, &ac);
        let h = 1e-6;
        for j in 0..2 {
            let mut tp = th;
            let mut tm = th;
            tp[j] += h;
            tm[j] -= h;
            let fd = (s.evaluate(&tp, &ac) - s.evaluate(&tm, &ac)) / (2.0 * h);
            assert_abs_diff_eq!(gt[j], fd, epsilon = 1e-8);
            let mut ap = ac;
            let mut am = ac;
            ap[j] += h;
            am[j] -= h;
            let fd = (s.evaluate(&th, &ap) - s.evaluate(&th, &am)) / (2.0 * h);
            assert_abs_diff_eq!(ga[j], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn json_round_trip_preserves_bits() {
        let mut s = FourierTaylorSeries::zero(2, 0, 0);
        s.add_real_term(&[1, -1], &[1, 0], 0.1 + 0.2, std::f64::consts::PI)
            .unwrap();
        s.add_real_term(&[0, 0], &[2, 0], 1.0 / 3.0, 0.0).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.starts_with("{\"n\":2,\"terms\":["));
        let back: FourierTaylorSeries = serde_json::from_str(&text).unwrap();
        for (key, c) in s.terms() {
            let d = back.coeff(key.k(), key.l());
            assert_eq!(c.re.to_bits(), d.re.to_bits());
            assert_eq!(c.im.to_bits(), d.im.to_bits());
        }
        assert_eq!(back.len(), s.len());
    }

    #[test]
    fn json_folds_non_canonical_indices() {
        let text = r#"{"n":1,"terms":[{"k":[-1],"l":[0],"re":1.0,"im":2.0}]}"#;
        let s: FourierTaylorSeries = serde_json::from_str(text).unwrap();
        // cos(-θ) + 2 sin(-θ) = cos θ − 2 sin θ
        let t = s.real_terms();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].k, vec![1]);
        assert_eq!(t[0].re, 1.0);
        assert_eq!(t[0].im, -2.0);
        assert!(serde_json::from_str::<FourierTaylorSeries>(r#"{"n":1,"terms":[],"x":1}"#).is_err());
    }

    fn small_series(n: usize) -> impl Strategy<Value = FourierTaylorSeries> {
        let term = (
            proptest::collection::vec(-2i32..=2, n),
            proptest::collection::vec(0u32..=2, n),
            -1.0f64..1.0,
            -1.0f64..1.0,
        );
        proptest::collection::vec(term, 1..5).prop_map(move |terms| {
            let mut s = FourierTaylorSeries::zero(n, 0, 0);
            for (k, l, a, b) in terms {
                let k: Vec<i32> = k;
                let mut l: Vec<u32> = l;
                // keep total degree ≤ 2 and |k| ≤ 2
                while l.iter().sum::<u32>() > 2 {
                    let j = l.iter().position(|&x| x > 0).unwrap();
                    l[j] -= 1;
                }
                let mut k = k;
                while k.iter().map(|x| x.unsigned_abs()).sum::<u32>() > 2 {
                    let j = k.iter().position(|&x| x != 0).unwrap();
                    k[j] -= k[j].signum();
                }
                s.add_real_term(&k, &l, a, b).unwrap();
            }
            s
        })
    }

    fn max_diff(a: &FourierTaylorSeries, b: &FourierTaylorSeries) -> f64 {
        a.sub(b).unwrap().max_abs()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn products_are_real_commutative_and_associative(
            a in small_series(2), b in small_series(2), c in small_series(2)
        ) {
            let ab = a.mul(&b, 8, 8).unwrap();
            prop_assert_eq!(ab.reality_defect(), 0.0);
            prop_assert!(max_diff(&ab, &b.mul(&a, 8, 8).unwrap()) < 1e-14);
            let left = ab.mul(&c, 12, 12).unwrap();
            let right = a.mul(&b.mul(&c, 12, 12).unwrap(), 12, 12).unwrap();
            prop_assert!(max_diff(&left, &right) < 1e-13);
        }

        #[test]
        fn bracket_is_antisymmetric_and_satisfies_jacobi(
            a in small_series(2), b in small_series(2), c in small_series(2)
        ) {
            let ab = poisson_bracket(&a, &b, 12, 12).unwrap();
            let ba = poisson_bracket(&b, &a, 12, 12).unwrap();
            prop_assert_eq!(ab.scaled(-1.0).real_terms(), ba.real_terms());
            prop_assert!(poisson_bracket(&a, &a, 12, 12).unwrap().is_empty());
            prop_assert_eq!(ab.reality_defect(), 0.0);
            let br = |x: &FourierTaylorSeries, y: &FourierTaylorSeries| poisson_bracket(x, y, 12, 12).unwrap();
            let j = br(&a, &br(&b, &c))
                .add(&br(&b, &br(&c, &a))).unwrap()
                .add(&br(&c, &br(&a, &b))).unwrap();
            prop_assert!(j.max_abs() < 1e-10);
        }

        #[test]
        fn evaluation_of_sum_and_product(a in small_series(2), b in small_series(2),
                                         t1 in -3.0f64..3.0, t2 in -3.0f64..3.0,
                                         x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
            let th = [t1, t2];
            let ac = [x1, x2];
            let sum = a.add(&b).unwrap().evaluate(&th, &ac);
            prop_assert!((sum - a.evaluate(&th, &ac) - b.evaluate(&th, &ac)).abs() < 1e-12);
            let prod = a.mul(&b, 8, 8).unwrap().evaluate(&th, &ac);
            prop_assert!((prod - a.evaluate(&th, &ac) * b.evaluate(&th, &ac)).abs() < 1e-12);
        }
    }
}
