//! Lower estimates of the Gevrey-weighted norm
//!
//! ```text
//! sup_{k', l'} L1^{-|k'|} L2^{-|l'|} k'!^{-α} l'!^{-β} sup |∂_θ^{k'} ∂_I^{l'} f|
//! ```
//!
//! over `T^n × {‖I‖ ≤ radius}`. Only finitely many derivative orders and sample
//! points are inspected, so the result never exceeds the true norm.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{pow_u, FourierTaylorSeries, Monomial, SeriesError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevreyParams {
    pub alpha: f64,
    pub beta: f64,
    pub l1: f64,
    pub l2: f64,
    /// Action radius of the sampled domain.
    pub radius: f64,
}

impl GevreyParams {
    pub fn new(alpha: f64, beta: f64, l1: f64, l2: f64) -> Self {
        Self {
            alpha,
            beta,
            l1,
            l2,
            radius: 1.0,
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    fn validate(&self) -> Result<(), SeriesError> {
        let bad = |name: &str, v: f64| {
            Err(SeriesError::InvalidArgument(format!(
                "{name} must be at least 1, got {v}"
            )))
        };
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("L1", self.l1),
            ("L2", self.l2),
        ] {
            if !(v >= 1.0) {
                return bad(name, v);
            }
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(SeriesError::InvalidArgument(format!(
                "radius must be finite and non-negative, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GevreyNormEstimate {
    pub alpha: f64,
    pub beta: f64,
    pub l1: f64,
    pub l2: f64,
    pub radius: f64,
    pub value: f64,
    /// Largest `(|k'|, |l'|)` inspected.
    pub orders_checked: (u32, u32),
    /// Derivative orders `(k', l')` attaining `value`.
    pub argmax: (Vec<u32>, Vec<u32>),
}

fn multi_factorial(a: &[u32]) -> f64 {
    a.iter()
        .map(|&p| (1..=p).map(f64::from).product::<f64>())
        .product()
}

fn theta_grid(n: usize, per_dim: usize) -> Vec<Vec<f64>> {
    let step = std::f64::consts::TAU / per_dim as f64;
    let mut out = vec![Vec::with_capacity(n)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * per_dim);
        for p in &out {
            for i in 0..per_dim {
                let mut q = p.clone();
                q.push(i as f64 * step);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

fn action_samples(n: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    if radius == 0.0 {
        return out;
    }
    for j in 0..n {
        for s in [-1.0, 1.0] {
            let mut x = vec![0.0; n];
            x[j] = s * radius;
            out.push(x);
        }
    }
    if n <= 6 {
        let c = radius / (n as f64).sqrt();
        for mask in 0..(1u32 << n) {
            out.push(
                (0..n)
                    .map(|j| if mask >> j & 1 == 1 { -c } else { c })
                    .collect(),
            );
        }
    }
    out
}

/// Estimates the Gevrey norm of `f`, inspecting derivative orders with
/// `|k'| ≤ orders.0` and `|l'| ≤ orders.1` (default `(K_max, M_max)`).
pub fn gevrey_norm_estimate(
    f: &FourierTaylorSeries,
    params: GevreyParams,
    orders: Option<(u32, u32)>,
) -> Result<GevreyNormEstimate, SeriesError> {
    params.validate()?;
    let n = f.n();
    let (kmax, mmax) = orders.unwrap_or((f.k_max(), f.m_max()));
    let mut best = 0.0;
    let mut argmax = (vec![0; n], vec![0; n]);

    // Grid depends only on the stored terms, so enlarging the inspected
    // orders can only add candidates.
    let per_dim = {
        let want = 2 * f.max_fourier_norm() as usize + 2;
        let cap = (4096f64.powf(1.0 / n as f64)).floor() as usize;
        want.min(cap.max(2)).max(2)
    };
    let thetas = theta_grid(n, per_dim);
    let actions = action_samples(n, params.radius);
    let terms: Vec<_> = f
        .terms()
        .map(|(key, c)| (key.k().to_vec(), key.l().to_vec(), *c))
        .collect();
    let phases: Vec<Vec<Complex64>> = thetas
        .iter()
        .map(|t| {
            terms
                .iter()
                .map(|(k, _, _)| {
                    let ph: f64 = k.iter().zip(t).map(|(&a, &b)| a as f64 * b).sum();
                    Complex64::from_polar(1.0, ph)
                })
                .collect()
        })
        .collect();

    for dk_deg in 0..=kmax {
        for dk in Monomial::all_of_degree(n, dk_deg) {
            for dl_deg in 0..=mmax {
                for dl in Monomial::all_of_degree(n, dl_deg) {
                    let weight = params.l1.powi(-(dk_deg as i32))
                        * params.l2.powi(-(dl_deg as i32))
                        * multi_factorial(&dk).powf(-params.alpha)
                        * multi_factorial(&dl).powf(-params.beta);
                    // derivative coefficient of each term, evaluated per action sample
                    let mut any = false;
                    let coeffs: Vec<(usize, Complex64, Vec<u32>)> = terms
                        .iter()
                        .enumerate()
                        .filter_map(|(i, (k, l, c))| {
                            if l.iter().zip(&dl).any(|(a, b)| a < b) {
                                return None;
                            }
                            let mut factor = *c;
                            for j in 0..n {
                                factor *= Complex64::new(0.0, k[j] as f64).powu(dk[j]);
                                for t in 0..dl[j] {
                                    factor *= (l[j] - t) as f64;
                                }
                            }
                            if factor == Complex64::new(0.0, 0.0) {
                                return None;
                            }
                            any = true;
                            let rest = l.iter().zip(&dl).map(|(a, b)| a - b).collect();
                            Some((i, factor, rest))
                        })
                        .collect();
                    if !any {
                        continue;
                    }
                    let mut sup: f64 = 0.0;
                    for x in &actions {
                        let vals: Vec<Complex64> = coeffs
                            .iter()
                            .map(|(_, c, rest)| {
                                let mono: f64 =
                                    rest.iter().zip(x).map(|(&p, &v)| pow_u(v, p)).product();
                                c * mono
                            })
                            .collect();
                        // |Fourier coefficient| ≤ sup over θ
                        let mut by_k: std::collections::BTreeMap<&[i32], Complex64> =
                            std::collections::BTreeMap::new();
                        for ((i, _, _), v) in coeffs.iter().zip(&vals) {
                            *by_k.entry(terms[*i].0.as_slice()).or_default() += v;
                        }
                        for v in by_k.values() {
                            sup = sup.max(v.norm());
                        }
                        for ph in &phases {
                            let s: f64 = coeffs
                                .iter()
                                .zip(&vals)
                                .map(|((i, _, _), v)| (v * ph[*i]).re)
                                .sum();
                            sup = sup.max(s.abs());
                        }
                    }
                    let value = weight * sup;
                    if value > best {
                        best = value;
                        argmax = (dk.clone(), dl.clone());
                    }
                }
            }
        }
    }
    Ok(GevreyNormEstimate {
        alpha: params.alpha,
        beta: params.beta,
        l1: params.l1,
        l2: params.l2,
        radius: params.radius,
        value: best,
        orders_checked: (kmax, mmax),
        argmax,
    })
}
