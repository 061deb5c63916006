//! Birkhoff normal form near the torus `I = 0`.
//!
//! Transformations are Lie series: `exp(ad_χ) F = Σ_j ad_χ^j F / j!` with
//! `ad_χ F = {F, χ}`, which equals `F ∘ φ_χ` for the time-one flow of `χ`.
//! A monomial `e^{ik·θ} I^l` has order `|l|`. Angle-dependent terms of order 0
//! and 1 are removed first by iteration (this may shift the frequency), then
//! orders `2..=m` are normalized one at a time.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diophantine::{self, DiophantineError};
use crate::series::{
    is_canonical, poisson_bracket, ActionPolynomial, FourierTaylorSeries, SeriesError,
};

/// Fourier bound passed to brackets; the real budget is enforced afterwards.
const UNBOUNDED_K: u32 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BirkhoffError {
    #[error("small divisor |k·ω| = {divisor:e} below floor {floor:e} at k = {k:?}")]
    SmallDivisor { k: Vec<i32>, divisor: f64, floor: f64 },
    #[error("truncation budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("removal of order-0/1 angle terms did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Diophantine(#[from] DiophantineError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallDivisorEntry {
    pub k: Vec<i32>,
    pub divisor: f64,
}

fn dot(k: &[i32], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, &w)| a as f64 * w).sum()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `ω·∂_θ χ = g − ⟨g⟩` term by term.
pub fn homological_solve(
    g: &FourierTaylorSeries,
    omega: &[f64],
    divisor_floor: f64,
) -> Result<FourierTaylorSeries, BirkhoffError> {
    let mut log = BTreeMap::new();
    homological_solve_logged(g, omega, divisor_floor, &mut log)
}

fn homological_solve_logged(
    g: &FourierTaylorSeries,
    omega: &[f64],
    divisor_floor: f64,
    log: &mut BTreeMap<Vec<i32>, f64>,
) -> Result<FourierTaylorSeries, BirkhoffError> {
    if g.n() != omega.len() {
        return Err(SeriesError::DimensionMismatch {
            expected: g.n(),
            found: omega.len(),
        }
        .into());
    }
    let scale = norm2(omega);
    let mut chi = FourierTaylorSeries::zero(g.n(), g.k_max(), g.m_max());
    for (key, c) in g.terms() {
        if key.is_angle_independent() || !is_canonical(key.k()) {
            continue;
        }
        let d = dot(key.k(), omega);
        let guard = 1e-13 * scale * key.fourier_norm() as f64;
        if d.abs() < divisor_floor.max(guard) {
            return Err(BirkhoffError::SmallDivisor {
                k: key.k().to_vec(),
                divisor: d.abs(),
                floor: divisor_floor,
            });
        }
        log.entry(key.k().to_vec()).or_insert(d.abs());
        // c / (i d) in cos/sin form: a cos + b sin  ↦  (a sin − b cos)/d
        let q = c / Complex64::new(0.0, d);
        chi.add_real_term(key.k(), key.l(), 2.0 * q.re, -2.0 * q.im)?;
    }
    Ok(chi.with_truncation(g.k_max(), g.m_max())?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnfConfig {
    /// Largest `|k|₁` allowed in any intermediate series.
    pub k_budget: u32,
    /// Small-divisor floor; `None` uses `γ_est·K^{-τ}/2`.
    pub divisor_floor: Option<f64>,
    /// Diophantine exponent for the default floor; `None` means `n − 1`.
    pub tau: Option<f64>,
    /// Residual tolerance relative to the largest input coefficient.
    pub tol_hom: f64,
    /// Coefficients below `prune_rel · scale` are dropped.
    pub prune_rel: f64,
    pub max_low_order_iterations: usize,
    pub max_lie_terms: usize,
}

impl Default for BnfConfig {
    fn default() -> Self {
        Self {
            k_budget: 64,
            divisor_floor: None,
            tau: None,
            tol_hom: 1e-10,
            prune_rel: 1e-18,
            max_low_order_iterations: 200,
            max_lie_terms: 200,
        }
    }
}

/// Default floor `γ_est(ω, τ, K)·K^{-τ}/2`.
pub fn default_divisor_floor(omega: &[f64], tau: f64, k: u32) -> Result<f64, BirkhoffError> {
    let depth = k.min(diophantine::default_scan_depth(omega.len())).max(1);
    let report = diophantine::gamma_estimate(omega, tau, depth)?;
    Ok(report.gamma_est * (depth as f64).powf(-tau) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// Homogeneity order removed; 0 covers the joint order-0/1 stage.
    pub order: u32,
    pub chi: FourierTaylorSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormResult {
    pub order_m: u32,
    pub omega: Vec<f64>,
    /// Linear coefficient of the normal form; differs from `omega` when the
    /// input carries angle-dependent terms of order 0 or 1.
    pub frequency: Vec<f64>,
    pub energy_offset: f64,
    #[serde(rename = "H_m")]
    pub h_m: ActionPolynomial,
    pub generators: Vec<Generator>,
    pub transformed: FourierTaylorSeries,
    /// Largest angle-dependent coefficient of `transformed` per order.
    pub remainder_norm_by_order: BTreeMap<u32, f64>,
    /// Largest angle-dependent coefficient of orders `≤ m`, relative to the input scale.
    pub residual: f64,
    pub small_divisor_log: Vec<SmallDivisorEntry>,
    pub divisor_floor: f64,
    pub low_order_iterations: usize,
}

impl NormalFormResult {
    /// `frequency·I + H_m + energy_offset` as a series.
    pub fn normal_form(&self) -> FourierTaylorSeries {
        let n = self.frequency.len();
        let mut s = FourierTaylorSeries::linear(&self.frequency);
        s.add_real_term(&vec![0; n], &vec![0; n], self.energy_offset, 0.0)
            .expect("dimensions agree");
        for (mono, c) in self.h_m.terms() {
            s.add_real_term(&vec![0; n], mono.exponents(), c, 0.0)
                .expect("dimensions agree");
        }
        s
    }
}

struct Work {
    k_budget: u32,
    m_work: u32,
    prune_abs: f64,
    max_terms: usize,
}

impl Work {
    fn clean(&self, s: FourierTaylorSeries) -> Result<FourierTaylorSeries, BirkhoffError> {
        let s = s.pruned(self.prune_abs);
        if s.max_fourier_norm() > self.k_budget {
            let overflow = s
                .terms()
                .filter(|(k, _)| k.fourier_norm() > self.k_budget)
                .map(|(_, c)| c.norm())
                .fold(0.0, f64::max);
            return Err(BirkhoffError::BudgetExceeded(format!(
                "Fourier modes beyond |k| = {} reach magnitude {overflow:e}",
                self.k_budget
            )));
        }
        Ok(s.truncated(self.k_budget, self.m_work))
    }

    fn lie(
        &self,
        h: &FourierTaylorSeries,
        chi: &FourierTaylorSeries,
    ) -> Result<FourierTaylorSeries, BirkhoffError> {
        let mut out = h.clone();
        let mut term = h.clone();
        for j in 1..=self.max_terms {
            term = poisson_bracket(&term, chi, UNBOUNDED_K, self.m_work)?
                .scaled(1.0 / j as f64)
                .pruned(self.prune_abs);
            if term.is_empty() {
                return self.clean(out);
            }
            out = out.add(&term)?;
        }
        Err(BirkhoffError::BudgetExceeded(format!(
            "Lie series did not terminate within {} terms",
            self.max_terms
        )))
    }
}

fn linear_part(h: &FourierTaylorSeries) -> Vec<f64> {
    let n = h.n();
    (0..n)
        .map(|j| {
            let mut l = vec![0; n];
            l[j] = 1;
            h.coeff(&vec![0; n], &l).re
        })
        .collect()
}

fn oscillating_max(h: &FourierTaylorSeries, max_order: u32) -> f64 {
    h.terms()
        .filter(|(k, _)| !k.is_angle_independent() && k.degree() <= max_order)
        .map(|(_, c)| c.norm())
        .fold(0.0, f64::max)
}

/// Normal form of `H` to order `m` around `I = 0`.
pub fn bnf(
    h: &FourierTaylorSeries,
    omega: &[f64],
    m: u32,
    cfg: &BnfConfig,
) -> Result<NormalFormResult, BirkhoffError> {
    let n = h.n();
    if omega.len() != n {
        return Err(SeriesError::DimensionMismatch {
            expected: n,
            found: omega.len(),
        }
        .into());
    }
    if m < 2 {
        return Err(BirkhoffError::InvalidInput(format!(
            "normal form order must be at least 2, got {m}"
        )));
    }
    let scale = h.max_abs();
    let lin = linear_part(h);
    for (a, b) in lin.iter().zip(omega) {
        if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(BirkhoffError::InvalidInput(format!(
                "angle-independent linear part {lin:?} differs from omega {omega:?}"
            )));
        }
    }
    if h.max_fourier_norm() > cfg.k_budget {
        return Err(BirkhoffError::BudgetExceeded(format!(
            "input has Fourier modes beyond |k| = {}",
            cfg.k_budget
        )));
    }
    let tau = cfg.tau.unwrap_or(n as f64 - 1.0);
    let floor = match cfg.divisor_floor {
        Some(f) => f,
        None => default_divisor_floor(omega, tau, cfg.k_budget)?,
    };
    let work = Work {
        k_budget: cfg.k_budget,
        m_work: m.max(h.max_degree()),
        prune_abs: cfg.prune_rel * scale,
        max_terms: cfg.max_lie_terms,
    };
    let mut log = BTreeMap::new();
    let mut generators = Vec::new();
    let mut cur = work.clean(h.clone())?;

    // Joint removal of order-0 and order-1 angle terms.
    let target = 1e-3 * cfg.tol_hom * scale;
    let mut iterations = 0;
    loop {
        let g = cur
            .oscillating()
            .truncated(cfg.k_budget, 1);
        let size = g.max_abs();
        if size <= target || g.is_empty() {
            break;
        }
        if iterations == cfg.max_low_order_iterations {
            return Err(BirkhoffError::NotConverged {
                iterations,
                residual: size / scale,
            });
        }
        let freq = linear_part(&cur);
        let chi = homological_solve_logged(&g, &freq, floor, &mut log)?;
        cur = work.lie(&cur, &chi)?;
        generators.push(Generator { order: 0, chi });
        iterations += 1;
    }
    let frequency = linear_part(&cur);

    let mut h_m = ActionPolynomial::zero(n, m)?;
    for j in 2..=m {
        let part = cur.homogeneous_part(j);
        for (key, c) in part.terms() {
            if key.is_angle_independent() {
                h_m.add_term(key.l(), c.re)?;
            }
        }
        let g = part.oscillating();
        if g.is_empty() {
            continue;
        }
        let chi = homological_solve_logged(&g, &frequency, floor, &mut log)?;
        cur = work.lie(&cur, &chi)?;
        generators.push(Generator { order: j, chi });
    }

    let mut by_order = BTreeMap::new();
    for j in 0..=work.m_work {
        by_order.insert(j, 0.0f64);
    }
    for (key, c) in cur.terms() {
        if !key.is_angle_independent() {
            let e = by_order.entry(key.degree()).or_insert(0.0);
            *e = e.max(c.norm());
        }
    }
    let residual = if scale > 0.0 {
        oscillating_max(&cur, m) / scale
    } else {
        0.0
    };
    let zero_k = vec![0i32; n];
    let zero_l = vec![0u32; n];
    Ok(NormalFormResult {
        order_m: m,
        omega: omega.to_vec(),
        frequency,
        energy_offset: cur.coeff(&zero_k, &zero_l).re,
        h_m,
        generators,
        transformed: cur,
        remainder_norm_by_order: by_order,
        residual,
        small_divisor_log: log
            .into_iter()
            .map(|(k, divisor)| SmallDivisorEntry { k, divisor })
            .collect(),
        divisor_floor: floor,
        low_order_iterations: iterations,
    })
}

fn positive(name: &str, v: f64) -> Result<(), BirkhoffError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(BirkhoffError::InvalidInput(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `A·exp(−(2 L2 r)^{−1/(α(1+τ))})`. Meaningful for `2·L2·r < 1`; see
/// [`decay_regime`].
pub fn remainder_decay_bound(
    a: f64,
    l2: f64,
    alpha: f64,
    tau: f64,
    r: f64,
) -> Result<f64, BirkhoffError> {
    positive("A", a)?;
    positive("L2", l2)?;
    positive("alpha", alpha)?;
    positive("r", r)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(BirkhoffError::InvalidInput(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    Ok(a * (-(2.0 * l2 * r).powf(-1.0 / (alpha * (1.0 + tau)))).exp())
}

/// Whether `2·L2·r < 1`, the regime where the decay bound is small.
pub fn decay_regime(l2: f64, r: f64) -> bool {
    2.0 * l2 * r < 1.0
}

/// `round((L2‖I‖)^{−1/(α(1+τ))})`.
pub fn stirling_order_choice(
    l2: f64,
    norm_i: f64,
    alpha: f64,
    tau: f64,
) -> Result<u64, BirkhoffError> {
    positive("L2", l2)?;
    positive("|I|", norm_i)?;
    positive("alpha", alpha)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(BirkhoffError::InvalidInput(format!(
            "tau must be non-negative, got {tau}"
        )));
    }
    let x = l2 * norm_i;
    if x >= 1.0 {
        return Err(BirkhoffError::InvalidInput(format!(
            "L2·|I| = {x} must be below 1"
        )));
    }
    Ok(x.powf(-1.0 / (alpha * (1.0 + tau))).round() as u64)
}
