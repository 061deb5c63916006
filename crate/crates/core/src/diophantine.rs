//! Diophantine quality of frequency vectors.
//!
//! The scan enumerates every `k ≠ 0` with `|k|₁ ≤ K` in the half-space whose
//! first non-zero entry is positive (`|k·ω|` is even in `k`) and keeps the
//! smallest value of `|k·ω|·|k|^τ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of lattice vectors a single scan may visit.
pub const DEFAULT_SCAN_BUDGET: u64 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("frequency vector is zero")]
    ZeroVector,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scan over {count} lattice vectors exceeds the budget of {budget}")]
    BudgetExceeded { count: u128, budget: u64 },
    #[error("frequency {omega:?} lies outside the box")]
    OutsideBox { omega: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiophantineReport {
    pub omega: Vec<f64>,
    pub tau: f64,
    #[serde(rename = "K")]
    pub k: u32,
    pub gamma_est: f64,
    pub argmin_k: Vec<i32>,
    pub raw_min: f64,
    /// Lattice vectors visited (half-space).
    pub scanned: u64,
}

/// Default scan depth per dimension: 50, 20, 8 for n = 2, 3, 4.
pub fn default_scan_depth(n: usize) -> u32 {
    match n {
        0..=2 => 50,
        3 => 20,
        4 => 8,
        _ => 4,
    }
}

/// Number of `k` with `1 ≤ |k|₁ ≤ K` in one half-space.
pub fn lattice_count(n: usize, k: u32) -> u128 {
    // points of Z^n in the closed ℓ¹ ball: Σ_i 2^i C(n,i) C(K,i)
    let choose = |a: u128, b: u128| -> u128 {
        if b > a {
            return 0;
        }
        (0..b).fold(1u128, |acc, i| acc * (a - i) / (i + 1))
    };
    let ball: u128 = (0..=n as u128)
        .map(|i| (1u128 << i) * choose(n as u128, i) * choose(k as u128, i))
        .sum();
    (ball - 1) / 2
}

/// Calls `visit` on each half-space `k` with `|k|₁ = s`, in a fixed order.
pub(crate) fn for_each_in_shell(n: usize, s: u32, mut visit: impl FnMut(&[i32])) {
    fn rec(
        pos: usize,
        rem: i32,
        leading_zero: bool,
        k: &mut Vec<i32>,
        visit: &mut dyn FnMut(&[i32]),
    ) {
        let n = k.len();
        if pos + 1 == n {
            for v in [rem, -rem] {
                if leading_zero && v <= 0 {
                    continue;
                }
                k[pos] = v;
                visit(k);
                if rem == 0 {
                    break;
                }
            }
            return;
        }
        for v in -rem..=rem {
            if leading_zero && v < 0 {
                continue;
            }
            k[pos] = v;
            rec(pos + 1, rem - v.abs(), leading_zero && v == 0, k, visit);
        }
    }
    if s == 0 || n == 0 {
        return;
    }
    let mut k = vec![0; n];
    rec(0, s as i32, true, &mut k, &mut visit);
}

fn validate(omega: &[f64], tau: f64, k: u32) -> Result<(), DiophantineError> {
    if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) {
        return Err(DiophantineError::InvalidArgument(
            "frequency must be a non-empty finite vector".into(),
        ));
    }
    if omega.iter().all(|&w| w == 0.0) {
        return Err(DiophantineError::ZeroVector);
    }
    if k < 1 {
        return Err(DiophantineError::InvalidArgument(
            "scan depth must be at least 1".into(),
        ));
    }
    let n = omega.len();
    if !(tau >= n as f64 - 1.0) || !tau.is_finite() {
        return Err(DiophantineError::InvalidArgument(format!(
            "tau must be at least n-1 = {}, got {tau}",
            n - 1
        )));
    }
    Ok(())
}

/// Scans `|k·ω|·|k|^τ` over `0 < |k| ≤ K` with the default budget.
pub fn gamma_estimate(omega: &[f64], tau: f64, k: u32) -> Result<DiophantineReport, DiophantineError> {
    gamma_estimate_with_budget(omega, tau, k, DEFAULT_SCAN_BUDGET)
}

pub fn gamma_estimate_with_budget(
    omega: &[f64],
    tau: f64,
    k_depth: u32,
    budget: u64,
) -> Result<DiophantineReport, DiophantineError> {
    validate(omega, tau, k_depth)?;
    let n = omega.len();
    let count = lattice_count(n, k_depth);
    if count > budget as u128 {
        return Err(DiophantineError::BudgetExceeded { count, budget });
    }
    let mut raw_min = f64::INFINITY;
    let mut argmin = vec![0; n];
    let mut scanned = 0u64;
    for s in 1..=k_depth {
        let weight = (s as f64).powf(tau);
        for_each_in_shell(n, s, |k| {
            scanned += 1;
            let dot: f64 = k.iter().zip(omega).map(|(&a, &w)| a as f64 * w).sum();
            let v = dot.abs() * weight;
            if v < raw_min {
                raw_min = v;
                argmin.copy_from_slice(k);
            }
        });
    }
    Ok(DiophantineReport {
        omega: omega.to_vec(),
        tau,
        k: k_depth,
        gamma_est: raw_min.min(1.0),
        argmin_k: argmin,
        raw_min,
        scanned,
    })
}

/// Axis-aligned box approximating the frequency domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl OmegaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, DiophantineError> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(DiophantineError::InvalidArgument(
                "box needs lower < upper in every coordinate".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self, DiophantineError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// Distance from an interior point to the boundary; `None` outside.
    pub fn boundary_distance(&self, omega: &[f64]) -> Option<f64> {
        if omega.len() != self.lower.len() {
            return None;
        }
        let mut d = f64::INFINITY;
        for ((&w, &a), &b) in omega.iter().zip(&self.lower).zip(&self.upper) {
            if w < a || w > b {
                return None;
            }
            d = d.min(w - a).min(b - w);
        }
        Some(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub member: bool,
    pub gamma: f64,
    pub boundary_distance: f64,
    /// `boundary_distance − γ`.
    pub boundary_margin: f64,
    /// `gamma_est − γ`.
    pub diophantine_margin: f64,
    pub scan: DiophantineReport,
}

/// Membership of `ω` in `Ω_{γ,τ}` with `Ω` approximated by a box.
pub fn omega_set_membership(
    omega: &[f64],
    bounds: &OmegaBox,
    gamma: f64,
    tau: f64,
    k: u32,
) -> Result<MembershipReport, DiophantineError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(DiophantineError::InvalidArgument(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )));
    }
    let dist = bounds
        .boundary_distance(omega)
        .ok_or_else(|| DiophantineError::OutsideBox {
            omega: omega.to_vec(),
        })?;
    let scan = gamma_estimate(omega, tau, k)?;
    Ok(MembershipReport {
        member: dist >= gamma && scan.gamma_est >= gamma,
        gamma,
        boundary_distance: dist,
        boundary_margin: dist - gamma,
        diophantine_margin: scan.gamma_est - gamma,
        scan,
    })
}
