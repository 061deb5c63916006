//! Steepness, stable steepness and Kolmogorov checks, plus the stability
//! exponent formulas.
//!
//! All verdicts are falsification based: `accepted = true` only means that
//! no counterexample turned up under the recorded sampling. A rejection
//! always carries a witness that can be re-evaluated.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{ActionPolynomial, SeriesError, SmoothFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteepnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate subspace basis: {0}")]
    DegenerateBasis(String),
    #[error("an analytic gradient is required")]
    GradientUnavailable,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

type Result<T> = std::result::Result<T, SteepnessError>;

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(SteepnessError::InvalidArgument(msg()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    require(v > 0.0 && v.is_finite(), || {
        format!("{name} must be positive and finite, got {v}")
    })
}

// ---------------------------------------------------------------------------
// Exponents and constants

/// `m₀(n) = ⌊n²/2 + 2⌋`.
pub fn m0(n: usize) -> Result<u32> {
    require(n >= 1, || "n must be at least 1".into())?;
    Ok((n * n / 2 + 2) as u32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NekhoroshevExponents {
    pub n: usize,
    pub p: f64,
    pub beta: f64,
    /// `1 + p + ⋯ + p^{n−1}`.
    pub a: f64,
    /// `1/(2na)`.
    pub radius_exponent: f64,
    /// `1/(2nβa)`.
    pub time_exponent: f64,
    /// `2na`.
    pub threshold_exponent: f64,
}

pub fn nekhoroshev_exponents(n: usize, p: f64, beta: f64) -> Result<NekhoroshevExponents> {
    require(n >= 1, || "n must be at least 1".into())?;
    require(p >= 1.0 && p.is_finite(), || format!("p must be at least 1, got {p}"))?;
    require(beta >= 1.0 && beta.is_finite(), || {
        format!("beta must be at least 1, got {beta}")
    })?;
    let a: f64 = (0..n).map(|i| p.powi(i as i32)).sum();
    let nf = n as f64;
    Ok(NekhoroshevExponents {
        n,
        p,
        beta,
        a,
        radius_exponent: 1.0 / (2.0 * nf * a),
        time_exponent: 1.0 / (2.0 * nf * beta * a),
        threshold_exponent: 2.0 * nf * a,
    })
}

/// `1/(α(1+τ))`.
pub fn double_exp_exponent(alpha: f64, tau: f64) -> Result<f64> {
    require(alpha >= 1.0 && alpha.is_finite(), || {
        format!("alpha must be at least 1, got {alpha}")
    })?;
    require(tau >= 0.0 && tau.is_finite(), || {
        format!("tau must be non-negative, got {tau}")
    })?;
    Ok(1.0 / (alpha * (1.0 + tau)))
}

/// `1/(αn)`; admissible exponents are strictly below it.
pub fn kam_exponent_bound(alpha: f64, n: usize) -> Result<f64> {
    require(alpha >= 1.0 && alpha.is_finite(), || {
        format!("alpha must be at least 1, got {alpha}")
    })?;
    require(n >= 1, || "n must be at least 1".into())?;
    Ok(1.0 / (alpha * n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPrediction {
    pub c: f64,
    pub u: f64,
    pub r: f64,
    /// `log log T = C r^{−u}`.
    pub log_log_t: f64,
    /// `log T`, possibly infinite.
    pub log_t: f64,
    /// `T` when representable.
    pub t: Option<f64>,
}

/// `T = exp(exp(C r^{−u}))`, kept in log-log form.
pub fn stability_time_prediction(c: f64, u: f64, r: f64) -> Result<StabilityPrediction> {
    positive("C", c)?;
    positive("u", u)?;
    positive("r", r)?;
    let ll = c * r.powf(-u);
    let log_t = ll.exp();
    let t = log_t.exp();
    Ok(StabilityPrediction {
        c,
        u,
        r,
        log_log_t: ll,
        log_t,
        t: t.is_finite().then_some(t),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteepConstants {
    pub kappa: f64,
    pub c: f64,
    pub delta: f64,
    pub p: u32,
}

/// Steepness constants `(ϖ/2, C′/2, r, m₀(n)−1)` inherited from a stably steep Taylor polynomial.
pub fn steep_constants_from_taylor(
    varpi: f64,
    c_prime: f64,
    r: f64,
    n: usize,
) -> Result<SteepConstants> {
    positive("varpi", varpi)?;
    positive("C'", c_prime)?;
    positive("r", r)?;
    Ok(SteepConstants {
        kappa: varpi / 2.0,
        c: c_prime / 2.0,
        delta: r,
        p: m0(n)? - 1,
    })
}

// ---------------------------------------------------------------------------
// Sampling configuration and verdicts

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub subspaces_per_dim: usize,
    pub perturbations: usize,
    pub xi_points: usize,
    pub eta_per_xi: usize,
    pub starts: usize,
    pub seed: u64,
    /// Lines kept for local refinement after the random sweep.
    pub refine_lines: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            subspaces_per_dim: 256,
            perturbations: 64,
            xi_points: 32,
            eta_per_xi: 64,
            starts: 8,
            seed: 0,
            refine_lines: 4,
        }
    }
}

impl SamplingConfig {
    pub fn minimizer(&self) -> MinimizerConfig {
        MinimizerConfig {
            starts: self.starts,
            seed: self.seed,
            ..MinimizerConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        require(self.xi_points >= 1, || "xi_points must be positive".into())?;
        require(self.eta_per_xi >= 2, || "eta_per_xi must be at least 2".into())?;
        require(self.starts >= 1, || "starts must be positive".into())
    }
}

/// Sphere minimization settings for subspaces of dimension two and more.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerConfig {
    pub starts: usize,
    pub seed: u64,
    /// Angular samples on circles (two-dimensional subspaces).
    pub angles: usize,
    pub golden_iterations: usize,
    pub descent_iterations: usize,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            seed: 0,
            angles: 64,
            golden_iterations: 40,
            descent_iterations: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    StablySteepPoly,
    SteepFunction,
    Kolmogorov,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum VerdictConstants {
    StablySteep {
        rho: f64,
        #[serde(rename = "C")]
        c: f64,
        delta: f64,
        m: u32,
    },
    Steep {
        kappa: f64,
        #[serde(rename = "C")]
        c: f64,
        delta: f64,
        p: Vec<f64>,
    },
    Kolmogorov {
        det_floor: f64,
        min_abs_det: f64,
        worst_point: Vec<f64>,
    },
}

/// Counterexample data; re-evaluating it reproduces the violated inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub reason: String,
    /// Subspace dimension (0 for pointwise checks).
    pub l: usize,
    /// Orthonormal basis of the subspace, one vector per row.
    pub basis: Vec<Vec<f64>>,
    /// Base point of the affine subspace or offending sample point.
    pub point: Option<Vec<f64>>,
    pub xi: Option<f64>,
    /// ξ values up to and including `xi`, needed to rebuild the η-grid.
    pub xi_grid: Vec<f64>,
    pub eta_per_xi: usize,
    /// Value that failed to exceed `bound`.
    pub value: f64,
    pub bound: f64,
    /// The perturbed polynomial `P` with `‖P − P₀‖ < ρ`.
    pub perturbation: Option<ActionPolynomial>,
    pub perturbation_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRecord {
    pub subspaces_per_dim: usize,
    pub perturbations: usize,
    pub xi_points: usize,
    pub eta_per_xi: usize,
    pub starts: usize,
    pub seed: u64,
    pub polynomial_norm: String,
    /// Subspace/perturbation pairs evaluated.
    pub pairs_evaluated: u64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub hessian_step: Option<f64>,
}

impl SamplingRecord {
    fn new(cfg: &SamplingConfig, xi_grid: &[f64]) -> Self {
        Self {
            subspaces_per_dim: cfg.subspaces_per_dim,
            perturbations: cfg.perturbations,
            xi_points: cfg.xi_points,
            eta_per_xi: cfg.eta_per_xi,
            starts: cfg.starts,
            seed: cfg.seed,
            polynomial_norm: "coefficient-sup".into(),
            pairs_evaluated: 0,
            xi_min: xi_grid.first().copied().unwrap_or(0.0),
            xi_max: xi_grid.last().copied().unwrap_or(0.0),
            hessian_step: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteepnessVerdict {
    pub kind: VerdictKind,
    pub accepted: bool,
    pub constants: VerdictConstants,
    pub witness: Option<Witness>,
    pub samples: SamplingRecord,
}

// ---------------------------------------------------------------------------
// Grids and frames

/// Geometric grid `δ·100^{−i/N}`, `i = 0..N−1`, returned in ascending order.
pub fn xi_grid(delta: f64, points: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..points)
        .map(|i| delta * 100f64.powf(-(i as f64) / points as f64))
        .collect();
    g.reverse();
    g
}

/// Union over `ξ` of `{ j ξ/(E−1) : j = 0..E−1 }`, sorted and deduplicated.
fn eta_union(xi_grid: &[f64], eta_per_xi: usize) -> Vec<f64> {
    let mut etas: Vec<f64> = xi_grid
        .iter()
        .flat_map(|&xi| {
            (0..eta_per_xi).map(move |j| {
                if j + 1 == eta_per_xi {
                    xi
                } else {
                    j as f64 * xi / (eta_per_xi - 1) as f64
                }
            })
        })
        .collect();
    etas.sort_by(|a, b| a.total_cmp(b));
    etas.dedup();
    etas
}

/// Running maximum of `values` over `etas`, read off at each `ξ`.
fn profile_from(etas: &[f64], values: &[f64], xi_grid: &[f64]) -> Vec<(f64, f64)> {
    let mut prefix = Vec::with_capacity(values.len());
    let mut best: f64 = 0.0;
    for &v in values {
        best = best.max(v);
        prefix.push(best);
    }
    xi_grid
        .iter()
        .map(|&xi| {
            let idx = etas.partition_point(|&e| e <= xi);
            (xi, if idx == 0 { 0.0 } else { prefix[idx - 1] })
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s = norm(&v);
    for x in &mut v {
        *x /= s;
    }
    v
}

fn check_basis(basis: &[Vec<f64>], n: usize) -> Result<()> {
    if basis.is_empty() || basis.len() >= n.max(2) && basis.len() > n {
        return Err(SteepnessError::DegenerateBasis(format!(
            "{} vectors in dimension {n}",
            basis.len()
        )));
    }
    for (i, b) in basis.iter().enumerate() {
        if b.len() != n {
            return Err(SteepnessError::DegenerateBasis(format!(
                "vector {i} has length {}",
                b.len()
            )));
        }
        for (j, c) in basis.iter().enumerate().take(i + 1) {
            let target = if i == j { 1.0 } else { 0.0 };
            if (dot(b, c) - target).abs() > 1e-8 {
                return Err(SteepnessError::DegenerateBasis(
                    "basis is not orthonormal".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Orthonormal `l`-frame from a Gaussian matrix.
fn random_frame(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
    loop {
        let m = DMatrix::<f64>::from_fn(n, l, |_, _| rng.sample(StandardNormal));
        let qr = m.qr();
        let r = qr.r();
        if (0..l).any(|i| r[(i, i)].abs() < 1e-8) {
            continue;
        }
        let q = qr.q();
        return (0..l)
            .map(|j| (0..n).map(|i| q[(i, j)]).collect())
            .collect();
    }
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

fn combinations(n: usize, l: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, l: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == l {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, l, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, l, &mut Vec::new(), &mut out);
    out
}

/// Directions where the quadratic part of `p` is extremal or vanishes.
fn quadratic_directions(p: &ActionPolynomial) -> Vec<Vec<f64>> {
    let n = p.n();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (mono, c) in p.terms() {
        if mono.degree() != 2 {
            continue;
        }
        let e = mono.exponents();
        let idx: Vec<usize> = (0..n).filter(|&j| e[j] > 0).collect();
        if idx.len() == 1 {
            q[(idx[0], idx[0])] += c;
        } else {
            q[(idx[0], idx[1])] += c / 2.0;
            q[(idx[1], idx[0])] += c / 2.0;
        }
    }
    let mut out = Vec::new();
    let eig = q.clone().symmetric_eigen();
    for j in 0..n {
        out.push(eig.eigenvectors.column(j).iter().copied().collect());
    }
    if n == 2 {
        // isotropic lines a x² + b xy + c y² = 0
        let (a, b, c) = (q[(0, 0)], 2.0 * q[(0, 1)], q[(1, 1)]);
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            if a.abs() > 0.0 {
                for t in [(-b + s) / (2.0 * a), (-b - s) / (2.0 * a)] {
                    out.push(normalized(vec![t, 1.0]));
                }
            }
            if c.abs() > 0.0 {
                for t in [(-b + s) / (2.0 * c), (-b - s) / (2.0 * c)] {
                    out.push(normalized(vec![1.0, t]));
                }
            }
            if a == 0.0 {
                out.push(vec![1.0, 0.0]);
            }
            if c == 0.0 {
                out.push(vec![0.0, 1.0]);
            }
        }
    }
    out.retain(|v| v.iter().all(|x| x.is_finite()));
    out
}

fn structured_frames(p0: &ActionPolynomial, l: usize) -> Vec<Vec<Vec<f64>>> {
    let n = p0.n();
    let mut frames = Vec::new();
    if l == 1 {
        for j in 0..n {
            frames.push(vec![unit(n, j)]);
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..n {
            for j in i + 1..n {
                for sign in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[i] = s;
                    v[j] = sign * s;
                    frames.push(vec![v]);
                }
            }
        }
        for d in quadratic_directions(p0) {
            frames.push(vec![d]);
        }
    } else {
        for idx in combinations(n, l).into_iter().take(64) {
            frames.push(idx.into_iter().map(|j| unit(n, j)).collect());
        }
    }
    frames
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic coarse directions on the unit sphere of `R^l`.
fn coarse_directions(l: usize, cfg: &MinimizerConfig) -> Vec<Vec<f64>> {
    match l {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..cfg.angles)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / cfg.angles as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = rng_for(cfg.seed, 1 << 32 | l as u64);
            let mut out = Vec::new();
            for j in 0..l {
                out.push(unit(l, j));
                let mut v = unit(l, j);
                v[j] = -1.0;
                out.push(v);
            }
            for _ in 0..8 * cfg.starts {
                let v: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
                out.push(normalized(v));
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Sphere minimization

/// Value `‖∇(restricted function)‖` at radius `η`, direction `y` in the subspace.
trait SphereFn: Sync {
    fn value(&self, eta: f64, y: &[f64]) -> f64;
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn sphere_descent(f: &dyn SphereFn, eta: f64, start: &[f64], iters: usize) -> f64 {
    let l = start.len();
    let mut y = start.to_vec();
    let mut fy = f.value(eta, &y);
    let mut step = 0.1;
    let h = 1e-6;
    for _ in 0..iters {
        // tangent-space finite-difference gradient
        let mut grad = vec![0.0; l];
        for j in 0..l {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            grad[j] = (f.value(eta, &normalized(yp)) - f.value(eta, &normalized(ym))) / (2.0 * h);
        }
        let radial = dot(&grad, &y);
        for j in 0..l {
            grad[j] -= radial * y[j];
        }
        let gn = norm(&grad);
        if gn < 1e-14 {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let cand = normalized(y.iter().zip(&grad).map(|(a, g)| a - step * g / gn).collect());
            let fc = f.value(eta, &cand);
            if fc < fy {
                y = cand;
                fy = fc;
                step *= 2.0;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved || step < 1e-12 {
            break;
        }
    }
    fy
}

/// Minimum over the sphere of radius `eta`, starting from coarse values.
fn refine_min(
    f: &dyn SphereFn,
    eta: f64,
    dirs: &[Vec<f64>],
    coarse: &[f64],
    cfg: &MinimizerConfig,
) -> f64 {
    let best = coarse.iter().copied().fold(f64::INFINITY, f64::min);
    let l = dirs[0].len();
    match l {
        1 => best,
        2 => {
            // golden refinement around every coarse local minimum
            let k = dirs.len();
            let step = std::f64::consts::TAU / k as f64;
            let mut out = best;
            for i in 0..k {
                let (prev, next) = (coarse[(i + k - 1) % k], coarse[(i + 1) % k]);
                if coarse[i] > prev || coarse[i] > next || !coarse[i].is_finite() {
                    continue;
                }
                let phi = dirs[i][1].atan2(dirs[i][0]);
                let (_, v) = golden_min(
                    |a| f.value(eta, &[a.cos(), a.sin()]),
                    phi - step,
                    phi + step,
                    cfg.golden_iterations,
                );
                out = out.min(v);
            }
            out
        }
        _ => {
            let mut order: Vec<usize> = (0..dirs.len()).collect();
            order.sort_by(|&a, &b| coarse[a].total_cmp(&coarse[b]));
            let mut out = best;
            for &i in order.iter().take(cfg.starts) {
                out = out.min(sphere_descent(f, eta, &dirs[i], cfg.descent_iterations));
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Restricted polynomial gradients

/// `‖∇P_Λ(η Bᵀy)‖` with the degree-split precomputation for coarse sweeps.
struct PolySphere<'a> {
    p: &'a ActionPolynomial,
    basis: &'a [Vec<f64>],
}

impl PolySphere<'_> {
    fn point(&self, eta: f64, y: &[f64]) -> Vec<f64> {
        let n = self.p.n();
        let mut x = vec![0.0; n];
        for (b, &c) in self.basis.iter().zip(y) {
            for i in 0..n {
                x[i] += eta * c * b[i];
            }
        }
        x
    }

    /// Coefficients `G_d(y) = B∇P_d(Bᵀy)` so that the gradient at radius `η`
    /// is `Σ_d η^{d−1} G_d(y)`.
    fn degree_split(&self, dirs: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
        let m = self.p.m() as usize;
        let l = self.basis.len();
        dirs.iter()
            .map(|y| {
                let x = self.point(1.0, y);
                let mut g = vec![vec![0.0; l]; m + 1];
                for (mono, c) in self.p.terms() {
                    let d = mono.degree() as usize;
                    let e = mono.exponents();
                    for (j, gj) in (0..x.len()).map(|j| (j, e[j])) {
                        if gj == 0 {
                            continue;
                        }
                        let mut t = c * gj as f64;
                        for (i, (&p, &v)) in e.iter().zip(&x).enumerate() {
                            t *= if i == j { v.powi(p as i32 - 1) } else { v.powi(p as i32) };
                        }
                        for (k, b) in self.basis.iter().enumerate() {
                            g[d][k] += t * b[j];
                        }
                    }
                }
                g
            })
            .collect()
    }
}

impl SphereFn for PolySphere<'_> {
    fn value(&self, eta: f64, y: &[f64]) -> f64 {
        let g = self.p.gradient(&self.point(eta, y));
        let proj: Vec<f64> = self.basis.iter().map(|b| dot(b, &g)).collect();
        norm(&proj)
    }
}

fn split_value(split: &[Vec<f64>], eta: f64) -> f64 {
    let l = split[0].len();
    let mut v = vec![0.0; l];
    for (d, g) in split.iter().enumerate().skip(2) {
        let pow = eta.powi(d as i32 - 1);
        for k in 0..l {
            v[k] += pow * g[k];
        }
    }
    norm(&v)
}

/// `p'(t)` from the coefficients of `t ↦ P(t u)`.
fn line_derivative(a: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for d in (1..a.len()).rev() {
        acc = acc * t + d as f64 * a[d];
    }
    acc
}

fn line_profile(p: &ActionPolynomial, u: &[f64], xi_grid: &[f64], etas: &[f64]) -> Vec<(f64, f64)> {
    let a = p.restrict_to_line(u);
    let values: Vec<f64> = etas
        .iter()
        .map(|&e| line_derivative(&a, e).abs().min(line_derivative(&a, -e).abs()))
        .collect();
    profile_from(etas, &values, xi_grid)
}

fn coarse_poly_profile(
    p: &ActionPolynomial,
    basis: &[Vec<f64>],
    xi_grid: &[f64],
    etas: &[f64],
    dirs: &[Vec<f64>],
) -> Vec<(f64, f64)> {
    let sphere = PolySphere { p, basis };
    let splits = sphere.degree_split(dirs);
    let values: Vec<f64> = etas
        .iter()
        .map(|&e| {
            splits
                .iter()
                .map(|s| split_value(s, e))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    profile_from(etas, &values, xi_grid)
}

fn full_poly_profile(
    p: &ActionPolynomial,
    basis: &[Vec<f64>],
    xi_grid: &[f64],
    etas: &[f64],
    cfg: &MinimizerConfig,
) -> Vec<(f64, f64)> {
    if basis.len() == 1 {
        return line_profile(p, &basis[0], xi_grid, etas);
    }
    let sphere = PolySphere { p, basis };
    let dirs = coarse_directions(basis.len(), cfg);
    let splits = sphere.degree_split(&dirs);
    let values: Vec<f64> = etas
        .iter()
        .map(|&e| {
            let coarse: Vec<f64> = splits.iter().map(|s| split_value(s, e)).collect();
            if e == 0.0 {
                return coarse.iter().copied().fold(f64::INFINITY, f64::min);
            }
            refine_min(&sphere, e, &dirs, &coarse, cfg)
        })
        .collect();
    profile_from(etas, &values, xi_grid)
}

/// `ξ ↦ max_{η ≤ ξ} min_{‖x‖=η, x∈Λ} ‖∇P_Λ(x)‖` on the union η-grid.
///
/// Lines are exact (the sphere is two points); higher-dimensional spheres are
/// minimized from a coarse sweep followed by local refinement.
pub fn maxmin_profile(
    p: &ActionPolynomial,
    basis: &[Vec<f64>],
    xi_grid: &[f64],
    eta_per_xi: usize,
    cfg: &MinimizerConfig,
) -> Result<Vec<(f64, f64)>> {
    check_basis(basis, p.n())?;
    require(eta_per_xi >= 2, || "eta_per_xi must be at least 2".into())?;
    require(xi_grid.iter().all(|&x| x > 0.0 && x.is_finite()), || {
        "xi values must be positive".into()
    })?;
    let etas = eta_union(xi_grid, eta_per_xi);
    Ok(full_poly_profile(p, basis, xi_grid, &etas, cfg))
}

// ---------------------------------------------------------------------------
// Stably steep polynomials

/// Perturbation of `p0` pushing every line coefficient `a_d(u)` towards zero.
fn adversarial_perturbation(
    p0: &ActionPolynomial,
    basis: &[Vec<u32>],
    u: &[f64],
    rho: f64,
) -> ActionPolynomial {
    let a = p0.restrict_to_line(u);
    let mut s = vec![0.0; a.len()];
    let weights: Vec<f64> = basis
        .iter()
        .map(|e| e.iter().zip(u).map(|(&p, &x)| x.powi(p as i32)).product())
        .collect();
    for (e, w) in basis.iter().zip(&weights) {
        s[e.iter().sum::<u32>() as usize] += w.abs();
    }
    let mut p = p0.clone();
    for (e, w) in basis.iter().zip(&weights) {
        let d = e.iter().sum::<u32>() as usize;
        if s[d] == 0.0 || a[d] == 0.0 || *w == 0.0 {
            continue;
        }
        let t = rho.min(a[d].abs() / s[d]);
        let delta = -a[d].signum() * w.signum() * t;
        p.add_term(e, delta).expect("basis monomial");
    }
    p
}

fn random_perturbations(
    p0: &ActionPolynomial,
    basis: &[Vec<u32>],
    rho: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ActionPolynomial> {
    (0..count)
        .map(|i| {
            let mut p = p0.clone();
            for e in basis {
                let delta = if i % 2 == 0 {
                    rng.gen_range(-rho..rho)
                } else if rng.gen::<bool>() {
                    rho
                } else {
                    -rho
                };
                p.add_term(e, delta).expect("basis monomial");
            }
            p
        })
        .collect()
}

struct Candidate {
    margin: f64,
    xi: f64,
    value: f64,
    bound: f64,
}

/// Smallest `profile/bound` ratio over ξ, with the attaining ξ.
fn margin(profile: &[(f64, f64)], bounds: &[f64]) -> Candidate {
    let mut best = Candidate {
        margin: f64::INFINITY,
        xi: 0.0,
        value: 0.0,
        bound: 0.0,
    };
    for ((xi, v), &b) in profile.iter().zip(bounds) {
        let r = v / b;
        if r < best.margin {
            best = Candidate {
                margin: r,
                xi: *xi,
                value: *v,
                bound: b,
            };
        }
    }
    best
}

struct PolyContext<'a> {
    p0: &'a ActionPolynomial,
    basis: Vec<Vec<u32>>,
    rho_in: f64,
    xi_grid: Vec<f64>,
    bounds: Vec<f64>,
    etas: Vec<f64>,
    sampling: &'a SamplingConfig,
    minimizer: MinimizerConfig,
}

impl PolyContext<'_> {
    fn witness(&self, p: &ActionPolynomial, frame: &[Vec<f64>], cand: &Candidate) -> Witness {
        let upto: Vec<f64> = self
            .xi_grid
            .iter()
            .copied()
            .filter(|&x| x <= cand.xi)
            .collect();
        Witness {
            reason: format!(
                "max-min gradient {:e} does not exceed C·ξ^(m−1) = {:e}",
                cand.value, cand.bound
            ),
            l: frame.len(),
            basis: frame.to_vec(),
            point: None,
            xi: Some(cand.xi),
            xi_grid: upto,
            eta_per_xi: self.sampling.eta_per_xi,
            value: cand.value,
            bound: cand.bound,
            perturbation_distance: Some(p.sub(self.p0).map(|d| d.sup_norm()).unwrap_or(0.0)),
            perturbation: Some(p.clone()),
        }
    }

    /// Returns a witness if `(frame, p)` violates the inequality.
    fn evaluate(&self, p: &ActionPolynomial, frame: &[Vec<f64>], dirs: &[Vec<f64>]) -> (Candidate, Option<Witness>) {
        if frame.len() == 1 {
            let prof = line_profile(p, &frame[0], &self.xi_grid, &self.etas);
            let c = margin(&prof, &self.bounds);
            let w = (c.margin <= 1.0).then(|| self.witness(p, frame, &c));
            return (c, w);
        }
        // coarse minima bound the true minima from above, so a coarse violation is genuine
        let coarse = coarse_poly_profile(p, frame, &self.xi_grid, &self.etas, dirs);
        let c = margin(&coarse, &self.bounds);
        if c.margin > 4.0 {
            return (c, None);
        }
        let full = full_poly_profile(p, frame, &self.xi_grid, &self.etas, &self.minimizer);
        let c = margin(&full, &self.bounds);
        let w = (c.margin <= 1.0).then(|| self.witness(p, frame, &c));
        (c, w)
    }
}

/// Sampled test of `(ρ, C, δ)`-stable steepness of `p0` in `P₂(n, m)`, `m = p0.m()`.
pub fn stably_steep_check(
    p0: &ActionPolynomial,
    rho: f64,
    c: f64,
    delta: f64,
    sampling: &SamplingConfig,
) -> Result<SteepnessVerdict> {
    positive("rho", rho)?;
    positive("C", c)?;
    positive("delta", delta)?;
    sampling.validate()?;
    let n = p0.n();
    let m = p0.m();
    let grid = xi_grid(delta, sampling.xi_points);
    let mut record = SamplingRecord::new(sampling, &grid);
    let constants = VerdictConstants::StablySteep { rho, c, delta, m };
    let verdict = |accepted, witness, samples| SteepnessVerdict {
        kind: VerdictKind::StablySteepPoly,
        accepted,
        constants: constants.clone(),
        witness,
        samples,
    };
    if n == 1 {
        return Ok(verdict(true, None, record));
    }
    let ctx = PolyContext {
        p0,
        basis: ActionPolynomial::basis(n, m),
        rho_in: rho * (1.0 - 1e-9),
        bounds: grid.iter().map(|x| c * x.powi(m as i32 - 1)).collect(),
        etas: eta_union(&grid, sampling.eta_per_xi),
        xi_grid: grid,
        sampling,
        minimizer: sampling.minimizer(),
    };
    let mut rng = rng_for(sampling.seed, 0);
    let perturbations = random_perturbations(p0, &ctx.basis, ctx.rho_in, sampling.perturbations, &mut rng);

    for l in 1..n {
        let dirs = coarse_directions(l, &ctx.minimizer);
        let mut frames = structured_frames(p0, l);
        let mut frame_rng = rng_for(sampling.seed, l as u64);
        for _ in 0..sampling.subspaces_per_dim {
            frames.push(random_frame(&mut frame_rng, n, l));
        }
        // worst (margin, frame, perturbation index) for line refinement
        let mut worst: Vec<(f64, Vec<f64>, Option<usize>)> = Vec::new();
        for frame in &frames {
            let adversarial = (l == 1).then(|| adversarial_perturbation(p0, &ctx.basis, &frame[0], ctx.rho_in));
            let mut candidates: Vec<(Option<usize>, &ActionPolynomial)> = vec![(None, p0)];
            if let Some(a) = &adversarial {
                candidates.push((None, a));
            }
            candidates.extend(perturbations.iter().enumerate().map(|(i, p)| (Some(i), p)));
            for (idx, p) in candidates {
                record.pairs_evaluated += 1;
                let (cand, w) = ctx.evaluate(p, frame, &dirs);
                if let Some(w) = w {
                    return Ok(verdict(false, Some(w), record));
                }
                if l == 1 {
                    worst.push((cand.margin, frame[0].clone(), idx));
                }
            }
        }
        if l == 1 && sampling.refine_lines > 0 {
            worst.sort_by(|a, b| a.0.total_cmp(&b.0));
            worst.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
            for (_, u, idx) in worst.into_iter().take(sampling.refine_lines) {
                let fixed = idx.map(|i| &perturbations[i]);
                if let Some(w) = refine_line(&ctx, u, fixed, &mut record) {
                    return Ok(verdict(false, Some(w), record));
                }
            }
        }
    }
    Ok(verdict(true, None, record))
}

/// Pattern search on the unit sphere for a line with smaller margin.
fn refine_line(
    ctx: &PolyContext,
    start: Vec<f64>,
    fixed: Option<&ActionPolynomial>,
    record: &mut SamplingRecord,
) -> Option<Witness> {
    let n = start.len();
    let score = |u: &[f64], record: &mut SamplingRecord| -> (f64, Option<Witness>) {
        let adv = adversarial_perturbation(ctx.p0, &ctx.basis, u, ctx.rho_in);
        let frame = vec![u.to_vec()];
        let mut best = f64::INFINITY;
        for p in [Some(ctx.p0), Some(&adv), fixed].into_iter().flatten() {
            record.pairs_evaluated += 1;
            let prof = line_profile(p, u, &ctx.xi_grid, &ctx.etas);
            let c = margin(&prof, &ctx.bounds);
            if c.margin <= 1.0 {
                return (c.margin, Some(ctx.witness(p, &frame, &c)));
            }
            best = best.min(c.margin);
        }
        (best, None)
    };
    let mut u = start;
    let (mut cur, w) = score(&u, record);
    if w.is_some() {
        return w;
    }
    let mut step = 0.05;
    while step > 1e-7 {
        // tangent basis by Gram–Schmidt against u
        let mut tangents: Vec<Vec<f64>> = Vec::new();
        for j in 0..n {
            let mut t = unit(n, j);
            let proj = dot(&t, &u);
            for i in 0..n {
                t[i] -= proj * u[i];
            }
            for s in &tangents {
                let q = dot(&t, s);
                for i in 0..n {
                    t[i] -= q * s[i];
                }
            }
            if norm(&t) > 1e-6 {
                tangents.push(normalized(t));
            }
        }
        let mut moved = false;
        for t in &tangents {
            for sign in [1.0, -1.0] {
                let cand = normalized(u.iter().zip(t).map(|(a, b)| a + sign * step * b).collect());
                let (v, w) = score(&cand, record);
                if w.is_some() {
                    return w;
                }
                if v < cur {
                    cur = v;
                    u = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            step /= 2.0;
        }
    }
    None
}

/// Re-evaluates a stably-steep witness; true when the violation reproduces.
pub fn verify_polynomial_witness(witness: &Witness, cfg: &MinimizerConfig) -> Result<bool> {
    let p = witness
        .perturbation
        .as_ref()
        .ok_or_else(|| SteepnessError::InvalidArgument("witness carries no polynomial".into()))?;
    let xi = witness
        .xi
        .ok_or_else(|| SteepnessError::InvalidArgument("witness carries no ξ".into()))?;
    let prof = maxmin_profile(p, &witness.basis, &witness.xi_grid, witness.eta_per_xi, cfg)?;
    let value = prof
        .iter()
        .find(|(x, _)| *x == xi)
        .map(|(_, v)| *v)
        .ok_or_else(|| SteepnessError::InvalidArgument("ξ missing from witness grid".into()))?;
    Ok(value <= witness.bound)
}

// ---------------------------------------------------------------------------
// Steep functions

struct FunctionSphere<'a> {
    h: &'a dyn SmoothFunction,
    base: &'a [f64],
    base_grad: Vec<f64>,
    basis: &'a [Vec<f64>],
}

impl SphereFn for FunctionSphere<'_> {
    fn value(&self, eta: f64, y: &[f64]) -> f64 {
        let mut x = self.base.to_vec();
        for (b, &c) in self.basis.iter().zip(y) {
            for i in 0..x.len() {
                x[i] += eta * c * b[i];
            }
        }
        if !self.h.in_domain(&x) {
            return f64::INFINITY;
        }
        let g = self.h.gradient(&x);
        let diff: Vec<f64> = g.iter().zip(&self.base_grad).map(|(a, b)| a - b).collect();
        let proj: Vec<f64> = self.basis.iter().map(|b| dot(b, &diff)).collect();
        norm(&proj)
    }
}

fn function_profile(
    sphere: &FunctionSphere,
    xi_grid: &[f64],
    etas: &[f64],
    cfg: &MinimizerConfig,
) -> Vec<(f64, f64)> {
    let dirs = coarse_directions(sphere.basis.len(), cfg);
    let values: Vec<f64> = etas
        .iter()
        .map(|&e| {
            let coarse: Vec<f64> = dirs.iter().map(|y| sphere.value(e, y)).collect();
            if e == 0.0 {
                return 0.0;
            }
            refine_min(sphere, e, &dirs, &coarse, cfg)
        })
        .collect();
    profile_from(etas, &values, xi_grid)
}

/// Sampled test of `(κ, C, δ, (p_l))`-steepness of `h` at the given points.
pub fn steep_function_check(
    h: &dyn SmoothFunction,
    points: &[Vec<f64>],
    kappa: f64,
    c: f64,
    delta: f64,
    p_list: &[f64],
    sampling: &SamplingConfig,
) -> Result<SteepnessVerdict> {
    positive("kappa", kappa)?;
    positive("C", c)?;
    positive("delta", delta)?;
    sampling.validate()?;
    if !h.has_gradient() {
        return Err(SteepnessError::GradientUnavailable);
    }
    let n = h.dim();
    require(p_list.len() == n.saturating_sub(1), || {
        format!("expected {} steepness indices, got {}", n.saturating_sub(1), p_list.len())
    })?;
    require(p_list.iter().all(|&p| p > 0.0), || "steepness indices must be positive".into())?;
    require(!points.is_empty(), || "at least one sample point is required".into())?;
    let grid = xi_grid(delta, sampling.xi_points);
    let etas = eta_union(&grid, sampling.eta_per_xi);
    let mut record = SamplingRecord::new(sampling, &grid);
    let constants = VerdictConstants::Steep {
        kappa,
        c,
        delta,
        p: p_list.to_vec(),
    };
    let verdict = |accepted, witness, samples| SteepnessVerdict {
        kind: VerdictKind::SteepFunction,
        accepted,
        constants: constants.clone(),
        witness,
        samples,
    };
    for x in points {
        require(x.len() == n, || "sample point has wrong dimension".into())?;
        let g = h.gradient(x);
        let gn = norm(&g);
        if !(gn >= kappa) {
            let w = Witness {
                reason: format!("gradient norm {gn:e} below kappa {kappa:e}"),
                l: 0,
                basis: Vec::new(),
                point: Some(x.clone()),
                xi: None,
                xi_grid: Vec::new(),
                eta_per_xi: sampling.eta_per_xi,
                value: gn,
                bound: kappa,
                perturbation: None,
                perturbation_distance: None,
            };
            return Ok(verdict(false, Some(w), record));
        }
    }
    let minimizer = sampling.minimizer();
    for l in 1..n {
        let bounds: Vec<f64> = grid.iter().map(|x| c * x.powf(p_list[l - 1])).collect();
        let mut frames: Vec<Vec<Vec<f64>>> = if l == 1 {
            let mut f: Vec<Vec<Vec<f64>>> = (0..n).map(|j| vec![unit(n, j)]).collect();
            let s = std::f64::consts::FRAC_1_SQRT_2;
            for i in 0..n {
                for j in i + 1..n {
                    for sign in [1.0, -1.0] {
                        let mut v = vec![0.0; n];
                        v[i] = s;
                        v[j] = sign * s;
                        f.push(vec![v]);
                    }
                }
            }
            f
        } else {
            combinations(n, l)
                .into_iter()
                .take(64)
                .map(|idx| idx.into_iter().map(|j| unit(n, j)).collect())
                .collect()
        };
        let mut rng = rng_for(sampling.seed, l as u64);
        for _ in 0..sampling.subspaces_per_dim {
            frames.push(random_frame(&mut rng, n, l));
        }
        for x in points {
            let base_grad = h.gradient(x);
            for frame in &frames {
                record.pairs_evaluated += 1;
                let sphere = FunctionSphere {
                    h,
                    base: x,
                    base_grad: base_grad.clone(),
                    basis: frame,
                };
                let prof = function_profile(&sphere, &grid, &etas, &minimizer);
                let cand = margin(&prof, &bounds);
                if cand.margin <= 1.0 {
                    let w = Witness {
                        reason: format!(
                            "max-min gradient variation {:e} does not exceed C·ξ^p = {:e}",
                            cand.value, cand.bound
                        ),
                        l,
                        basis: frame.clone(),
                        point: Some(x.clone()),
                        xi: Some(cand.xi),
                        xi_grid: grid.iter().copied().filter(|&v| v <= cand.xi).collect(),
                        eta_per_xi: sampling.eta_per_xi,
                        value: cand.value,
                        bound: cand.bound,
                        perturbation: None,
                        perturbation_distance: None,
                    };
                    return Ok(verdict(false, Some(w), record));
                }
            }
        }
    }
    Ok(verdict(true, None, record))
}

/// Re-evaluates a steep-function witness against `h`.
pub fn verify_function_witness(
    h: &dyn SmoothFunction,
    witness: &Witness,
    cfg: &MinimizerConfig,
) -> Result<bool> {
    let x = witness
        .point
        .as_ref()
        .ok_or_else(|| SteepnessError::InvalidArgument("witness carries no point".into()))?;
    if witness.l == 0 {
        return Ok(norm(&h.gradient(x)) < witness.bound);
    }
    check_basis(&witness.basis, h.dim())?;
    let xi = witness
        .xi
        .ok_or_else(|| SteepnessError::InvalidArgument("witness carries no ξ".into()))?;
    let sphere = FunctionSphere {
        h,
        base: x,
        base_grad: h.gradient(x),
        basis: &witness.basis,
    };
    let etas = eta_union(&witness.xi_grid, witness.eta_per_xi);
    let prof = function_profile(&sphere, &witness.xi_grid, &etas, cfg);
    Ok(prof
        .iter()
        .find(|(v, _)| *v == xi)
        .is_some_and(|(_, v)| *v <= witness.bound))
}

// ---------------------------------------------------------------------------
// Kolmogorov non-degeneracy

/// Accepts iff `|det ∇²h| ≥ det_floor` at every sample point.
pub fn kolmogorov_check(
    h: &dyn SmoothFunction,
    points: &[Vec<f64>],
    det_floor: f64,
) -> Result<SteepnessVerdict> {
    require(det_floor >= 0.0 && det_floor.is_finite(), || {
        format!("det_floor must be non-negative, got {det_floor}")
    })?;
    require(!points.is_empty(), || "at least one sample point is required".into())?;
    let n = h.dim();
    let mut worst = (f64::INFINITY, points[0].clone());
    let mut step = None;
    for x in points {
        require(x.len() == n, || "sample point has wrong dimension".into())?;
        let hess = h.hessian(x);
        step = step.or(h.hessian_step(x));
        let m = DMatrix::from_fn(n, n, |i, j| hess[i][j]);
        let det = m.determinant().abs();
        if det < worst.0 {
            worst = (det, x.clone());
        }
    }
    let accepted = worst.0 >= det_floor;
    let witness = (!accepted).then(|| Witness {
        reason: format!("|det Hessian| = {:e} below floor {det_floor:e}", worst.0),
        l: 0,
        basis: Vec::new(),
        point: Some(worst.1.clone()),
        xi: None,
        xi_grid: Vec::new(),
        eta_per_xi: 0,
        value: worst.0,
        bound: det_floor,
        perturbation: None,
        perturbation_distance: None,
    });
    Ok(SteepnessVerdict {
        kind: VerdictKind::Kolmogorov,
        accepted,
        constants: VerdictConstants::Kolmogorov {
            det_floor,
            min_abs_det: worst.0,
            worst_point: worst.1,
        },
        witness,
        samples: SamplingRecord {
            subspaces_per_dim: 0,
            perturbations: 0,
            xi_points: 0,
            eta_per_xi: 0,
            starts: 0,
            seed: 0,
            polynomial_norm: "coefficient-sup".into(),
            pairs_evaluated: points.len() as u64,
            xi_min: 0.0,
            xi_max: 0.0,
            hessian_step: step,
        },
    })
}

// ---------------------------------------------------------------------------
// Genericity

/// Candidate constants tried in order; the first accepted triple wins.
pub const RHO_CANDIDATES: [f64; 3] = [1e-3, 1e-2, 1e-1];
pub const C_CANDIDATES: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
pub const DELTA_CANDIDATES: [f64; 3] = [1e-2, 1e-1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoTuned {
    pub verdict: SteepnessVerdict,
    pub candidates_tried: usize,
}

/// Searches the candidate grid for constants making `p0` stably steep.
pub fn auto_tune(p0: &ActionPolynomial, sampling: &SamplingConfig) -> Result<AutoTuned> {
    let mut tried = 0;
    // the weakest candidate's counterexample is the most informative
    let mut first = None;
    for &rho in &RHO_CANDIDATES {
        for &c in &C_CANDIDATES {
            for &delta in &DELTA_CANDIDATES {
                tried += 1;
                let v = stably_steep_check(p0, rho, c, delta, sampling)?;
                if v.accepted {
                    return Ok(AutoTuned {
                        verdict: v,
                        candidates_tried: tried,
                    });
                }
                first.get_or_insert(v);
            }
        }
    }
    Ok(AutoTuned {
        verdict: first.expect("candidate grid is non-empty"),
        candidates_tried: tried,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericityTrial {
    pub index: usize,
    pub seed: u64,
    pub q: ActionPolynomial,
    pub accepted: bool,
    pub rho: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub candidates_tried: usize,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    pub n: usize,
    pub m: u32,
    pub trials: usize,
    pub coeff_box: f64,
    pub accepted: usize,
    pub fraction: f64,
    pub master_seed: u64,
    pub caveat: String,
    pub records: Vec<GenericityTrial>,
}

/// Seed of trial `index` derived from the master seed.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    rng_for(master, index as u64).gen()
}

/// Draws `Q` uniformly from the coefficient box and auto-tunes `base + Q`.
pub fn genericity_scan(
    base: Option<&ActionPolynomial>,
    n: usize,
    m: u32,
    trials: usize,
    coeff_box: f64,
    sampling: &SamplingConfig,
) -> Result<GenericityReport> {
    require(trials >= 1, || "trials must be at least 1".into())?;
    positive("coefficient box", coeff_box)?;
    let zero = ActionPolynomial::zero(n, m)?;
    let base = base.unwrap_or(&zero);
    require(base.n() == n, || "base polynomial has wrong dimension".into())?;
    let monomials = ActionPolynomial::basis(n, m);
    let records: Vec<GenericityTrial> = (0..trials)
        .into_par_iter()
        .map(|index| -> Result<GenericityTrial> {
            let seed = trial_seed(sampling.seed, index);
            let mut rng = rng_for(seed, 0);
            let mut q = ActionPolynomial::zero(n, m)?;
            for e in &monomials {
                q.add_term(e, rng.gen_range(-coeff_box..=coeff_box))?;
            }
            let p0 = base.add(&q)?.with_degree(m.max(base.m()))?;
            let cfg = SamplingConfig {
                seed,
                ..sampling.clone()
            };
            let tuned = auto_tune(&p0, &cfg)?;
            let (rho, c, delta) = match &tuned.verdict.constants {
                VerdictConstants::StablySteep { rho, c, delta, .. } if tuned.verdict.accepted => {
                    (Some(*rho), Some(*c), Some(*delta))
                }
                _ => (None, None, None),
            };
            Ok(GenericityTrial {
                index,
                seed,
                q,
                accepted: tuned.verdict.accepted,
                rho,
                c,
                delta,
                candidates_tried: tuned.candidates_tried,
                witness: tuned.verdict.witness,
            })
        })
        .collect::<Result<_>>()?;
    let accepted = records.iter().filter(|r| r.accepted).count();
    Ok(GenericityReport {
        n,
        m,
        trials,
        coeff_box,
        accepted,
        fraction: accepted as f64 / trials as f64,
        master_seed: sampling.seed,
        caveat: "acceptance means no counterexample was found under the recorded sampling; \
                 it is not a proof of stable steepness"
            .into(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::ClosureFunction;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn quad(a: f64, b: f64, c: f64) -> ActionPolynomial {
        let mut p = ActionPolynomial::zero(2, 2).unwrap();
        for (e, v) in [([2u32, 0], a), ([1, 1], b), ([0, 2], c)] {
            if v != 0.0 {
                p.add_term(&e, v).unwrap();
            }
        }
        p
    }

    fn small_sampling() -> SamplingConfig {
        SamplingConfig {
            subspaces_per_dim: 32,
            perturbations: 8,
            xi_points: 8,
            eta_per_xi: 16,
            ..SamplingConfig::default()
        }
    }

    #[test]
    fn exponent_formulas() {
        assert_eq!(m0(2).unwrap(), 4);
        assert_eq!(m0(3).unwrap(), 6);
        assert_eq!(m0(4).unwrap(), 10);
        assert_eq!(m0(1).unwrap(), 2);
        assert!(m0(0).is_err());
        let e = nekhoroshev_exponents(2, 1.0, 3.0).unwrap();
        assert_eq!(e.a, 2.0);
        assert_eq!(e.radius_exponent, 0.125);
        assert_eq!(e.time_exponent, 1.0 / 24.0);
        assert_eq!(e.threshold_exponent, 8.0);
        assert_eq!(nekhoroshev_exponents(3, 2.0, 1.0).unwrap().a, 7.0);
        assert_eq!(nekhoroshev_exponents(1, 5.0, 1.0).unwrap().a, 1.0);
        assert!(nekhoroshev_exponents(2, 0.5, 1.0).is_err());
        assert_eq!(double_exp_exponent(1.0, 1.0).unwrap(), 0.5);
        assert_eq!(double_exp_exponent(2.0, 1.0).unwrap(), 0.25);
        assert_eq!(kam_exponent_bound(1.0, 2).unwrap(), 0.5);
        assert!(double_exp_exponent(0.5, 1.0).is_err());
    }

    #[test]
    fn exponent_a_is_geometric_sum() {
        for n in 1..6usize {
            assert_eq!(nekhoroshev_exponents(n, 1.0, 1.0).unwrap().a, n as f64);
            for p in 2..5 {
                let a = nekhoroshev_exponents(n, p as f64, 1.0).unwrap().a;
                assert_eq!(a, ((p as f64).powi(n as i32) - 1.0) / (p as f64 - 1.0));
                assert!(nekhoroshev_exponents(n + 1, p as f64, 1.0).unwrap().a > a);
                assert!(nekhoroshev_exponents(n, p as f64 + 1.0, 1.0).unwrap().a > a || n == 1);
            }
        }
    }

    #[test]
    fn prediction_in_log_log_form() {
        let s = stability_time_prediction(1.0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(s.t.unwrap(), std::f64::consts::E.exp(), epsilon = 1e-12);
        let s = stability_time_prediction(1.0, 0.5, 0.25).unwrap();
        assert_eq!(s.log_log_t, 2.0);
        let a = stability_time_prediction(1.0, 0.5, 1e-6).unwrap();
        let b = stability_time_prediction(1.0, 0.5, 0.5e-6).unwrap();
        assert_abs_diff_eq!(b.log_log_t / a.log_log_t, 2f64.sqrt(), epsilon = 1e-12);
        assert!(a.t.is_none());
    }

    #[test]
    fn constants_from_taylor() {
        let k = steep_constants_from_taylor(1.0, 1.0, 0.1, 2).unwrap();
        assert_eq!(
            k,
            SteepConstants {
                kappa: 0.5,
                c: 0.5,
                delta: 0.1,
                p: 3
            }
        );
        assert_eq!(steep_constants_from_taylor(1.0, 2.0, 0.1, 2).unwrap().c, 1.0);
        assert_eq!(steep_constants_from_taylor(1.0, 1.0, 0.1, 3).unwrap().p, 5);
        assert!(steep_constants_from_taylor(0.0, 1.0, 0.1, 3).is_err());
    }

    #[test]
    fn profile_examples() {
        let cfg = MinimizerConfig::default();
        let p = ActionPolynomial::half_norm_squared(2);
        let u = normalized(vec![0.3, -0.8]);
        let prof = maxmin_profile(&p, &[u], &[0.1], 64, &cfg).unwrap();
        assert_abs_diff_eq!(prof[0].1, 0.1, epsilon = 1e-15);

        let saddle = quad(1.0, 0.0, -1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let prof = maxmin_profile(&saddle, &[vec![s, s]], &[0.1, 0.5], 64, &cfg).unwrap();
        assert!(prof.iter().all(|(_, v)| *v < 1e-15));

        let cross = quad(0.0, 1.0, 0.0);
        let prof = maxmin_profile(&cross, &[vec![1.0, 0.0]], &[0.3], 64, &cfg).unwrap();
        assert_eq!(prof[0].1, 0.0);

        assert!(matches!(
            maxmin_profile(&p, &[vec![1.0, 1.0]], &[0.1], 8, &cfg),
            Err(SteepnessError::DegenerateBasis(_))
        ));
    }

    #[test]
    fn plane_profile_in_three_dimensions() {
        // P = x² + 2y² + 3z²/2 on span(e₁, e₂): min gradient on circle η is 2η
        let mut p = ActionPolynomial::zero(3, 2).unwrap();
        p.add_term(&[2, 0, 0], 1.0).unwrap();
        p.add_term(&[0, 2, 0], 2.0).unwrap();
        p.add_term(&[0, 0, 2], 1.5).unwrap();
        let basis = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let prof = maxmin_profile(&p, &basis, &[0.2], 16, &MinimizerConfig::default()).unwrap();
        assert_abs_diff_eq!(prof[0].1, 0.4, epsilon = 1e-9);
        // full space of a 4-dim polynomial restricted to a 3-dim subspace
        let mut p = ActionPolynomial::zero(4, 2).unwrap();
        for (j, c) in [0.5, 1.0, 2.0, 3.0].iter().enumerate() {
            let mut e = [0u32; 4];
            e[j] = 2;
            p.add_term(&e, *c).unwrap();
        }
        let basis: Vec<Vec<f64>> = (1..4).map(|j| unit(4, j)).collect();
        let prof = maxmin_profile(&p, &basis, &[0.1], 8, &MinimizerConfig::default()).unwrap();
        assert_abs_diff_eq!(prof[0].1, 0.2, epsilon = 1e-6);
    }

    #[test]
    fn convex_quadratic_accepted() {
        let p = ActionPolynomial::half_norm_squared(2);
        let v = stably_steep_check(&p, 0.1, 0.5, 0.5, &small_sampling()).unwrap();
        assert!(v.accepted, "{:?}", v.witness);
        assert!(v.samples.pairs_evaluated > 0);
    }

    #[test]
    fn saddle_refuted_with_reproducible_witness() {
        let p = quad(1.0, 0.0, -1.0);
        let v = stably_steep_check(&p, 1e-3, 1e-3, 0.5, &small_sampling()).unwrap();
        assert!(!v.accepted);
        let w = v.witness.unwrap();
        assert!(w.value <= w.bound);
        let u = &w.basis[0];
        assert_abs_diff_eq!(u[0].abs(), u[1].abs(), epsilon = 1e-9);
        assert!(verify_polynomial_witness(&w, &MinimizerConfig::default()).unwrap());
    }

    #[test]
    fn one_dimension_is_vacuous() {
        let p = ActionPolynomial::from_terms(1, 2, [(&[2u32][..], -3.0)]).unwrap();
        assert!(stably_steep_check(&p, 0.1, 1.0, 1.0, &small_sampling()).unwrap().accepted);
    }

    #[test]
    fn adversarial_perturbation_stays_in_ball() {
        let p = quad(1.0, 0.3, -1.0).with_degree(4).unwrap();
        let basis = ActionPolynomial::basis(2, 4);
        let u = normalized(vec![0.6, 0.8]);
        let q = adversarial_perturbation(&p, &basis, &u, 0.05);
        assert!(q.sub(&p).unwrap().sup_norm() <= 0.05 * (1.0 + 1e-12));
        let a = p.restrict_to_line(&u);
        let b = q.restrict_to_line(&u);
        assert!(b[2].abs() < a[2].abs());
    }

    #[test]
    fn steep_function_examples() {
        let sampling = small_sampling();
        let h = ClosureFunction::new(2, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]))
            .with_gradient(|x| x.to_vec());
        let pts = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, -2.0]];
        let v = steep_function_check(&h, &pts, 1.0, 0.5, 0.5, &[1.0], &sampling).unwrap();
        assert!(v.accepted);

        let lin = ClosureFunction::new(2, |x| x[0]).with_gradient(|_| vec![1.0, 0.0]);
        let v = steep_function_check(&lin, &pts, 0.5, 0.5, 0.5, &[1.0], &sampling).unwrap();
        assert!(!v.accepted);
        let w = v.witness.unwrap();
        assert_eq!(w.l, 1);
        assert!(verify_function_witness(&lin, &w, &sampling.minimizer()).unwrap());

        let v = steep_function_check(&h, &[vec![0.0, 0.0]], 0.1, 0.5, 0.5, &[1.0], &sampling).unwrap();
        assert!(!v.accepted);
        assert_eq!(v.witness.unwrap().l, 0);

        let no_grad = ClosureFunction::new(2, |x| x[0]);
        assert_eq!(
            steep_function_check(&no_grad, &pts, 0.5, 0.5, 0.5, &[1.0], &sampling),
            Err(SteepnessError::GradientUnavailable)
        );
    }

    #[test]
    fn kolmogorov_examples() {
        let pts = vec![vec![0.1, 0.2], vec![-1.0, 3.0]];
        let v = kolmogorov_check(&ActionPolynomial::half_norm_squared(2), &pts, 0.5).unwrap();
        assert!(v.accepted);
        let v = kolmogorov_check(&quad(0.5, 0.0, 0.0), &pts, 1e-12).unwrap();
        assert!(!v.accepted);
        let mixed = quad(0.5, 1.0, 0.0);
        let v = kolmogorov_check(&mixed, &pts, 0.5).unwrap();
        assert!(v.accepted);
        match v.constants {
            VerdictConstants::Kolmogorov { min_abs_det, .. } => {
                assert_abs_diff_eq!(min_abs_det, 1.0, epsilon = 1e-12)
            }
            _ => unreachable!(),
        }
        // sampled Hessian of a non-polynomial function records its step
        let f = ClosureFunction::new(2, |x| x[0].exp() + x[1] * x[1]);
        let v = kolmogorov_check(&f, &[vec![0.0, 0.0]], 0.5).unwrap();
        assert!(v.accepted);
        assert!(v.samples.hessian_step.is_some());
    }

    #[test]
    fn genericity_near_saddle_is_refuted() {
        let base = quad(1.0, 0.0, -1.0).with_degree(4).unwrap();
        let sampling = small_sampling();
        let r = genericity_scan(Some(&base), 2, 4, 3, 1e-6, &sampling).unwrap();
        assert_eq!(r.accepted, 0);
        assert!(genericity_scan(None, 2, 4, 0, 1.0, &sampling).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn quadratic_lines_match_closed_form(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
                                             phi in 0.0f64..6.3, xi in 0.01f64..1.0) {
            let p = quad(a, b, c);
            let u = vec![phi.cos(), phi.sin()];
            let q = p.restrict_to_line(&u)[2];
            let prof = maxmin_profile(&p, &[u], &[xi], 64, &MinimizerConfig::default()).unwrap();
            prop_assert!((prof[0].1 - 2.0 * q.abs() * xi).abs() < 1e-9);
        }

        #[test]
        fn profile_monotone_and_basis_invariant(coefs in proptest::collection::vec(-1.0f64..1.0, 10),
                                                rot in 0.0f64..6.3) {
            let mut p = ActionPolynomial::zero(3, 3).unwrap();
            for (e, c) in ActionPolynomial::basis(3, 3).iter().zip(&coefs) {
                p.add_term(e, *c).unwrap();
            }
            let b1 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]];
            let b2: Vec<Vec<f64>> = vec![
                b1[0].iter().zip(&b1[1]).map(|(x, y)| rot.cos() * x + rot.sin() * y).collect(),
                b1[0].iter().zip(&b1[1]).map(|(x, y)| -rot.sin() * x + rot.cos() * y).collect(),
            ];
            let grid = xi_grid(0.5, 6);
            let cfg = MinimizerConfig::default();
            let p1 = maxmin_profile(&p, &b1, &grid, 12, &cfg).unwrap();
            let p2 = maxmin_profile(&p, &b2, &grid, 12, &cfg).unwrap();
            for w in p1.windows(2) {
                prop_assert!(w[1].1 >= w[0].1);
            }
            for (x, y) in p1.iter().zip(&p2) {
                prop_assert!((x.1 - y.1).abs() < 1e-8, "{} vs {}", x.1, y.1);
            }
        }
    }
}
