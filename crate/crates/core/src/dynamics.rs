//! Structure-preserving integration on `T^n × R^n` and escape times from
//! action neighborhoods of a torus.
//!
//! Angles in [`PhasePoint`] are stored in turns (`T^n = R^n/Z^n`); the series
//! themselves use `e^{ik·θ}` with `θ` in radians, so states are converted at
//! the boundary and integrated with unwrapped radian angles.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{FourierTaylorSeries, SeriesError};

const TAU: f64 = std::f64::consts::TAU;

pub const IMPLICIT_TOL: f64 = 1e-13;
pub const IMPLICIT_MAX_ITER: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("splitting requires H = h(I) + f(θ)")]
    NotDecomposable,
    #[error("implicit midpoint did not converge at step {step} (update {update:e})")]
    ImplicitNotConverged { step: u64, update: f64 },
    #[error("non-finite state at step {step}")]
    NonFinite { step: u64 },
    #[error("integration failed after {} steps: {source}", partial.steps)]
    Escape {
        source: Box<DynamicsError>,
        partial: Box<EscapeTimeRecord>,
    },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("i/o: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    /// Angles in turns, in `[0, 1)`.
    pub theta: Vec<f64>,
    #[serde(rename = "I")]
    pub actions: Vec<f64>,
}

fn wrap_turn(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl PhasePoint {
    pub fn new(theta: Vec<f64>, actions: Vec<f64>) -> Result<Self> {
        if theta.len() != actions.len() || theta.is_empty() {
            return Err(DynamicsError::InvalidArgument(format!(
                "angle/action lengths {} and {}",
                theta.len(),
                actions.len()
            )));
        }
        if theta.iter().chain(&actions).any(|x| !x.is_finite()) {
            return Err(DynamicsError::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self {
            theta: theta.into_iter().map(wrap_turn).collect(),
            actions,
        })
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    fn from_radians(theta: &[f64], actions: &[f64]) -> Self {
        Self {
            theta: theta.iter().map(|t| wrap_turn(t / TAU)).collect(),
            actions: actions.to_vec(),
        }
    }

    fn radians(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t * TAU).collect()
    }
}

// ---------------------------------------------------------------------------
// Compiled evaluation

struct Wave {
    k: Vec<f64>,
    /// `(l, cos coefficient, sin coefficient)`.
    parts: Vec<(Vec<u32>, f64, f64)>,
}

/// Real cos/sin form of a series grouped by frequency.
struct Compiled {
    n: usize,
    waves: Vec<Wave>,
}

fn powu(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

impl Compiled {
    fn new(h: &FourierTaylorSeries) -> Self {
        let mut waves: Vec<Wave> = Vec::new();
        for t in h.real_terms() {
            let k: Vec<f64> = t.k.iter().map(|&x| x as f64).collect();
            match waves.iter_mut().find(|w| w.k == k) {
                Some(w) => w.parts.push((t.l, t.re, t.im)),
                None => waves.push(Wave {
                    k,
                    parts: vec![(t.l, t.re, t.im)],
                }),
            }
        }
        Self { n: h.n(), waves }
    }

    fn value(&self, theta: &[f64], actions: &[f64]) -> f64 {
        let mut acc = 0.0;
        for w in &self.waves {
            let ph: f64 = w.k.iter().zip(theta).map(|(a, b)| a * b).sum();
            let (s, c) = ph.sin_cos();
            for (l, a, b) in &w.parts {
                let mono: f64 = l.iter().zip(actions).map(|(&p, &x)| powu(x, p)).product();
                acc += (a * c + b * s) * mono;
            }
        }
        acc
    }

    /// `(∂_θ H, ∂_I H)` written into the output slices.
    fn gradient(&self, theta: &[f64], actions: &[f64], d_theta: &mut [f64], d_act: &mut [f64]) {
        d_theta.fill(0.0);
        d_act.fill(0.0);
        for w in &self.waves {
            let ph: f64 = w.k.iter().zip(theta).map(|(a, b)| a * b).sum();
            let (s, c) = ph.sin_cos();
            for (l, a, b) in &w.parts {
                let trig = a * c + b * s;
                let dtrig = -a * s + b * c;
                let mono: f64 = l.iter().zip(actions).map(|(&p, &x)| powu(x, p)).product();
                if dtrig != 0.0 {
                    for j in 0..self.n {
                        d_theta[j] += w.k[j] * dtrig * mono;
                    }
                }
                for j in 0..self.n {
                    if l[j] == 0 {
                        continue;
                    }
                    let mut dm = l[j] as f64 * powu(actions[j], l[j] - 1);
                    for (i, (&p, &x)) in l.iter().zip(actions).enumerate() {
                        if i != j {
                            dm *= powu(x, p);
                        }
                    }
                    d_act[j] += trig * dm;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Integrators

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Splitting when `H` decomposes, implicit midpoint otherwise.
    #[default]
    Auto,
    Splitting,
    ImplicitMidpoint,
}

/// True iff every angle-dependent term is action independent.
pub fn is_decomposable(h: &FourierTaylorSeries) -> bool {
    h.terms()
        .all(|(key, _)| key.is_angle_independent() || key.degree() == 0)
}

struct Stepper {
    scheme: Scheme,
    full: Compiled,
    kick: Compiled,
    drift: Compiled,
    n: usize,
    // scratch
    gt: Vec<f64>,
    gi: Vec<f64>,
}

impl Stepper {
    fn new(h: &FourierTaylorSeries, scheme: Scheme) -> Result<Self> {
        let scheme = match (scheme, is_decomposable(h)) {
            (Scheme::Splitting, false) => return Err(DynamicsError::NotDecomposable),
            (Scheme::Auto, true) => Scheme::Splitting,
            (Scheme::Auto, false) => Scheme::ImplicitMidpoint,
            (s, _) => s,
        };
        let n = h.n();
        Ok(Self {
            scheme,
            full: Compiled::new(h),
            kick: Compiled::new(&h.oscillating()),
            drift: Compiled::new(&h.average()),
            n,
            gt: vec![0.0; n],
            gi: vec![0.0; n],
        })
    }

    /// One step of size `dt` (negative `dt` runs backwards).
    fn step(&mut self, theta: &mut [f64], actions: &mut [f64], dt: f64, index: u64) -> Result<()> {
        match self.scheme {
            Scheme::Splitting => {
                self.kick.gradient(theta, actions, &mut self.gt, &mut self.gi);
                for j in 0..self.n {
                    actions[j] -= 0.5 * dt * self.gt[j];
                }
                self.drift.gradient(theta, actions, &mut self.gt, &mut self.gi);
                for j in 0..self.n {
                    theta[j] += dt * self.gi[j];
                }
                self.kick.gradient(theta, actions, &mut self.gt, &mut self.gi);
                for j in 0..self.n {
                    actions[j] -= 0.5 * dt * self.gt[j];
                }
            }
            _ => self.midpoint(theta, actions, dt, index)?,
        }
        if theta.iter().chain(actions.iter()).any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite { step: index });
        }
        Ok(())
    }

    fn midpoint(&mut self, theta: &mut [f64], actions: &mut [f64], dt: f64, index: u64) -> Result<()> {
        let n = self.n;
        let (t0, i0) = (theta.to_vec(), actions.to_vec());
        let mut mt = vec![0.0; n];
        let mut mi = vec![0.0; n];
        // explicit Euler predictor
        self.full.gradient(&t0, &i0, &mut self.gt, &mut self.gi);
        let mut t1: Vec<f64> = (0..n).map(|j| t0[j] + dt * self.gi[j]).collect();
        let mut i1: Vec<f64> = (0..n).map(|j| i0[j] - dt * self.gt[j]).collect();
        let mut update = f64::INFINITY;
        for _ in 0..IMPLICIT_MAX_ITER {
            for j in 0..n {
                mt[j] = 0.5 * (t0[j] + t1[j]);
                mi[j] = 0.5 * (i0[j] + i1[j]);
            }
            self.full.gradient(&mt, &mi, &mut self.gt, &mut self.gi);
            update = 0.0;
            let mut scale = 0.0;
            for j in 0..n {
                let nt = t0[j] + dt * self.gi[j];
                let ni = i0[j] - dt * self.gt[j];
                update += (nt - t1[j]).powi(2) + (ni - i1[j]).powi(2);
                scale += nt * nt + ni * ni;
                t1[j] = nt;
                i1[j] = ni;
            }
            update = update.sqrt();
            if !update.is_finite() {
                return Err(DynamicsError::NonFinite { step: index });
            }
            if update <= IMPLICIT_TOL * (1.0 + scale.sqrt()) {
                theta.copy_from_slice(&t1);
                actions.copy_from_slice(&i1);
                return Ok(());
            }
        }
        Err(DynamicsError::ImplicitNotConverged { step: index, update })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub point: PhasePoint,
    #[serde(rename = "H")]
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: u64,
    pub checkpoints: Vec<Checkpoint>,
    /// Max over checkpoints of `|H(z(t)) − H(z(0))|`.
    pub energy_drift: f64,
    #[serde(rename = "final")]
    pub final_point: PhasePoint,
    /// Final angles without reduction mod 1, in turns.
    pub final_theta_unwrapped: Vec<f64>,
}

impl Trajectory {
    /// CSV rows `t, θ_1…θ_n, I_1…I_n, H`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.final_point.n();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|j| format!("theta_{j}")));
        header.extend((1..=n).map(|j| format!("I_{j}")));
        header.push("H".into());
        let io = |e: csv::Error| DynamicsError::Io(e.to_string());
        w.write_record(&header).map_err(io)?;
        for c in &self.checkpoints {
            let mut row = vec![c.t.to_string()];
            row.extend(c.point.theta.iter().map(|x| x.to_string()));
            row.extend(c.point.actions.iter().map(|x| x.to_string()));
            row.push(c.energy.to_string());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| DynamicsError::Io(e.to_string()))
    }
}

fn check_point(h: &FourierTaylorSeries, z: &PhasePoint) -> Result<()> {
    if z.n() != h.n() || z.theta.len() != h.n() {
        return Err(DynamicsError::InvalidArgument(format!(
            "phase point dimension {} does not match series dimension {}",
            z.n(),
            h.n()
        )));
    }
    Ok(())
}

/// Integrates Hamilton's equations `θ̇ = ∂_I H`, `İ = −∂_θ H` for `steps` steps of size `dt`.
///
/// A negative `dt` integrates backwards in time. `checkpoints` states are
/// recorded at evenly spaced steps in addition to the initial one.
pub fn integrate(
    h: &FourierTaylorSeries,
    z0: &PhasePoint,
    dt: f64,
    steps: u64,
    scheme: Scheme,
    checkpoints: usize,
) -> Result<Trajectory> {
    check_point(h, z0)?;
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!("dt must be non-zero, got {dt}")));
    }
    let mut stepper = Stepper::new(h, scheme)?;
    let mut theta = z0.radians();
    let mut actions = z0.actions.clone();
    let e0 = stepper.full.value(&theta, &actions);
    let mut out = vec![Checkpoint {
        t: 0.0,
        point: z0.clone(),
        energy: e0,
    }];
    let every = if checkpoints == 0 {
        u64::MAX
    } else {
        (steps / checkpoints as u64).max(1)
    };
    let mut drift: f64 = 0.0;
    for s in 1..=steps {
        stepper.step(&mut theta, &mut actions, dt, s)?;
        if s % every == 0 || s == steps {
            let e = stepper.full.value(&theta, &actions);
            drift = drift.max((e - e0).abs());
            if s % every == 0 {
                out.push(Checkpoint {
                    t: s as f64 * dt,
                    point: PhasePoint::from_radians(&theta, &actions),
                    energy: e,
                });
            }
        }
    }
    Ok(Trajectory {
        scheme: stepper.scheme,
        dt,
        steps,
        checkpoints: out,
        energy_drift: drift,
        final_point: PhasePoint::from_radians(&theta, &actions),
        final_theta_unwrapped: theta.iter().map(|t| t / TAU).collect(),
    })
}

/// Max over every step of `|H(z(t)) − H(z(0))|`.
pub fn max_energy_error(
    h: &FourierTaylorSeries,
    z0: &PhasePoint,
    dt: f64,
    steps: u64,
    scheme: Scheme,
) -> Result<f64> {
    Ok(integrate(h, z0, dt, steps, scheme, steps as usize)?.energy_drift)
}

/// Determinant of the finite-difference Jacobian of one step in radian coordinates.
pub fn step_jacobian_determinant(
    h: &FourierTaylorSeries,
    z: &PhasePoint,
    dt: f64,
    scheme: Scheme,
) -> Result<f64> {
    check_point(h, z)?;
    let n = h.n();
    let mut stepper = Stepper::new(h, scheme)?;
    let base: Vec<f64> = z.radians().into_iter().chain(z.actions.clone()).collect();
    let mut map = |x: &[f64]| -> Result<Vec<f64>> {
        let mut t = x[..n].to_vec();
        let mut a = x[n..].to_vec();
        stepper.step(&mut t, &mut a, dt, 1)?;
        Ok(t.into_iter().chain(a).collect())
    };
    let eps = 1e-6;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
    for c in 0..2 * n {
        let mut p = base.clone();
        let mut m = base.clone();
        p[c] += eps;
        m[c] -= eps;
        let fp = map(&p)?;
        let fm = map(&m)?;
        for r in 0..2 * n {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * eps);
        }
    }
    Ok(jac.determinant())
}

// ---------------------------------------------------------------------------
// Escape times

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialActions {
    /// Uniform on the sphere `‖I − I*‖ = r`.
    #[default]
    Sphere,
    /// Uniform in the ball `‖I − I*‖ ≤ r`.
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeConfig {
    pub initial: InitialActions,
    /// Fixed step; `None` selects `min(0.1, 0.01 / max|∂_θ H|)`.
    pub dt: Option<f64>,
    pub budget_steps: u64,
    pub scheme: Scheme,
    /// Steps between energy checks.
    pub energy_every: u64,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            initial: InitialActions::Sphere,
            dt: None,
            budget_steps: 1_000_000,
            scheme: Scheme::Auto,
            energy_every: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeTimeRecord {
    pub r: f64,
    #[serde(rename = "I_star")]
    pub i_star: Vec<f64>,
    pub initial: PhasePoint,
    /// Time of the first step with `‖I − I*‖ ≥ 2r`; `None` when censored.
    pub escape_time: Option<f64>,
    pub censored: bool,
    /// Time of the preceding step; the crossing lies in `(escape_lower, escape_time]`.
    pub escape_lower: Option<f64>,
    /// `‖I − I*‖` at escape, or at the end of the budget.
    pub exit_norm: f64,
    pub energy_drift: f64,
    pub steps: u64,
    pub dt: f64,
    pub budget_steps: u64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl EscapeTimeRecord {
    /// Escape time, or the budget time as a lower bound when censored.
    pub fn time_or_budget(&self) -> f64 {
        self.escape_time
            .unwrap_or(self.budget_steps as f64 * self.dt)
    }
}

/// `max|∂_θ H|` bound over `‖I − I*‖ ≤ 2r`.
pub fn angle_gradient_bound(h: &FourierTaylorSeries, i_star: &[f64], r: f64) -> f64 {
    let reach: Vec<f64> = i_star.iter().map(|x| x.abs() + 2.0 * r).collect();
    h.terms()
        .filter(|(key, _)| !key.is_angle_independent())
        .map(|(key, c)| {
            let k: f64 = key.k().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let mono: f64 = key.l().iter().zip(&reach).map(|(&p, &x)| powu(x, p)).product();
            k * c.norm() * mono
        })
        .sum()
}

pub fn default_dt(h: &FourierTaylorSeries, i_star: &[f64], r: f64) -> f64 {
    let g = angle_gradient_bound(h, i_star, r);
    if g > 0.0 {
        (0.01 / g).min(0.1)
    } else {
        0.1
    }
}

/// Initial condition for ensemble member `seed`.
///
/// The direction and angles depend only on the seed, so the same seed gives
/// common random numbers across radii.
pub fn sample_initial(i_star: &[f64], r: f64, kind: InitialActions, seed: u64) -> PhasePoint {
    let n = i_star.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let s = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = match kind {
        InitialActions::Sphere => r,
        InitialActions::Ball => r * rng.gen::<f64>().powf(1.0 / n as f64),
    };
    for x in &mut u {
        *x *= radius / s;
    }
    let theta: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    PhasePoint {
        theta,
        actions: i_star.iter().zip(&u).map(|(a, b)| a + b).collect(),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Integrates from a sampled initial condition until the actions leave the open `2r`-ball.
pub fn escape_time(
    h: &FourierTaylorSeries,
    i_star: &[f64],
    r: f64,
    cfg: &EscapeConfig,
    seed: u64,
) -> Result<EscapeTimeRecord> {
    if i_star.len() != h.n() {
        return Err(DynamicsError::InvalidArgument("I_star has wrong dimension".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!("r must be positive, got {r}")));
    }
    let z0 = sample_initial(i_star, r, cfg.initial, seed);
    escape_time_from(h, i_star, r, &z0, cfg, seed)
}

/// [`escape_time`] from an explicit initial condition.
pub fn escape_time_from(
    h: &FourierTaylorSeries,
    i_star: &[f64],
    r: f64,
    z0: &PhasePoint,
    cfg: &EscapeConfig,
    seed: u64,
) -> Result<EscapeTimeRecord> {
    check_point(h, z0)?;
    let dt = cfg.dt.unwrap_or_else(|| default_dt(h, i_star, r));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut stepper = Stepper::new(h, cfg.scheme)?;
    let mut theta = z0.radians();
    let mut actions = z0.actions.clone();
    let e0 = stepper.full.value(&theta, &actions);
    let every = cfg.energy_every.max(1);
    let mut record = EscapeTimeRecord {
        r,
        i_star: i_star.to_vec(),
        initial: z0.clone(),
        escape_time: None,
        censored: true,
        escape_lower: None,
        exit_norm: distance(&actions, i_star),
        energy_drift: 0.0,
        steps: 0,
        dt,
        budget_steps: cfg.budget_steps,
        seed,
        scheme: stepper.scheme,
    };
    if record.exit_norm >= 2.0 * r {
        record.escape_time = Some(0.0);
        record.censored = false;
        return Ok(record);
    }
    for s in 1..=cfg.budget_steps {
        if let Err(e) = stepper.step(&mut theta, &mut actions, dt, s) {
            record.steps = s - 1;
            return Err(DynamicsError::Escape {
                source: Box::new(e),
                partial: Box::new(record),
            });
        }
        let d = distance(&actions, i_star);
        let escaped = d >= 2.0 * r;
        if escaped || s % every == 0 || s == cfg.budget_steps {
            let e = stepper.full.value(&theta, &actions);
            record.energy_drift = record.energy_drift.max((e - e0).abs());
        }
        record.steps = s;
        record.exit_norm = d;
        if escaped {
            record.escape_time = Some(s as f64 * dt);
            record.escape_lower = Some((s - 1) as f64 * dt);
            record.censored = false;
            return Ok(record);
        }
    }
    Ok(record)
}
