//! Experiment orchestration: configuration, escape sweeps, scaling fits and
//! the end-to-end pipeline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::birkhoff::{bnf, BirkhoffError, BnfConfig, NormalFormResult};
use crate::diophantine::{default_scan_depth, gamma_estimate, DiophantineReport};
use crate::dynamics::{escape_time, DynamicsError, EscapeConfig, EscapeTimeRecord};
use crate::series::{FourierTaylorSeries, SeriesError};
use crate::steepness::{
    auto_tune, double_exp_exponent, kam_exponent_bound, m0, nekhoroshev_exponents,
    NekhoroshevExponents, SamplingConfig, SteepnessVerdict,
};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("i/o")]
    Io(#[from] std::io::Error),
    #[error("serialization")]
    Json(#[from] serde_json::Error),
    #[error("csv")]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, LabError>;

// ---------------------------------------------------------------------------
// Configuration

const PRESETS: [(&str, &str); 8] = [
    ("golden-convex", include_str!("../presets/golden-convex.toml")),
    ("resonant", include_str!("../presets/resonant.toml")),
    ("saddle", include_str!("../presets/saddle.toml")),
    ("pendulum", include_str!("../presets/pendulum.toml")),
    ("integrable", include_str!("../presets/integrable.toml")),
    ("bnf-residual", include_str!("../presets/bnf-residual.toml")),
    ("exact-removal", include_str!("../presets/exact-removal.toml")),
    ("strongly-perturbed", include_str!("../presets/strongly-perturbed.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// One `(re cos(k·θ) + im sin(k·θ)) I^l` term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub k: Vec<i32>,
    pub l: Vec<u32>,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub terms: Vec<TermSpec>,
}

/// Either a preset name or explicit terms; `ω·I` is always added from `omega`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HamiltonianSpec {
    Preset(String),
    Series(SeriesSpec),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub hamiltonian: HamiltonianSpec,
    /// Taken from the preset when omitted.
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Defaults to `n − 1`.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Torus actions; the origin by default.
    #[serde(default, rename = "I_star")]
    pub i_star: Option<Vec<f64>>,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub escape: EscapeConfig,
    #[serde(default)]
    pub bnf: BnfConfig,
    #[serde(default)]
    pub steepness: SamplingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}

fn default_r_grid() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_ensemble() -> usize {
    32
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| LabError::UnknownPreset(name.into()))?;
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    /// Replaces a preset reference by its terms and fills unset values.
    fn resolved(mut self) -> Result<Self> {
        if let HamiltonianSpec::Preset(name) = &self.hamiltonian {
            let base = Self::preset(name)?;
            self.hamiltonian = base.hamiltonian;
            if self.omega.is_none() {
                self.omega = base.omega;
            }
            if self.tau.is_none() {
                self.tau = base.tau;
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.omega.as_ref().map_or(0, Vec::len)
    }

    pub fn omega(&self) -> &[f64] {
        self.omega.as_deref().unwrap_or(&[])
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(self.n().saturating_sub(1) as f64)
    }

    pub fn i_star(&self) -> Vec<f64> {
        self.i_star.clone().unwrap_or_else(|| vec![0.0; self.n()])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        let n = self.n();
        if n == 0 {
            return bad("omega must be a non-empty vector".into());
        }
        if self.omega().iter().any(|x| !x.is_finite()) {
            return bad("omega must be finite".into());
        }
        if let HamiltonianSpec::Series(s) = &self.hamiltonian {
            for t in &s.terms {
                if t.k.len() != n || t.l.len() != n {
                    return bad(format!("term {:?}/{:?} does not match n = {n}", t.k, t.l));
                }
            }
        }
        if self.i_star.as_ref().is_some_and(|v| v.len() != n) {
            return bad("I_star has wrong dimension".into());
        }
        if !(self.alpha >= 1.0) {
            return bad(format!("alpha must be at least 1, got {}", self.alpha));
        }
        if self.tau() < n as f64 - 1.0 {
            return bad(format!("tau must be at least n - 1, got {}", self.tau()));
        }
        if self.r_grid.is_empty() || self.r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("r_grid must hold positive radii".into());
        }
        if self.r_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("r_grid must be strictly decreasing".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if self.escape.budget_steps == 0 {
            return bad("escape.budget_steps must be positive".into());
        }
        if self.escape.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
            return bad("escape.dt must be positive".into());
        }
        Ok(())
    }

    /// `H = ω·I + Σ terms`.
    pub fn hamiltonian(&self) -> Result<FourierTaylorSeries> {
        let mut h = FourierTaylorSeries::linear(self.omega());
        match &self.hamiltonian {
            HamiltonianSpec::Series(s) => {
                for t in &s.terms {
                    h.add_real_term(&t.k, &t.l, t.re, t.im)?;
                }
            }
            HamiltonianSpec::Preset(p) => {
                return Err(LabError::Config(format!("unresolved preset {p:?}")))
            }
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
// Escape sweeps and fits

/// Seed of ensemble member `index`; identical across radii.
pub fn member_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(1 << 40 | index as u64);
    rng.gen()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub r: f64,
    pub members: usize,
    pub censored: usize,
    /// Censored-aware median; a lower bound when `median_censored`.
    pub median_t: f64,
    pub median_censored: bool,
    /// Mean of `time_or_budget`, a lower bound if anything is censored.
    pub mean_t: f64,
    pub min_t: f64,
    pub dt: f64,
    pub max_energy_drift: f64,
}

/// Median treating censored values as "at least the budget".
pub fn censored_median(records: &[EscapeTimeRecord]) -> (f64, bool) {
    let mut v: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.time_or_budget(), r.censored))
        .collect();
    // censored values sort after every escape with the same time
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = v.len();
    if n == 0 {
        return (f64::NAN, true);
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        (0.5 * (a.0 + b.0), a.1 || b.1)
    }
}

pub fn summarize(r: f64, records: &[EscapeTimeRecord]) -> RadiusSummary {
    let (median_t, median_censored) = censored_median(records);
    let times: Vec<f64> = records.iter().map(|r| r.time_or_budget()).collect();
    RadiusSummary {
        r,
        members: records.len(),
        censored: records.iter().filter(|r| r.censored).count(),
        median_t,
        median_censored,
        mean_t: times.iter().sum::<f64>() / times.len().max(1) as f64,
        min_t: times.iter().copied().fold(f64::INFINITY, f64::min),
        dt: records.first().map_or(0.0, |r| r.dt),
        max_energy_drift: records.iter().map(|r| r.energy_drift).fold(0.0, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitLaw {
    /// `log T = C r^{−u}`.
    ExpLaw,
    /// `log log T = C r^{−u}`.
    DoubleExpLaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    ExpLaw,
    DoubleExpLaw,
    Insufficient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub r: f64,
    /// Natural log of the representative escape time.
    pub log_t: f64,
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub law: FitLaw,
    pub fit_kind: FitKind,
    pub points: Vec<FitPoint>,
    pub fitted_u: Option<f64>,
    #[serde(rename = "fitted_C")]
    pub fitted_c: Option<f64>,
    pub censored_count: usize,
    /// Uncensored points usable by the law (its transform is defined).
    pub used_points: usize,
    /// Fewer than three usable uncensored points.
    pub extrapolative: bool,
    /// Mean residual of the used points.
    pub residual_mean: Option<f64>,
    /// Every censored lower bound lies at or below the fitted curve.
    pub censored_consistent: Option<bool>,
}

impl ScalingFit {
    /// Fitted `log T` at radius `r`.
    pub fn curve(&self, r: f64) -> Option<f64> {
        let (u, c) = (self.fitted_u?, self.fitted_c?);
        let inner = c * r.powf(-u);
        Some(match self.law {
            FitLaw::ExpLaw => inner,
            FitLaw::DoubleExpLaw => inner.exp(),
        })
    }
}

/// Transform taking `log T` to the regressed ordinate `ln(C) + u ln(1/r)`.
fn ordinate(law: FitLaw, log_t: f64) -> Option<f64> {
    let y = match law {
        FitLaw::ExpLaw => (log_t > 0.0).then(|| log_t.ln())?,
        FitLaw::DoubleExpLaw => (log_t > 1.0).then(|| log_t.ln().ln())?,
    };
    y.is_finite().then_some(y)
}

/// Least squares on uncensored points of `y = ln C + u ln(1/r)`.
pub fn fit_scaling(points: &[FitPoint], law: FitLaw) -> ScalingFit {
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| !p.censored)
        .filter_map(|p| Some(((1.0 / p.r).ln(), ordinate(law, p.log_t)?)))
        .collect();
    let censored_count = points.iter().filter(|p| p.censored).count();
    let mut fit = ScalingFit {
        law,
        fit_kind: FitKind::Insufficient,
        points: points.to_vec(),
        fitted_u: None,
        fitted_c: None,
        censored_count,
        used_points: used.len(),
        extrapolative: used.len() < 3,
        residual_mean: None,
        censored_consistent: None,
    };
    if used.len() < 2 {
        return fit;
    }
    let m = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / m;
    let my = used.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return fit;
    }
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let u = sxy / sxx;
    let ln_c = my - u * mx;
    fit.fit_kind = match law {
        FitLaw::ExpLaw => FitKind::ExpLaw,
        FitLaw::DoubleExpLaw => FitKind::DoubleExpLaw,
    };
    fit.fitted_u = Some(u);
    fit.fitted_c = Some(ln_c.exp());
    fit.residual_mean = Some(used.iter().map(|p| p.1 - (ln_c + u * p.0)).sum::<f64>() / m);
    fit.censored_consistent = Some(
        points
            .iter()
            .filter(|p| p.censored)
            .all(|p| fit.curve(p.r).is_some_and(|c| c >= p.log_t - 1e-12 * p.log_t.abs())),
    );
    fit
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: Option<String>,
    pub seed: u64,
    pub summaries: Vec<RadiusSummary>,
    pub exp_fit: ScalingFit,
    pub double_exp_fit: ScalingFit,
    #[serde(skip)]
    pub records: Vec<EscapeTimeRecord>,
}

impl SweepResult {
    pub fn from_records(name: Option<String>, seed: u64, r_grid: &[f64], records: Vec<EscapeTimeRecord>) -> Self {
        let summaries: Vec<RadiusSummary> = r_grid
            .iter()
            .map(|&r| {
                let group: Vec<EscapeTimeRecord> =
                    records.iter().filter(|x| x.r == r).cloned().collect();
                summarize(r, &group)
            })
            .collect();
        let points: Vec<FitPoint> = summaries
            .iter()
            .map(|s| FitPoint {
                r: s.r,
                log_t: s.median_t.ln(),
                censored: s.median_censored,
            })
            .collect();
        Self {
            name,
            seed,
            exp_fit: fit_scaling(&points, FitLaw::ExpLaw),
            double_exp_fit: fit_scaling(&points, FitLaw::DoubleExpLaw),
            summaries,
            records,
        }
    }

    /// Records as JSON lines in grid order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "r",
            "members",
            "censored",
            "median_t",
            "median_censored",
            "mean_t",
            "min_t",
            "dt",
            "max_energy_drift",
        ])?;
        for s in &self.summaries {
            w.write_record([
                s.r.to_string(),
                s.members.to_string(),
                s.censored.to_string(),
                s.median_t.to_string(),
                s.median_censored.to_string(),
                s.mean_t.to_string(),
                s.min_t.to_string(),
                s.dt.to_string(),
                s.max_energy_drift.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `records.jsonl`, `summary.csv`, `fit.json` and `plot.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join("records.jsonl"))?))?;
        self.write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        let fits = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("fit.json"), fits + "\n")?;
        emit_plot_data(Some(self), std::fs::File::create(dir.join("plot.csv"))?)?;
        Ok(())
    }
}

/// Runs the ensemble at every radius and fits both laws to the medians.
pub fn run_escape_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let h = cfg.hamiltonian()?;
    let i_star = cfg.i_star();
    let tasks: Vec<(f64, usize)> = cfg
        .r_grid
        .iter()
        .flat_map(|&r| (0..cfg.ensemble_size).map(move |i| (r, i)))
        .collect();
    let records: Vec<EscapeTimeRecord> = tasks
        .par_iter()
        .map(|&(r, i)| escape_time(&h, &i_star, r, &cfg.escape, member_seed(cfg.seed, i)))
        .collect::<std::result::Result<_, _>>()?;
    Ok(SweepResult::from_records(cfg.name.clone(), cfg.seed, &cfg.r_grid, records))
}

/// Records whose medians follow `T(r) = exp(exp(C r^{−u}))` exactly.
pub fn synthetic_records(r_grid: &[f64], c: f64, u: f64, members: usize) -> Vec<EscapeTimeRecord> {
    let mut out = Vec::new();
    for &r in r_grid {
        let t = (c * r.powf(-u)).exp().exp();
        for i in 0..members {
            out.push(EscapeTimeRecord {
                r,
                i_star: vec![0.0],
                initial: crate::dynamics::PhasePoint {
                    theta: vec![0.0],
                    actions: vec![r],
                },
                escape_time: Some(t),
                censored: false,
                escape_lower: Some(t),
                exit_norm: 2.0 * r,
                energy_drift: 0.0,
                steps: 0,
                dt: 1.0,
                budget_steps: u64::MAX,
                seed: i as u64,
                scheme: crate::dynamics::Scheme::Auto,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Plot data

pub const PLOT_CURVE_POINTS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub kind: String,
    pub r: f64,
    pub log_inv_r: f64,
    pub median_log_t: Option<f64>,
    pub censored: Option<bool>,
    pub fitted_log_t: Option<f64>,
}

/// Data rows for each radius, then the fitted curve on a log-spaced grid.
///
/// The curve uses the double-exponential fit when available and the
/// exponential fit otherwise. `None` gives a header-only file.
pub fn emit_plot_data<W: Write>(result: Option<&SweepResult>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["kind", "r", "log_inv_r", "median_log_t", "censored", "fitted_log_t"])?;
    if let Some(res) = result {
        let fit = [&res.double_exp_fit, &res.exp_fit]
            .into_iter()
            .find(|f| f.fitted_u.is_some());
        for s in &res.summaries {
            w.serialize(PlotRow {
                kind: "data".into(),
                r: s.r,
                log_inv_r: (1.0 / s.r).ln(),
                median_log_t: Some(s.median_t.ln()),
                censored: Some(s.median_censored),
                fitted_log_t: fit.and_then(|f| f.curve(s.r)),
            })?;
        }
        if let (Some(f), Some(first), Some(last)) = (fit, res.summaries.first(), res.summaries.last()) {
            let (a, b) = (first.r.max(last.r).ln(), first.r.min(last.r).ln());
            for i in 0..PLOT_CURVE_POINTS {
                let r = (a + (b - a) * i as f64 / (PLOT_CURVE_POINTS - 1) as f64).exp();
                w.serialize(PlotRow {
                    kind: "curve".into(),
                    r,
                    log_inv_r: (1.0 / r).ln(),
                    median_log_t: None,
                    censored: None,
                    fitted_log_t: f.curve(r),
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`emit_plot_data`].
pub fn read_plot_data<R: std::io::Read>(input: R) -> Result<Vec<PlotRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub message: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentPrediction {
    pub alpha: f64,
    pub tau: f64,
    /// Predicted double-exponential stability exponent `1/(α(1+τ))`.
    pub u: f64,
    pub kam_exponent_bound: f64,
    pub m0: u32,
    /// Exponents for steepness index `m₀ − 1` and `β = α`.
    pub nekhoroshev: NekhoroshevExponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub predicted_u: f64,
    pub fitted_u: Option<f64>,
    pub fit_kind: FitKind,
    pub extrapolative: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub name: Option<String>,
    pub stages: Vec<StageReport>,
    pub diophantine: Option<DiophantineReport>,
    /// Normal form without the generators and transformed series.
    pub normal_form: Option<BTreeMap<String, serde_json::Value>>,
    pub steepness: Option<SteepnessVerdict>,
    pub steepness_candidates_tried: Option<usize>,
    pub exponents: Option<ExponentPrediction>,
    pub sweep: Option<SweepResult>,
    pub comparison: Option<Comparison>,
}

impl PipelineReport {
    pub fn failed_stage(&self) -> Option<&str> {
        self.stages
            .iter()
            .find(|s| s.status == StageStatus::Failed)
            .map(|s| s.stage.as_str())
    }
}

pub const PIPELINE_STAGES: [&str; 6] = [
    "diophantine",
    "birkhoff",
    "steepness",
    "exponents",
    "escape-sweep",
    "comparison",
];

fn normal_form_summary(nf: &NormalFormResult) -> Result<BTreeMap<String, serde_json::Value>> {
    let mut v = match serde_json::to_value(nf)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("normal form serializes to an object"),
    };
    v.remove("generators");
    v.remove("transformed");
    Ok(v.into_iter().collect())
}

/// Diophantine scan, normal form to order `m₀(n)`, stable steepness of
/// `H_{m₀}`, exponent prediction, escape sweep and comparison.
///
/// A failing stage is reported and every later stage is skipped.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    let mut report = PipelineReport {
        name: cfg.name.clone(),
        stages: Vec::new(),
        diophantine: None,
        normal_form: None,
        steepness: None,
        steepness_candidates_tried: None,
        exponents: None,
        sweep: None,
        comparison: None,
    };
    let h = cfg.hamiltonian()?;
    let n = cfg.n();
    let omega = cfg.omega().to_vec();
    let tau = cfg.tau();
    let mut failed = false;
    let mut nf: Option<NormalFormResult> = None;

    for stage in PIPELINE_STAGES {
        if failed {
            report.stages.push(StageReport {
                stage: stage.into(),
                status: StageStatus::Skipped,
                message: None,
                seconds: 0.0,
            });
            continue;
        }
        let start = std::time::Instant::now();
        let outcome: std::result::Result<Option<String>, String> = match stage {
            "diophantine" => match gamma_estimate(&omega, tau, default_scan_depth(n)) {
                Ok(r) => {
                    let msg = format!("gamma_est = {:e}, argmin k = {:?}", r.gamma_est, r.argmin_k);
                    report.diophantine = Some(r);
                    Ok(Some(msg))
                }
                Err(e) => Err(e.to_string()),
            },
            "birkhoff" => {
                let order = m0(n).map_err(|e| e.to_string());
                match order.and_then(|m| {
                    let bnf_cfg = BnfConfig {
                        tau: cfg.bnf.tau.or(Some(tau)),
                        ..cfg.bnf.clone()
                    };
                    bnf(&h, &omega, m, &bnf_cfg).map_err(|e| match e {
                        BirkhoffError::SmallDivisor { k, divisor, floor } => format!(
                            "small divisor at k = {k:?}: |k·ω| = {divisor:e} below floor {floor:e}"
                        ),
                        other => other.to_string(),
                    })
                }) {
                    Ok(r) => {
                        let msg = format!("order {} residual {:e}", r.order_m, r.residual);
                        report.normal_form = Some(normal_form_summary(&r)?);
                        nf = Some(r);
                        Ok(Some(msg))
                    }
                    Err(e) => Err(e),
                }
            }
            "steepness" => {
                let h_m = &nf.as_ref().expect("birkhoff stage ran").h_m;
                let sampling = SamplingConfig {
                    seed: cfg.seed,
                    ..cfg.steepness.clone()
                };
                match auto_tune(h_m, &sampling) {
                    Ok(t) => {
                        let accepted = t.verdict.accepted;
                        let msg = match &t.verdict.witness {
                            Some(w) if !accepted => format!("refuted: {}", w.reason),
                            _ => "no counterexample found".into(),
                        };
                        report.steepness_candidates_tried = Some(t.candidates_tried);
                        report.steepness = Some(t.verdict);
                        if accepted {
                            Ok(Some(msg))
                        } else {
                            Err(msg)
                        }
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            "exponents" => {
                let pred = (|| -> std::result::Result<ExponentPrediction, String> {
                    let m = m0(n).map_err(|e| e.to_string())?;
                    Ok(ExponentPrediction {
                        alpha: cfg.alpha,
                        tau,
                        u: double_exp_exponent(cfg.alpha, tau).map_err(|e| e.to_string())?,
                        kam_exponent_bound: kam_exponent_bound(cfg.alpha, n)
                            .map_err(|e| e.to_string())?,
                        m0: m,
                        nekhoroshev: nekhoroshev_exponents(n, (m - 1) as f64, cfg.alpha)
                            .map_err(|e| e.to_string())?,
                    })
                })();
                pred.map(|p| {
                    let msg = format!("predicted u = {}", p.u);
                    report.exponents = Some(p);
                    Some(msg)
                })
            }
            "escape-sweep" => match run_escape_sweep(cfg) {
                Ok(s) => {
                    let msg = format!(
                        "{} radii, {} censored medians",
                        s.summaries.len(),
                        s.summaries.iter().filter(|x| x.median_censored).count()
                    );
                    report.sweep = Some(s);
                    Ok(Some(msg))
                }
                Err(e) => Err(e.to_string()),
            },
            _ => {
                let pred = report.exponents.as_ref().expect("exponents stage ran");
                let fit = &report.sweep.as_ref().expect("sweep stage ran").double_exp_fit;
                let note = match fit.fit_kind {
                    FitKind::Insufficient => {
                        "fewer than two uncensored medians; no exponent fitted".to_string()
                    }
                    _ if fit.extrapolative => {
                        "fewer than three uncensored medians; fitted exponent is extrapolative"
                            .to_string()
                    }
                    _ => "fitted on uncensored medians at desk-scale budgets".to_string(),
                };
                report.comparison = Some(Comparison {
                    predicted_u: pred.u,
                    fitted_u: fit.fitted_u,
                    fit_kind: fit.fit_kind,
                    extrapolative: fit.extrapolative,
                    note,
                });
                Ok(None)
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let (status, message) = match outcome {
            Ok(m) => (StageStatus::Ok, m),
            Err(m) => {
                failed = true;
                (StageStatus::Failed, Some(m))
            }
        };
        report.stages.push(StageReport {
            stage: stage.into(),
            status,
            message,
            seconds,
        });
    }
    Ok(report)
}
