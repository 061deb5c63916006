//! Command-line front end for the stability laboratory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tori_core::birkhoff::bnf;
use tori_core::diophantine::{default_scan_depth, gamma_estimate};
use tori_core::lab::{
    emit_plot_data, preset_names, run_escape_sweep, run_pipeline, ExperimentConfig, LabError,
    SweepResult,
};
use tori_core::steepness::{
    auto_tune, double_exp_exponent, genericity_scan, kam_exponent_bound, kolmogorov_check, m0,
    nekhoroshev_exponents, stably_steep_check, SamplingConfig,
};
use tori_core::ActionPolynomial;

#[derive(Parser)]
#[command(name = "tori-lab", version, about = "Effective stability near Diophantine tori")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset, used when no config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (1 gives single-threaded runs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Exit with status 4 when a check is refuted.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Diophantine constant estimate for ω.
    Dio {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Option<Vec<f64>>,
        #[arg(long)]
        tau: Option<f64>,
        /// Scan depth |k|₁ ≤ K.
        #[arg(long = "k-max")]
        k_max: Option<u32>,
    },
    /// Birkhoff normal form of the configured Hamiltonian.
    Bnf {
        /// Normal-form order (defaults to m₀(n)).
        #[arg(long)]
        order: Option<u32>,
    },
    /// Stable steepness of an action polynomial.
    SteepCheck {
        #[command(flatten)]
        poly: PolyArg,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Hessian determinant test on a grid of points.
    Kolmogorov {
        #[command(flatten)]
        poly: PolyArg,
        #[arg(long, default_value_t = 1e-8)]
        det_floor: f64,
        /// Grid points per axis on [-radius, radius]^n.
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
    },
    /// Exponent formulas.
    Exponents {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        tau: Option<f64>,
        /// Steepness index (defaults to m₀(n) − 1).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
    },
    /// Acceptance fraction of random perturbations of a base polynomial.
    GenericScan {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m: u32,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long = "box", default_value_t = 1.0)]
        coeff_box: f64,
        /// Base polynomial (JSON or @file); zero by default.
        #[arg(long)]
        base: Option<String>,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Ensemble escape times over the radius grid.
    EscapeSweep,
    /// Full chain from Diophantine scan to exponent comparison.
    Pipeline,
    /// Plot-ready CSV from a sweep's fit.json.
    PlotData {
        /// fit.json written by escape-sweep (or its directory).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// List built-in presets.
    Presets,
}

#[derive(Args)]
struct PolyArg {
    /// Polynomial as JSON `{"n":..,"m":..,"terms":[{"l":[..],"re":..}]}` or @file.
    #[arg(long)]
    polynomial: Option<String>,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long)]
    subspaces: Option<usize>,
    #[arg(long)]
    perturbations: Option<usize>,
}

enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Config(_) | LabError::UnknownPreset(_) => Failure::Config(e.into()),
            other => Failure::Numerical(other.into()),
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn num_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Numerical(e.into())
}

struct Outcome {
    value: Value,
    text: String,
    refuted: bool,
}

impl Outcome {
    fn new(value: Value, text: String) -> Self {
        Self {
            value,
            text,
            refuted: false,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(p), _) => ExperimentConfig::from_path(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(config_err)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(config_err(anyhow::anyhow!(
                "this command needs --config PATH or --preset NAME"
            )))
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_polynomial(arg: &str) -> Result<ActionPolynomial, Failure> {
    let text = match arg.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {path}"))
            .map_err(config_err)?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text)
        .context("parsing polynomial")
        .map_err(config_err)
}

/// Polynomial from `--polynomial`, else `H_{m₀}` of the configured Hamiltonian.
fn polynomial_for(cli: &Cli, poly: &PolyArg) -> Result<ActionPolynomial, Failure> {
    if let Some(p) = &poly.polynomial {
        return parse_polynomial(p);
    }
    let cfg = load_config(cli)?;
    let h = cfg.hamiltonian()?;
    let order = m0(cfg.n()).map_err(num_err)?;
    let nf = bnf(&h, cfg.omega(), order, &cfg.bnf).map_err(num_err)?;
    Ok(nf.h_m)
}

fn sampling_for(cli: &Cli, args: &SamplingArgs) -> SamplingConfig {
    let mut s = cli
        .config
        .as_ref()
        .and_then(|p| ExperimentConfig::from_path(p).ok())
        .map(|c| c.steepness)
        .unwrap_or_default();
    if let Some(v) = args.subspaces {
        s.subspaces_per_dim = v;
    }
    if let Some(v) = args.perturbations {
        s.perturbations = v;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    s
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(num_err)
}

fn grid_points(n: usize, per_axis: usize, radius: f64) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(1);
    let coord = |i: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64
        }
    };
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                (0..per_axis).map(move |i| {
                    let mut q = p.clone();
                    q.push(coord(i));
                    q
                })
            })
            .collect();
    }
    out
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(num_err)?;
    let text = serde_json::to_string_pretty(value).map_err(num_err)?;
    std::fs::write(dir.join(name), text + "\n").map_err(num_err)
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::Presets => {
            let names = preset_names();
            Ok(Outcome::new(json!(names), names.join("\n")))
        }
        Command::Dio { omega, tau, k_max } => {
            let (omega, tau_default) = match omega {
                Some(o) => (o.clone(), o.len().saturating_sub(1) as f64),
                None => {
                    let cfg = load_config(cli)?;
                    (cfg.omega().to_vec(), cfg.tau())
                }
            };
            let tau = tau.unwrap_or(tau_default);
            let k = k_max.unwrap_or_else(|| default_scan_depth(omega.len()));
            let r = gamma_estimate(&omega, tau, k).map_err(config_err)?;
            let text = format!(
                "gamma_est = {}  argmin k = {:?}  raw_min = {:e}  (tau = {}, K = {}, {} vectors)",
                r.gamma_est, r.argmin_k, r.raw_min, r.tau, r.k, r.scanned
            );
            Ok(Outcome::new(to_value(&r)?, text))
        }
        Command::Bnf { order } => {
            let cfg = load_config(cli)?;
            let h = cfg.hamiltonian()?;
            let m = match order {
                Some(m) => *m,
                None => m0(cfg.n()).map_err(num_err)?,
            };
            let nf = bnf(&h, cfg.omega(), m, &cfg.bnf).map_err(num_err)?;
            let text = format!(
                "order {}  residual {:e}  frequency {:?}  energy offset {:e}\nH_m terms: {}",
                nf.order_m,
                nf.residual,
                nf.frequency,
                nf.energy_offset,
                serde_json::to_string(&nf.h_m).map_err(num_err)?
            );
            Ok(Outcome::new(to_value(&nf)?, text))
        }
        Command::SteepCheck {
            poly,
            rho,
            c,
            delta,
            sampling,
        } => {
            let p = polynomial_for(cli, poly)?;
            let s = sampling_for(cli, sampling);
            let (verdict, tried) = match (rho, c, delta) {
                (Some(rho), Some(c), Some(delta)) => {
                    (stably_steep_check(&p, *rho, *c, *delta, &s).map_err(num_err)?, None)
                }
                (None, None, None) => {
                    let t = auto_tune(&p, &s).map_err(num_err)?;
                    (t.verdict, Some(t.candidates_tried))
                }
                _ => {
                    return Err(config_err(anyhow::anyhow!(
                        "give all of --rho, --C, --delta or none (auto-tune)"
                    )))
                }
            };
            let text = match &verdict.witness {
                None => format!(
                    "accepted: no counterexample in {} subspace/perturbation pairs",
                    verdict.samples.pairs_evaluated
                ),
                Some(w) => format!(
                    "refuted: {} (subspace {:?}, xi = {:?})",
                    w.reason, w.basis, w.xi
                ),
            };
            let mut value = to_value(&verdict)?;
            if let Some(t) = tried {
                value["candidates_tried"] = json!(t);
            }
            Ok(Outcome {
                refuted: !verdict.accepted,
                value,
                text,
            })
        }
        Command::Kolmogorov {
            poly,
            det_floor,
            grid,
            radius,
        } => {
            let p = polynomial_for(cli, poly)?;
            let points = grid_points(p.n(), *grid, *radius);
            let v = kolmogorov_check(&p, &points, *det_floor).map_err(num_err)?;
            let text = format!(
                "{}: {:?}",
                if v.accepted { "accepted" } else { "refuted" },
                v.constants
            );
            Ok(Outcome {
                refuted: !v.accepted,
                value: to_value(&v)?,
                text,
            })
        }
        Command::Exponents {
            n,
            alpha,
            tau,
            p,
            beta,
        } => {
            let tau = tau.unwrap_or(n.saturating_sub(1) as f64);
            let m = m0(*n).map_err(config_err)?;
            let p = p.unwrap_or((m - 1) as f64);
            let nek = nekhoroshev_exponents(*n, p, *beta).map_err(config_err)?;
            let value = json!({
                "n": n,
                "m0": m,
                "double_exp_exponent": double_exp_exponent(*alpha, tau).map_err(config_err)?,
                "kam_exponent_bound": kam_exponent_bound(*alpha, *n).map_err(config_err)?,
                "nekhoroshev": nek,
            });
            let text = format!(
                "m0 = {m}\nu = 1/(alpha(1+tau)) = {}\nKAM exponent bound = {}\na = {}  radius exponent = {}  time exponent = {}",
                value["double_exp_exponent"], value["kam_exponent_bound"], nek.a, nek.radius_exponent, nek.time_exponent
            );
            Ok(Outcome::new(value, text))
        }
        Command::GenericScan {
            n,
            m,
            trials,
            coeff_box,
            base,
            sampling,
        } => {
            let base = base.as_deref().map(parse_polynomial).transpose()?;
            let s = sampling_for(cli, sampling);
            let r = genericity_scan(base.as_ref(), *n, *m, *trials, *coeff_box, &s)
                .map_err(config_err)?;
            let text = format!(
                "accepted {}/{} = {:.3}\nnote: {}",
                r.accepted, r.trials, r.fraction, r.caveat
            );
            Ok(Outcome::new(to_value(&r)?, text))
        }
        Command::EscapeSweep => {
            let cfg = load_config(cli)?;
            let res = run_escape_sweep(&cfg)?;
            if let Some(dir) = cli.out.clone().or(cfg.output.dir.clone().map(PathBuf::from)) {
                res.write_dir(&dir)?;
            }
            let mut text = String::from("r\tmedian T\tcensored\tmembers\n");
            for s in &res.summaries {
                text.push_str(&format!(
                    "{}\t{}{}\t{}\t{}\n",
                    s.r,
                    if s.median_censored { ">=" } else { "" },
                    s.median_t,
                    s.censored,
                    s.members
                ));
            }
            text.push_str(&format!(
                "double-exp fit: {:?} u = {:?}",
                res.double_exp_fit.fit_kind, res.double_exp_fit.fitted_u
            ));
            Ok(Outcome::new(to_value(&res)?, text))
        }
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            let rep = run_pipeline(&cfg)?;
            let value = to_value(&rep)?;
            if let Some(dir) = cli.out.clone().or(cfg.output.dir.clone().map(PathBuf::from)) {
                write_json(&dir, "pipeline.json", &value)?;
                if let Some(s) = &rep.sweep {
                    s.write_dir(&dir)?;
                }
            }
            let mut text = String::new();
            for s in &rep.stages {
                text.push_str(&format!(
                    "{:<13} {:?}  {}\n",
                    s.stage,
                    s.status,
                    s.message.as_deref().unwrap_or("")
                ));
            }
            if let Some(c) = &rep.comparison {
                text.push_str(&format!(
                    "predicted u = {}  fitted u = {:?}  ({})",
                    c.predicted_u, c.fitted_u, c.note
                ));
            }
            Ok(Outcome {
                refuted: rep.failed_stage().is_some(),
                value,
                text,
            })
        }
        Command::PlotData { input } => {
            let path = match input {
                Some(p) if p.is_dir() => p.join("fit.json"),
                Some(p) => p.clone(),
                None => cli
                    .out
                    .as_ref()
                    .map(|d| d.join("fit.json"))
                    .ok_or_else(|| config_err(anyhow::anyhow!("give --input or --out")))?,
            };
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(config_err)?;
            let res: SweepResult = serde_json::from_str(&text)
                .context("parsing fit.json")
                .map_err(config_err)?;
            let mut buf = Vec::new();
            emit_plot_data(Some(&res), &mut buf)?;
            let csv = String::from_utf8(buf).map_err(num_err)?;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir).map_err(num_err)?;
                std::fs::write(dir.join("plot.csv"), &csv).map_err(num_err)?;
            }
            Ok(Outcome::new(json!({ "csv": csv }), csv.trim_end().to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(out) => {
            let line = if cli.json {
                out.value.to_string()
            } else {
                out.text.clone()
            };
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{line}");
            if let (Some(dir), Command::Dio { .. } | Command::Bnf { .. } | Command::SteepCheck { .. }
                | Command::Kolmogorov { .. } | Command::Exponents { .. } | Command::GenericScan { .. }) =
                (&cli.out, &cli.command)
            {
                if let Err(Failure::Numerical(e) | Failure::Config(e)) =
                    write_json(dir, "result.json", &out.value)
                {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(3);
                }
            }
            if cli.strict && out.refuted {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
