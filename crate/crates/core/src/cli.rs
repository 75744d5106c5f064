//! The `mdi` command-line front end.
//!
//! Every subcommand resolves its parameters from an optional JSON config file
//! (`--config`) overlaid with command-line flags (flags win), runs, and emits
//! JSON or CSV that embeds the resolved configuration and the version string.
//! Exit codes: 0 on success, 2 on configuration or input errors, 3 when a
//! solver did not converge (outputs are still written, marked
//! `converged = false`).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::datasets::{
    biased_subsample, load_heart_csv, synth_test, synth_train, write_samples_csv,
};
use crate::distributions::{empirical_from_samples, DiscreteDistribution, FeatureMap, MomentSet};
use crate::dro::{
    dro_train, worst_case_risk, DroConfig, LossModel, ParamBox, ScenarioSet,
};
use crate::error::{MdiError, Result};
use crate::experiments::{self, ExperimentReport};
use crate::format::num;
use crate::guarantees::{finite_sample_bound, hoeffding_ips_bound, ope_bound, radius_for_confidence};
use crate::iprojection::{solve_with, IProjectionProblem, SolverOptions};
use crate::mdp::{
    capped_ips_estimate, inventory_instance, ips_estimate, mdi_ope_estimate, occupation_measure,
    random_policy_with, sample_from_measure, InventoryParams, OpeConfig, StationaryPolicy,
};

/// Version string embedded in every output.
pub const VERSION: &str = concat!("mdi ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "mdi", version, about = "MDI distributionally robust optimization toolkit")]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with parameters for the subcommand (flags override it).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (directory for `experiment`); stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// I-projection of an empirical distribution onto a moment set.
    Iproject(DataArgs),
    /// Minimize the worst-case risk over θ.
    DroTrain(DroArgs),
    /// Worst-case risk of a fixed θ.
    DroEval(DroArgs),
    /// Off-policy evaluation on the inventory MDP.
    Ope(OpeArgs),
    /// Finite-sample and concentration bounds.
    Bound(BoundArgs),
    /// Write a synthetic or subsampled dataset as CSV.
    GenData(GenDataArgs),
    /// Run a seeded experiment sweep.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// CSV of sample points (header row; one numeric column per coordinate).
    #[arg(long)]
    pub samples: Option<String>,
    /// Lower corner of the moment box (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    /// Upper corner of the moment box (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
    /// I-projection accuracy ε.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DroArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Relative-entropy radius r.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Loss: logistic, linear or newsvendor.
    #[arg(long)]
    pub loss: Option<String>,
    /// Bounds `lo,hi` applied to every coordinate of θ.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta_box: Option<Vec<f64>>,
    /// θ for `dro-eval` (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OpeArgs {
    /// Number of behavioral samples.
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Cap β of the capped IPS estimator.
    #[arg(long)]
    pub cap: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BoundArgs {
    /// finite-sample, ope, hoeffding or radius.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long = "N")]
    pub n: Option<u64>,
    /// Support cardinality |Ξ|.
    #[arg(long)]
    pub card: Option<u64>,
    #[arg(long = "nS")]
    pub n_states: Option<u64>,
    #[arg(long = "nA")]
    pub n_actions: Option<u64>,
    /// Deviation ε of the Hoeffding bound.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Range b of the Hoeffding bound.
    #[arg(long)]
    pub b: Option<f64>,
    /// Target probability for `radius`.
    #[arg(long)]
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenDataArgs {
    /// covshift-train, covshift-test or heart-biased.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Heart-disease CSV for `heart-biased`.
    #[arg(long)]
    pub data: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// covshift, heart, ope-inventory, consistency or conditional-limit.
    pub name: String,
    /// Trials (replications) per sample size.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Ambiguity radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Heart-disease CSV for the `heart` experiment.
    #[arg(long)]
    pub data: Option<String>,
}

// ---------------------------------------------------------------------------
// Resolved configurations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IprojectConfig {
    pub samples: Option<String>,
    /// Explicit distribution, used when no sample file is given.
    pub distribution: Option<DiscreteDistribution>,
    pub features: FeatureMap,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub set: Option<MomentSet>,
    pub eps: f64,
    pub solver: SolverOptions,
}

impl Default for IprojectConfig {
    fn default() -> Self {
        Self {
            samples: None,
            distribution: None,
            features: FeatureMap::Identity,
            lower: None,
            upper: None,
            set: None,
            eps: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroRunConfig {
    pub samples: Option<String>,
    pub distribution: Option<DiscreteDistribution>,
    pub features: FeatureMap,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub set: Option<MomentSet>,
    /// When set, the nominal is the I-projection of the data at this accuracy.
    pub eps: Option<f64>,
    pub radius: f64,
    pub loss: String,
    pub theta_box: Vec<f64>,
    pub unit_cost: f64,
    pub underage_cost: f64,
    pub theta: Option<Vec<f64>>,
    /// Extra scenario points beyond the data support.
    pub extra_scenarios: Vec<Vec<f64>>,
    pub solver: SolverOptions,
    pub dro: DroConfig,
}

impl Default for DroRunConfig {
    fn default() -> Self {
        Self {
            samples: None,
            distribution: None,
            features: FeatureMap::Identity,
            lower: None,
            upper: None,
            set: None,
            eps: None,
            radius: 0.1,
            loss: "logistic".into(),
            theta_box: vec![-10.0, 10.0],
            unit_cost: 0.5,
            underage_cost: 1.0,
            theta: None,
            extra_scenarios: Vec::new(),
            solver: SolverOptions::default(),
            dro: DroConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeRunConfig {
    pub inventory: InventoryParams,
    pub n: usize,
    pub radius: f64,
    pub cap: f64,
    /// Policies as `π[s][a]`; drawn uniformly at random when absent.
    pub target_policy: Option<Vec<Vec<f64>>>,
    pub behavior_policy: Option<Vec<Vec<f64>>>,
    pub ope: OpeConfig,
}

impl Default for OpeRunConfig {
    fn default() -> Self {
        Self {
            inventory: InventoryParams::default(),
            n: 500,
            radius: 0.1,
            cap: 4.0,
            target_policy: None,
            behavior_policy: None,
            ope: OpeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub kind: String,
    pub r: Option<f64>,
    #[serde(rename = "N")]
    pub n: Option<u64>,
    pub card: Option<u64>,
    #[serde(rename = "nS")]
    pub n_states: Option<u64>,
    #[serde(rename = "nA")]
    pub n_actions: Option<u64>,
    pub eps: Option<f64>,
    pub b: Option<f64>,
    pub target: Option<f64>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            kind: "finite-sample".into(),
            r: None,
            n: None,
            card: None,
            n_states: None,
            n_actions: None,
            eps: None,
            b: None,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub kind: String,
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub data: Option<String>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            kind: "covshift-train".into(),
            m: 6,
            n: 100,
            data: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry points

/// Parses `args` (program name first) and runs; returns the exit code.
/// Usage errors print clap's message and return its exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

/// Runs a parsed command line, reporting errors on stderr.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(Outcome::Converged) => EXIT_OK,
        Ok(Outcome::NotConverged) => {
            eprintln!("mdi: solver did not converge; results marked converged=false");
            EXIT_NONCONVERGENCE
        }
        Err(e) => {
            eprintln!("mdi: {e}");
            exit_code(&e)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(err: &MdiError) -> i32 {
    match err {
        MdiError::NonConvergence(_)
        | MdiError::Divergence { .. }
        | MdiError::CertificateViolation { .. }
        | MdiError::NoAcceptance => EXIT_NONCONVERGENCE,
        _ => EXIT_CONFIG,
    }
}

enum Outcome {
    Converged,
    NotConverged,
}

impl From<bool> for Outcome {
    fn from(converged: bool) -> Self {
        if converged {
            Outcome::Converged
        } else {
            Outcome::NotConverged
        }
    }
}

/// Global settings resolved from flags and the config file.
struct Globals {
    seed: u64,
    threads: Option<usize>,
    params: Map<String, Value>,
}

fn load_globals(cli: &Cli) -> Result<Globals> {
    let mut params = match &cli.config {
        None => Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                MdiError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            match serde_json::from_str::<Value>(&text)
                .map_err(|e| MdiError::Config(format!("config {}: {e}", path.display())))?
            {
                Value::Object(map) => map,
                _ => return Err(MdiError::Config("config file must hold a JSON object".into())),
            }
        }
    };
    let file_seed = params.remove("seed");
    let file_threads = params.remove("threads");
    let seed = match (cli.seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .as_u64()
            .ok_or_else(|| MdiError::Config("`seed` must be a nonnegative integer".into()))?,
        (None, None) => DEFAULT_SEED,
    };
    let threads = match (cli.threads, file_threads) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(
            v.as_u64()
                .ok_or_else(|| MdiError::Config("`threads` must be a positive integer".into()))?
                as usize,
        ),
        (None, None) => None,
    };
    if threads == Some(0) {
        return Err(MdiError::Config("--threads must be at least 1".into()));
    }
    Ok(Globals {
        seed,
        threads,
        params,
    })
}

/// Overlays a flag value on the parameter map.
fn set<T: Serialize>(params: &mut Map<String, Value>, key: &str, value: &Option<T>) -> Result<()> {
    if let Some(v) = value {
        params.insert(key.into(), serde_json::to_value(v)?);
    }
    Ok(())
}

fn resolve<T: DeserializeOwned>(params: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(params))
        .map_err(|e| MdiError::Config(format!("invalid parameters: {e}")))
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let globals = load_globals(cli)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = globals.threads {
            b = b.num_threads(t);
        }
        b.build()
            .map_err(|e| MdiError::Config(format!("thread pool: {e}")))?
    };
    pool.install(|| dispatch(cli, globals))
}

fn dispatch(cli: &Cli, g: Globals) -> Result<Outcome> {
    let Globals { seed, mut params, .. } = g;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Iproject(a) => {
            overlay_data(&mut params, a)?;
            let cfg: IprojectConfig = resolve(params)?;
            cmd_iproject(&cfg, seed, out)
        }
        Command::DroTrain(a) | Command::DroEval(a) => {
            overlay_data(&mut params, &a.data)?;
            set(&mut params, "radius", &a.radius)?;
            set(&mut params, "loss", &a.loss)?;
            set(&mut params, "theta_box", &a.theta_box)?;
            set(&mut params, "theta", &a.theta)?;
            let mut cfg: DroRunConfig = resolve(params)?;
            cfg.dro.radius = cfg.radius;
            let train = matches!(cli.command, Command::DroTrain(_));
            cmd_dro(&cfg, train, seed, out)
        }
        Command::Ope(a) => {
            set(&mut params, "n", &a.n)?;
            set(&mut params, "radius", &a.radius)?;
            set(&mut params, "cap", &a.cap)?;
            let mut cfg: OpeRunConfig = resolve(params)?;
            cfg.ope.radius = cfg.radius;
            cmd_ope(&cfg, seed, out)
        }
        Command::Bound(a) => {
            set(&mut params, "kind", &a.kind)?;
            set(&mut params, "r", &a.r)?;
            set(&mut params, "N", &a.n)?;
            set(&mut params, "card", &a.card)?;
            set(&mut params, "nS", &a.n_states)?;
            set(&mut params, "nA", &a.n_actions)?;
            set(&mut params, "eps", &a.eps)?;
            set(&mut params, "b", &a.b)?;
            set(&mut params, "target", &a.target)?;
            let cfg: BoundConfig = resolve(params)?;
            cmd_bound(&cfg, seed, out)
        }
        Command::GenData(a) => {
            set(&mut params, "kind", &a.kind)?;
            set(&mut params, "m", &a.m)?;
            set(&mut params, "N", &a.n)?;
            set(&mut params, "data", &a.data)?;
            let cfg: GenDataConfig = resolve(params)?;
            cmd_gen_data(&cfg, seed, out)
        }
        Command::Experiment(a) => {
            set(&mut params, "trials", &a.trials)?;
            set(&mut params, "n_grid", &a.n_grid)?;
            set(&mut params, "radius", &a.radius)?;
            set(&mut params, "data", &a.data)?;
            cmd_experiment(&a.name, params, seed, out)
        }
    }
}

fn overlay_data(params: &mut Map<String, Value>, a: &DataArgs) -> Result<()> {
    set(params, "samples", &a.samples)?;
    set(params, "lower", &a.lower)?;
    set(params, "upper", &a.upper)?;
    set(params, "eps", &a.eps)
}

// ---------------------------------------------------------------------------
// Output helpers

/// JSON number rounded to 12 significant digits; non-finite values become
/// the strings `inf`, `-inf`, `nan`.
pub fn number(x: f64) -> Value {
    let s = num(x);
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => json!(v),
        _ => Value::String(s),
    }
}

fn numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| number(x)).collect())
}

/// Rounds every floating-point number in a JSON tree to 12 significant digits.
fn round_numbers(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => number(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(xs) => Value::Array(xs.into_iter().map(round_numbers).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_numbers(v))).collect()),
        other => other,
    }
}

fn envelope(command: &str, seed: u64, config: &impl Serialize, result: Value) -> Result<Value> {
    Ok(json!({
        "version": VERSION,
        "command": command,
        "seed": seed,
        "config": round_numbers(serde_json::to_value(config)?),
        "result": result,
    }))
}

fn write_json(out: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            MdiError::Config(format!("cannot write {}: {e}", path.display()))
        })?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn csv_preamble(command: &str, seed: u64, config: &impl Serialize) -> Result<Vec<String>> {
    let config = round_numbers(serde_json::to_value(config)?);
    Ok(vec![
        VERSION.to_string(),
        format!("command: {command}"),
        format!("seed: {seed}"),
        format!("config: {}", serde_json::to_string(&config)?),
    ])
}

/// Reads a CSV of numeric rows (header required, `#` lines ignored).
pub fn read_points_csv(path: &str) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)
        .map_err(|e| MdiError::Config(format!("cannot open {path}: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        if parsed.iter().all(Option::is_some) {
            rows.push(parsed.into_iter().flatten().collect::<Vec<f64>>());
        } else if i > 0 || parsed.iter().any(Option::is_some) {
            // only an all-text first row is accepted, as a header
            let bad = rec.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or("");
            return Err(MdiError::Config(format!(
                "{path}: row {}: non-numeric field `{bad}`",
                i + 1
            )));
        }
    }
    if let Some(first) = rows.first() {
        if let Some(bad) = rows.iter().position(|r| r.len() != first.len()) {
            return Err(MdiError::Config(format!(
                "{path}: row {} has {} fields, expected {}",
                bad + 1,
                rows[bad].len(),
                first.len()
            )));
        }
    }
    if rows.is_empty() {
        return Err(MdiError::Config(format!("{path}: no data rows")));
    }
    Ok(rows)
}

/// The data distribution: empirical over the sample file, or the explicit one.
fn load_distribution(
    samples: &Option<String>,
    explicit: &Option<DiscreteDistribution>,
) -> Result<DiscreteDistribution> {
    match (samples, explicit) {
        (Some(path), _) => empirical_from_samples(&read_points_csv(path)?),
        (None, Some(d)) => Ok(d.clone()),
        (None, None) => Err(MdiError::Config(
            "no data: pass --samples <csv> or a `distribution` in the config".into(),
        )),
    }
}

fn load_set(
    lower: &Option<Vec<f64>>,
    upper: &Option<Vec<f64>>,
    set: &Option<MomentSet>,
) -> Result<MomentSet> {
    match (lower, upper, set) {
        (Some(lo), Some(hi), _) => MomentSet::new_box(lo.clone(), hi.clone())
            .map_err(|e| MdiError::Config(e.to_string())),
        (None, None, Some(s)) => Ok(s.clone()),
        (None, None, None) => Err(MdiError::Config(
            "no moment set: pass --lower/--upper or a `set` in the config".into(),
        )),
        _ => Err(MdiError::Config("--lower and --upper must be given together".into())),
    }
}

// ---------------------------------------------------------------------------
// Subcommands

pub fn cmd_iproject_value(cfg: &IprojectConfig) -> Result<(Value, bool)> {
    let base = load_distribution(&cfg.samples, &cfg.distribution)?;
    let set = load_set(&cfg.lower, &cfg.upper, &cfg.set)?;
    let problem = IProjectionProblem::new(base, cfg.features.clone(), set, cfg.eps);
    let sol = solve_with(&problem, &cfg.solver)?;
    let result = json!({
        "atoms": sol.projection.atoms().iter().map(|a| numbers(a)).collect::<Vec<_>>(),
        "weights": numbers(sol.projection.weights()),
        "dual": numbers(&sol.dual),
        "entropy": number(sol.entropy_value),
        "feasibility_gap": number(sol.feasibility_gap),
        "duality_gap": number(sol.duality_gap),
        "certified_optimality_bound": number(sol.certified_optimality_bound),
        "certified_feasibility_bound": number(sol.certified_feasibility_bound),
        "iterations": sol.iterations_run,
        "shortcut": sol.shortcut,
        "converged": sol.converged,
    });
    Ok((result, sol.converged))
}

fn cmd_iproject(cfg: &IprojectConfig, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let (result, converged) = cmd_iproject_value(cfg)?;
    write_json(out, &envelope("iproject", seed, cfg, result)?)?;
    Ok(converged.into())
}

fn build_loss(cfg: &DroRunConfig, atom_dim: usize) -> Result<LossModel> {
    let bounds = |n: usize| -> Result<ParamBox> {
        match cfg.theta_box.as_slice() {
            [lo, hi] => ParamBox::new(vec![*lo; n], vec![*hi; n])
                .map_err(|e| MdiError::Config(format!("theta_box: {e}"))),
            _ => Err(MdiError::Config("theta_box must be `lo,hi`".into())),
        }
    };
    match cfg.loss.as_str() {
        "logistic" => {
            if atom_dim < 2 {
                return Err(MdiError::Config(
                    "logistic loss needs samples (x, y) with at least two columns".into(),
                ));
            }
            Ok(LossModel::Logistic {
                theta_box: bounds(atom_dim - 1)?,
            })
        }
        "linear" => Ok(LossModel::Linear),
        "newsvendor" => Ok(LossModel::Newsvendor {
            unit_cost: cfg.unit_cost,
            underage_cost: cfg.underage_cost,
            theta_box: bounds(1)?,
        }),
        other => Err(MdiError::Config(format!(
            "unknown loss `{other}` (expected logistic, linear or newsvendor)"
        ))),
    }
}

pub fn cmd_dro_value(cfg: &DroRunConfig, train: bool) -> Result<(Value, bool)> {
    let data = load_distribution(&cfg.samples, &cfg.distribution)?;
    let set = load_set(&cfg.lower, &cfg.upper, &cfg.set)?;
    let loss = build_loss(cfg, data.dim())?;
    let dro = DroConfig {
        radius: cfg.radius,
        ..cfg.dro.clone()
    };
    let (nominal, projection_converged) = match cfg.eps {
        Some(eps) => {
            let problem = IProjectionProblem::new(data.clone(), cfg.features.clone(), set.clone(), eps);
            let sol = solve_with(&problem, &cfg.solver)?;
            (sol.projection, sol.converged)
        }
        None => (data.clone(), true),
    };
    let scenarios = ScenarioSet::from_support(&data, &cfg.features)?
        .extended(&cfg.extra_scenarios, &cfg.features)?;
    let (theta, value, alpha, z, converged) = if train {
        let sol = dro_train(&loss, &nominal, &set, &scenarios, &dro)?;
        (sol.theta, sol.value, sol.alpha, sol.z, sol.converged)
    } else {
        let theta = match (&cfg.theta, loss.param_dim()) {
            (Some(t), _) => t.clone(),
            (None, 0) => Vec::new(),
            (None, _) => return Err(MdiError::Config("dro-eval needs --theta".into())),
        };
        let wc = worst_case_risk(&theta, &nominal, &set, &scenarios, &dro, &loss)?;
        (theta, wc.value, wc.alpha, wc.z, wc.converged)
    };
    let converged = converged && projection_converged;
    let result = json!({
        "theta": numbers(&theta),
        "J": number(value),
        "alpha": number(alpha),
        "z": numbers(&z),
        "converged": converged,
    });
    Ok((result, converged))
}

fn cmd_dro(cfg: &DroRunConfig, train: bool, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let (result, converged) = cmd_dro_value(cfg, train)?;
    let name = if train { "dro-train" } else { "dro-eval" };
    write_json(out, &envelope(name, seed, cfg, result)?)?;
    Ok(converged.into())
}

pub fn cmd_ope_value(cfg: &OpeRunConfig, seed: u64) -> Result<(Value, bool)> {
    let mdp = inventory_instance(&cfg.inventory).map_err(|e| MdiError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut policy = |given: &Option<Vec<Vec<f64>>>| -> Result<StationaryPolicy> {
        match given {
            Some(p) => StationaryPolicy::new(p.clone()).map_err(|e| MdiError::Config(e.to_string())),
            None => random_policy_with(ns, na, &mut rng),
        }
    };
    let target_policy = policy(&cfg.target_policy)?;
    let behavior_policy = policy(&cfg.behavior_policy)?;
    let target = occupation_measure(&mdp, &target_policy)?;
    let behavior = occupation_measure(&mdp, &behavior_policy)?;
    let samples = sample_from_measure(&mdp, &behavior, cfg.n, &mut rng)?;
    let ope = OpeConfig {
        radius: cfg.radius,
        ..cfg.ope.clone()
    };
    let mdi = mdi_ope_estimate(&samples, &target, &behavior, &ope)?;
    let converged = mdi.worst_case.converged && mdi.projection.converged;
    let bound = ope_bound(cfg.radius, cfg.n as u64, ns as u64, na as u64)?;
    let table = |p: &StationaryPolicy| -> Value {
        Value::Array(p.table().iter().map(|r| numbers(r)).collect())
    };
    let result = json!({
        "truth": number(target.mean_cost()),
        "ips": number(ips_estimate(&samples, &target, &behavior)?),
        "ips_capped": number(capped_ips_estimate(&samples, &target, &behavior, cfg.cap)?),
        "mdi_dro": number(mdi.value),
        "kl_target": number(mdi.kl_target),
        "disappointment_bound": number(bound.probability_bound),
        "target_policy": table(&target_policy),
        "behavior_policy": table(&behavior_policy),
        "converged": converged,
    });
    Ok((result, converged))
}

fn cmd_ope(cfg: &OpeRunConfig, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let (result, converged) = cmd_ope_value(cfg, seed)?;
    write_json(out, &envelope("ope", seed, cfg, result)?)?;
    Ok(converged.into())
}

fn need<T: Copy>(v: Option<T>, name: &str, kind: &str) -> Result<T> {
    v.ok_or_else(|| MdiError::Config(format!("bound kind `{kind}` needs --{name}")))
}

pub fn cmd_bound_value(cfg: &BoundConfig) -> Result<Value> {
    let k = cfg.kind.as_str();
    let report = |b: crate::guarantees::BoundReport| {
        json!({
            "log_probability_bound": number(b.log_probability_bound),
            "probability_bound": number(b.probability_bound),
            "radius": number(b.radius),
            "N": b.sample_size,
            "cardinality": b.cardinality,
        })
    };
    let config_err = |e: MdiError| MdiError::Config(e.to_string());
    match k {
        "finite-sample" => finite_sample_bound(
            need(cfg.r, "r", k)?,
            need(cfg.n, "N", k)?,
            need(cfg.card, "card", k)?,
        )
        .map(report)
        .map_err(config_err),
        "ope" => ope_bound(
            need(cfg.r, "r", k)?,
            need(cfg.n, "N", k)?,
            need(cfg.n_states, "nS", k)?,
            need(cfg.n_actions, "nA", k)?,
        )
        .map(report)
        .map_err(config_err),
        "hoeffding" => hoeffding_ips_bound(
            need(cfg.eps, "eps", k)?,
            need(cfg.n, "N", k)?,
            need(cfg.b, "b", k)?,
        )
        .map(|p| json!({ "probability_bound": number(p) }))
        .map_err(config_err),
        "radius" => radius_for_confidence(
            need(cfg.n, "N", k)?,
            need(cfg.card, "card", k)?,
            need(cfg.target, "target", k)?,
        )
        .map(|r| json!({ "radius": number(r) }))
        .map_err(config_err),
        other => Err(MdiError::Config(format!(
            "unknown bound kind `{other}` (expected finite-sample, ope, hoeffding or radius)"
        ))),
    }
}

fn cmd_bound(cfg: &BoundConfig, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let result = cmd_bound_value(cfg)?;
    write_json(out, &envelope("bound", seed, cfg, result)?)?;
    Ok(Outcome::Converged)
}

fn cmd_gen_data(cfg: &GenDataConfig, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let samples = match cfg.kind.as_str() {
        "covshift-train" => synth_train(cfg.m, cfg.n, seed),
        "covshift-test" => synth_test(cfg.m, cfg.n, seed),
        "heart-biased" => {
            let path = cfg
                .data
                .as_deref()
                .ok_or_else(|| MdiError::Config("heart-biased needs --data <csv>".into()))?;
            biased_subsample(&load_heart_csv(path)?, cfg.n, seed)
        }
        other => {
            return Err(MdiError::Config(format!(
                "unknown dataset kind `{other}` (expected covshift-train, covshift-test or heart-biased)"
            )))
        }
    }
    .map_err(config_error)?;
    let mut buf = Vec::new();
    for line in csv_preamble("gen-data", seed, cfg)? {
        writeln!(buf, "# {line}")?;
    }
    write_samples_csv(&mut buf, &samples)?;
    match out {
        Some(path) => std::fs::write(path, buf)
            .map_err(|e| MdiError::Config(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(Outcome::Converged)
}

fn config_error(e: MdiError) -> MdiError {
    match e {
        MdiError::InvalidInput(m) => MdiError::Config(m),
        other => other,
    }
}

fn cmd_experiment(
    name: &str,
    params: Map<String, Value>,
    seed: u64,
    out: Option<&Path>,
) -> Result<Outcome> {
    fn strip(mut params: Map<String, Value>, keys: &[&str]) -> Map<String, Value> {
        for k in keys {
            params.remove(*k);
        }
        params
    }
    let (report, preamble) = match name {
        "covshift" => {
            let mut cfg: experiments::CovshiftConfig = resolve(strip(params, &["data"]))?;
            cfg.dro.radius = cfg.radius;
            let records = experiments::covshift(&cfg, seed).map_err(config_error)?;
            (experiments::covshift_report(&cfg, &records), csv_preamble(name, seed, &cfg)?)
        }
        "heart" => {
            let mut cfg: experiments::HeartConfig = resolve(params)?;
            cfg.dro.radius = cfg.radius;
            let records = experiments::heart(&cfg, seed).map_err(config_error)?;
            (experiments::heart_report(&cfg, &records), csv_preamble(name, seed, &cfg)?)
        }
        "ope-inventory" => {
            let mut cfg: experiments::OpeExperimentConfig = resolve(strip(params, &["data"]))?;
            cfg.ope.radius = cfg.radius;
            let records = experiments::ope_inventory(&cfg, seed).map_err(config_error)?;
            (experiments::ope_report(&cfg, &records), csv_preamble(name, seed, &cfg)?)
        }
        "consistency" => {
            let mut params = strip(params, &["data", "radius"]);
            if let Some(trials) = params.remove("trials") {
                params.insert("replications".into(), trials);
            }
            let cfg: experiments::ConsistencyConfig = resolve(params)?;
            let records = experiments::consistency(&cfg, seed).map_err(config_error)?;
            (experiments::consistency_report(&cfg, &records), csv_preamble(name, seed, &cfg)?)
        }
        "conditional-limit" => {
            let mut params = strip(params, &["data", "radius"]);
            if let Some(Value::Array(grid)) = params.remove("n_grid") {
                match grid.as_slice() {
                    [n] => {
                        params.insert("n".into(), n.clone());
                    }
                    _ => {
                        return Err(MdiError::Config(
                            "conditional-limit takes a single sample size".into(),
                        ))
                    }
                }
            }
            let cfg: experiments::ConditionalLimitConfig = resolve(params)?;
            let check = experiments::conditional_limit(&cfg, seed).map_err(config_error)?;
            (experiments::conditional_limit_report(&check), csv_preamble(name, seed, &cfg)?)
        }
        other => {
            return Err(MdiError::Config(format!(
                "unknown experiment `{other}` (expected covshift, heart, ope-inventory, consistency or conditional-limit)"
            )))
        }
    };
    write_report(&report, &preamble, out)?;
    Ok(Outcome::Converged)
}

/// Writes `<name>_trials.csv` and `<name>_summary.csv` into `out`, or the
/// summary alone to stdout.
fn write_report(report: &ExperimentReport, preamble: &[String], out: Option<&Path>) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| {
                MdiError::Config(format!("cannot create {}: {e}", dir.display()))
            })?;
            for (suffix, table) in [("trials", &report.trials), ("summary", &report.summary)] {
                let path = dir.join(format!("{}_{suffix}.csv", report.name));
                let file = std::fs::File::create(&path).map_err(|e| {
                    MdiError::Config(format!("cannot write {}: {e}", path.display()))
                })?;
                table.write_csv(std::io::BufWriter::new(file), preamble)?;
            }
        }
        None => report.summary.write_csv(std::io::stdout().lock(), preamble)?,
    }
    Ok(())
}
