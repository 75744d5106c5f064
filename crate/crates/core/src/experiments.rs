//! Seeded Monte Carlo sweeps: covariate-shift classification, biased-sample
//! classification on the heart-disease data, off-policy evaluation on the
//! inventory MDP, a shrinking-radius consistency sweep, and a rejection
//! sampling check of the conditional limit theorem.
//!
//! Every trial draws from its own ChaCha8 stream derived from the master seed
//! and the trial coordinates, so results do not depend on scheduling; trials
//! run in parallel (rayon) and are collected in index order. Solver failures
//! inside a trial are recorded in that trial's row instead of aborting.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    atoms, biased_subsample_with, covshift_density_ratio, covshift_moment_set, empirical_mean_box,
    load_heart_csv, synth_test_with, synth_train_with,
};
use crate::distributions::{empirical_from_samples, DiscreteDistribution, FeatureMap, MomentSet};
use crate::dro::{
    dro_train, minimize_risk, risk, worst_case_risk, DroConfig, LossModel, ParamBox, ScenarioSet,
};
use crate::error::{invalid, MdiError, Result};
use crate::format::num;
use crate::guarantees::ope_bound;
use crate::iprojection::{
    conditional_limit_check, solve_with, tilting_oracle, ConditionalLimitCheck,
    IProjectionProblem, SolverOptions,
};
use crate::mdp::{
    capped_ips_estimate, inventory_instance, ips_estimate, mdi_ope_estimate, occupation_measure,
    random_policy_with, sample_from_measure, InventoryParams, OpeConfig,
};

/// Generator for trial `index` at grid point `grid` of a sweep seeded with `seed`.
pub fn trial_rng(seed: u64, grid: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((grid as u64) << 32) | index as u64);
    rng
}

/// One method's outcome on one trial.
///
/// `value` is what the method reports (the certificate `J*_N` for MDI-DRO,
/// the in-sample risk for the baselines in classification, the point
/// estimate in off-policy evaluation); `reference` is the quantity it is
/// judged against (out-of-sample risk, or the true policy cost). The trial
/// is a disappointment when `reference > value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid: usize,
    pub trial: usize,
    pub method: String,
    pub value: f64,
    pub reference: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl TrialRecord {
    fn ok(grid: usize, trial: usize, method: &str, value: f64, reference: f64, converged: bool) -> Self {
        Self {
            grid,
            trial,
            method: method.into(),
            value,
            reference,
            converged,
            error: None,
        }
    }

    fn failed(grid: usize, trial: usize, method: &str, err: &MdiError) -> Self {
        Self {
            grid,
            trial,
            method: method.into(),
            value: f64::NAN,
            reference: f64::NAN,
            converged: false,
            error: Some(err.to_string()),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn disappointed(&self) -> bool {
        self.reference > self.value
    }
}

/// Per-method statistics at one grid point, over successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub grid: usize,
    pub method: String,
    pub mean_value: f64,
    pub mean_reference: f64,
    pub reference_quantiles: [f64; 3],
    pub value_quantiles: [f64; 3],
    pub mean_abs_error: f64,
    pub disappointment: f64,
    pub successes: usize,
    pub failures: usize,
}

impl MethodSummary {
    /// Fraction of successful trials with `reference ≤ value`.
    pub fn reliability(&self) -> f64 {
        1.0 - self.disappointment
    }
}

/// Quantile levels reported in summaries.
pub const QUANTILE_LEVELS: [f64; 3] = [0.05, 0.5, 0.95];

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn quantiles(mut xs: Vec<f64>) -> [f64; 3] {
    xs.sort_by(f64::total_cmp);
    QUANTILE_LEVELS.map(|q| quantile(&xs, q))
}

/// Groups records by (grid, method) in first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Vec<MethodSummary> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(g, m)| *g == r.grid && *m == r.method) {
            keys.push((r.grid, r.method.clone()));
        }
    }
    keys.into_iter()
        .map(|(grid, method)| {
            let group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.grid == grid && r.method == method)
                .collect();
            let ok: Vec<&&TrialRecord> = group.iter().filter(|r| r.succeeded()).collect();
            let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
            let refs: Vec<f64> = ok.iter().map(|r| r.reference).collect();
            let errs: Vec<f64> = ok.iter().map(|r| (r.value - r.reference).abs()).collect();
            let dis = ok.iter().filter(|r| r.disappointed()).count();
            MethodSummary {
                grid,
                method,
                mean_value: mean(&values),
                mean_reference: mean(&refs),
                reference_quantiles: quantiles(refs),
                value_quantiles: quantiles(values),
                mean_abs_error: mean(&errs),
                disappointment: if ok.is_empty() {
                    f64::NAN
                } else {
                    dis as f64 / ok.len() as f64
                },
                successes: ok.len(),
                failures: group.len() - ok.len(),
            }
        })
        .collect()
}

/// A rectangular table of already formatted cells.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Writes the table as CSV, preceded by `# `-prefixed preamble lines.
    pub fn write_csv(&self, out: impl std::io::Write, preamble: &[String]) -> Result<()> {
        let mut out = out;
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Tidy per-trial table plus a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub trials: Table,
    pub summary: Table,
}

fn records_table(grid_name: &str, grid: &[f64], records: &[TrialRecord]) -> Table {
    let mut t = Table::new(&[
        grid_name,
        "trial",
        "method",
        "value",
        "reference",
        "disappointed",
        "converged",
        "error",
    ]);
    for r in records {
        t.rows.push(vec![
            num(grid[r.grid]),
            r.trial.to_string(),
            r.method.clone(),
            num(r.value),
            num(r.reference),
            if r.succeeded() {
                (r.disappointed() as u8).to_string()
            } else {
                String::new()
            },
            (r.converged as u8).to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

/// Summary with one method per column and one statistic per row.
fn summary_table(grid_name: &str, grid: &[f64], summaries: &[MethodSummary]) -> Table {
    let mut methods: Vec<String> = Vec::new();
    for s in summaries {
        if !methods.contains(&s.method) {
            methods.push(s.method.clone());
        }
    }
    let mut columns = vec![grid_name.to_string(), "statistic".to_string()];
    columns.extend(methods.iter().cloned());
    let mut t = Table {
        columns,
        rows: Vec::new(),
    };
    type Stat = fn(&MethodSummary) -> f64;
    let stats: [(&str, Stat); 13] = [
        ("mean_value", |s| s.mean_value),
        ("q05_value", |s| s.value_quantiles[0]),
        ("q50_value", |s| s.value_quantiles[1]),
        ("q95_value", |s| s.value_quantiles[2]),
        ("mean_reference", |s| s.mean_reference),
        ("q05_reference", |s| s.reference_quantiles[0]),
        ("q50_reference", |s| s.reference_quantiles[1]),
        ("q95_reference", |s| s.reference_quantiles[2]),
        ("mean_abs_error", |s| s.mean_abs_error),
        ("disappointment", |s| s.disappointment),
        ("reliability", MethodSummary::reliability),
        ("successes", |s| s.successes as f64),
        ("failures", |s| s.failures as f64),
    ];
    for (g, &gv) in grid.iter().enumerate() {
        for (name, stat) in &stats {
            let mut row = vec![num(gv), name.to_string()];
            for m in &methods {
                row.push(
                    summaries
                        .iter()
                        .find(|s| s.grid == g && &s.method == m)
                        .map(|s| num(stat(s)))
                        .unwrap_or_default(),
                );
            }
            t.rows.push(row);
        }
    }
    t
}

fn check_trials(trials: usize, grid: &[usize]) -> Result<()> {
    if trials == 0 {
        return Err(MdiError::Config("trials must be at least 1".into()));
    }
    if grid.is_empty() || grid.contains(&0) {
        return Err(MdiError::Config("sample-size grid must be nonempty and positive".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Covariate shift

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovshiftConfig {
    /// Atom dimension `(x, y)`: `m − 1` covariates plus the label.
    pub m: usize,
    pub trials: usize,
    pub n_grid: Vec<usize>,
    pub radius: f64,
    pub test_size: usize,
    /// Half-width of the moment box around the test-distribution moments.
    pub slack: f64,
    /// I-projection accuracy.
    pub eps: f64,
    /// Logistic weights are confined to `[-theta_bound, theta_bound]`.
    pub theta_bound: f64,
    /// Monte Carlo draws for the label mean of the test distribution.
    pub mc_budget: usize,
    pub solver: SolverOptions,
    pub dro: DroConfig,
}

impl Default for CovshiftConfig {
    fn default() -> Self {
        Self {
            m: 6,
            trials: 100,
            n_grid: vec![30, 100, 300],
            radius: 1e-4,
            test_size: 20_000,
            slack: 0.02,
            eps: 1e-3,
            theta_bound: 5.0,
            mc_budget: 1_000_000,
            solver: SolverOptions::default(),
            dro: DroConfig::default(),
        }
    }
}

/// Stream reserved for the shared held-out test sample.
const TEST_STREAM: usize = u32::MAX as usize;

/// MDI-DRO, naive ERM and importance-weighted ERM on the synthetic
/// covariate-shift problem. References are risks on a shared held-out test
/// sample from the shifted distribution.
pub fn covshift(cfg: &CovshiftConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    check_trials(cfg.trials, &cfg.n_grid)?;
    let moments = covshift_moment_set(cfg.m, cfg.slack, cfg.mc_budget, seed)?;
    let test = synth_test_with(cfg.m, cfg.test_size, &mut trial_rng(seed, TEST_STREAM, 0))?;
    let test = empirical_from_samples(&atoms(&test))?;
    let loss = LossModel::Logistic {
        theta_box: ParamBox::symmetric(cfg.m - 1, cfg.theta_bound)?,
    };
    let dro = DroConfig {
        radius: cfg.radius,
        ..cfg.dro.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
        .collect();
    let nested: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let n = cfg.n_grid[g];
            let mut rng = trial_rng(seed, g, t);
            let train = match synth_train_with(cfg.m, n, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    return ["mdi_dro", "erm", "iwerm"]
                        .iter()
                        .map(|m| TrialRecord::failed(g, t, m, &e))
                        .collect()
                }
            };
            let samples = atoms(&train);
            let mut out = Vec::with_capacity(3);
            out.push(
                classify_mdi(&samples, &moments.set, &loss, &dro, cfg.eps, &cfg.solver)
                    .map(|(theta, value, conv)| {
                        TrialRecord::ok(g, t, "mdi_dro", value, risk(&theta, &test, &loss), conv)
                    })
                    .unwrap_or_else(|e| TrialRecord::failed(g, t, "mdi_dro", &e)),
            );
            let empirical = empirical_from_samples(&samples);
            out.push(
                empirical
                    .as_ref()
                    .map_err(|e| MdiError::InvalidInput(e.to_string()))
                    .and_then(|emp| {
                        let theta = minimize_risk(&loss, emp)?;
                        Ok(TrialRecord::ok(
                            g,
                            t,
                            "erm",
                            risk(&theta, emp, &loss),
                            risk(&theta, &test, &loss),
                            true,
                        ))
                    })
                    .unwrap_or_else(|e| TrialRecord::failed(g, t, "erm", &e)),
            );
            out.push(
                empirical
                    .and_then(|emp| {
                        let w: Vec<f64> = emp
                            .support()
                            .map(|(a, w)| w * covshift_density_ratio(&a[..a.len() - 1]))
                            .collect();
                        let weighted = emp.reweighted(w)?;
                        let theta = minimize_risk(&loss, &weighted)?;
                        Ok(TrialRecord::ok(
                            g,
                            t,
                            "iwerm",
                            risk(&theta, &weighted, &loss),
                            risk(&theta, &test, &loss),
                            true,
                        ))
                    })
                    .unwrap_or_else(|e| TrialRecord::failed(g, t, "iwerm", &e)),
            );
            out
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

/// I-projection of the sample onto `Π`, then robust training over the sample
/// support. Returns `(θ*, J*, converged)`.
fn classify_mdi(
    samples: &[Vec<f64>],
    set: &MomentSet,
    loss: &LossModel,
    dro: &DroConfig,
    eps: f64,
    solver: &SolverOptions,
) -> Result<(Vec<f64>, f64, bool)> {
    let emp = empirical_from_samples(samples)?;
    let problem = IProjectionProblem::new(emp.clone(), FeatureMap::Identity, set.clone(), eps);
    let proj = solve_with(&problem, solver)?;
    let scenarios = ScenarioSet::from_support(&emp, &FeatureMap::Identity)?;
    let sol = dro_train(loss, &proj.projection, set, &scenarios, dro)?;
    Ok((sol.theta, sol.value, sol.converged && proj.converged))
}

pub fn covshift_report(cfg: &CovshiftConfig, records: &[TrialRecord]) -> ExperimentReport {
    let grid: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    ExperimentReport {
        name: "covshift".into(),
        trials: records_table("n", &grid, records),
        summary: summary_table("n", &grid, &summarize(records)),
    }
}

// ---------------------------------------------------------------------------
// Heart disease with a biased training sample

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeartConfig {
    /// CSV file with columns `age`, `sex`, `target` and numeric features.
    pub data: Option<String>,
    pub trials: usize,
    pub n_grid: Vec<usize>,
    pub radius: f64,
    /// Accuracy of the known full-data mean.
    pub delta_m: f64,
    pub eps: f64,
    pub theta_bound: f64,
    pub solver: SolverOptions,
    pub dro: DroConfig,
}

impl Default for HeartConfig {
    fn default() -> Self {
        Self {
            data: None,
            trials: 100,
            n_grid: vec![20],
            radius: 1e-4,
            delta_m: 1e-3,
            eps: 1e-3,
            theta_bound: 5.0,
            solver: SolverOptions::default(),
            dro: DroConfig::default(),
        }
    }
}

/// MDI-DRO versus ERM trained on subsamples of old male patients and
/// evaluated on the full file; `Π` fixes the full-data mean of `(x, y)` to
/// within `Δm`.
pub fn heart(cfg: &HeartConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    check_trials(cfg.trials, &cfg.n_grid)?;
    let path = cfg
        .data
        .as_deref()
        .ok_or_else(|| MdiError::Config("heart experiment needs a data file".into()))?;
    let data = load_heart_csv(path)?;
    let full = empirical_from_samples(&atoms(&data.samples))?;
    let set = empirical_mean_box(&data.samples, cfg.delta_m)?;
    let loss = LossModel::Logistic {
        theta_box: ParamBox::symmetric(data.feature_names.len(), cfg.theta_bound)?,
    };
    let dro = DroConfig {
        radius: cfg.radius,
        ..cfg.dro.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
        .collect();
    let nested: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let mut rng = trial_rng(seed, g, t);
            let train = match biased_subsample_with(&data, cfg.n_grid[g], &mut rng) {
                Ok(s) => atoms(&s),
                Err(e) => {
                    return ["mdi_dro", "erm"]
                        .iter()
                        .map(|m| TrialRecord::failed(g, t, m, &e))
                        .collect()
                }
            };
            let mdi = classify_mdi(&train, &set, &loss, &dro, cfg.eps, &cfg.solver)
                .map(|(theta, value, conv)| {
                    TrialRecord::ok(g, t, "mdi_dro", value, risk(&theta, &full, &loss), conv)
                })
                .unwrap_or_else(|e| TrialRecord::failed(g, t, "mdi_dro", &e));
            let erm = empirical_from_samples(&train)
                .and_then(|emp| {
                    let theta = minimize_risk(&loss, &emp)?;
                    Ok(TrialRecord::ok(
                        g,
                        t,
                        "erm",
                        risk(&theta, &emp, &loss),
                        risk(&theta, &full, &loss),
                        true,
                    ))
                })
                .unwrap_or_else(|e| TrialRecord::failed(g, t, "erm", &e));
            vec![mdi, erm]
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

pub fn heart_report(cfg: &HeartConfig, records: &[TrialRecord]) -> ExperimentReport {
    let grid: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    ExperimentReport {
        name: "heart".into(),
        trials: records_table("n", &grid, records),
        summary: summary_table("n", &grid, &summarize(records)),
    }
}

// ---------------------------------------------------------------------------
// Off-policy evaluation on the inventory MDP

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeExperimentConfig {
    pub inventory: InventoryParams,
    pub trials: usize,
    pub n_grid: Vec<usize>,
    pub radius: f64,
    /// Cap `β` of the capped IPS estimator.
    pub cap: f64,
    pub ope: OpeConfig,
}

impl Default for OpeExperimentConfig {
    fn default() -> Self {
        Self {
            inventory: InventoryParams::default(),
            trials: 500,
            n_grid: vec![500],
            radius: 0.1,
            cap: 4.0,
            ope: OpeConfig::default(),
        }
    }
}

/// Per trial: fresh evaluation and behavioral policies drawn uniformly from
/// the stationary policies, `N` behavioral state-action samples, and the
/// IPS, capped IPS and MDI-DRO estimates of the evaluation policy's cost.
pub fn ope_inventory(cfg: &OpeExperimentConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    check_trials(cfg.trials, &cfg.n_grid)?;
    if !(cfg.cap >= 0.0) {
        return Err(MdiError::Config("cap β must be nonnegative".into()));
    }
    let mdp = inventory_instance(&cfg.inventory)?;
    let ope = OpeConfig {
        radius: cfg.radius,
        ..cfg.ope.clone()
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|g| (0..cfg.trials).map(move |t| (g, t)))
        .collect();
    let nested: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let mut rng = trial_rng(seed, g, t);
            let setup = (|| {
                let (ns, na) = (mdp.n_states(), mdp.n_actions());
                let target = occupation_measure(&mdp, &random_policy_with(ns, na, &mut rng)?)?;
                let behavior = occupation_measure(&mdp, &random_policy_with(ns, na, &mut rng)?)?;
                let samples = sample_from_measure(&mdp, &behavior, cfg.n_grid[g], &mut rng)?;
                Ok::<_, MdiError>((target, behavior, samples))
            })();
            let (target, behavior, samples) = match setup {
                Ok(s) => s,
                Err(e) => {
                    return ["ips", "ips_capped", "mdi_dro"]
                        .iter()
                        .map(|m| TrialRecord::failed(g, t, m, &e))
                        .collect()
                }
            };
            let truth = target.mean_cost();
            let record = |method: &str, est: Result<(f64, bool)>| match est {
                Ok((v, conv)) => TrialRecord::ok(g, t, method, v, truth, conv),
                Err(e) => TrialRecord::failed(g, t, method, &e),
            };
            vec![
                record(
                    "ips",
                    ips_estimate(&samples, &target, &behavior).map(|v| (v, true)),
                ),
                record(
                    "ips_capped",
                    capped_ips_estimate(&samples, &target, &behavior, cfg.cap).map(|v| (v, true)),
                ),
                record(
                    "mdi_dro",
                    mdi_ope_estimate(&samples, &target, &behavior, &ope)
                        .map(|e| (e.value, e.worst_case.converged && e.projection.converged)),
                ),
            ]
        })
        .collect();
    Ok(nested.into_iter().flatten().collect())
}

pub fn ope_report(cfg: &OpeExperimentConfig, records: &[TrialRecord]) -> ExperimentReport {
    let grid: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let summaries = summarize(records);
    let mut summary = summary_table("n", &grid, &summaries);
    // finite-sample bound on the MDI-DRO disappointment, per grid point
    let mdi_col = summary.columns.iter().position(|c| c == "mdi_dro");
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let mut row = vec![num(grid[g]), "disappointment_bound".to_string()];
        row.resize(summary.columns.len(), String::new());
        if let Some(col) = mdi_col {
            let nstates = cfg.inventory.n_states as u64;
            let nactions = cfg.inventory.n_actions as u64;
            row[col] = ope_bound(cfg.radius, n as u64, nstates, nactions)
                .map(|b| num(b.probability_bound))
                .unwrap_or_default();
        }
        summary.rows.push(row);
    }
    ExperimentReport {
        name: "ope-inventory".into(),
        trials: records_table("n", &grid, records),
        summary,
    }
}

// ---------------------------------------------------------------------------
// Consistency as the radius shrinks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Atoms of the scalar training distribution.
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    /// The moment interval `E` for `ψ(ξ) = ξ`.
    pub lower: f64,
    pub upper: f64,
    /// Newsvendor decision held fixed while the sample grows.
    pub theta: f64,
    pub unit_cost: f64,
    pub underage_cost: f64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// The radius at sample size `N` is `radius_scale / N`.
    pub radius_scale: f64,
    pub eps: f64,
    pub solver: SolverOptions,
    pub dro: DroConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            atoms: vec![0.0, 0.25, 0.5, 0.75],
            weights: vec![0.4, 0.3, 0.2, 0.1],
            lower: 0.45,
            upper: 0.6,
            theta: 0.4,
            unit_cost: 0.5,
            underage_cost: 1.0,
            n_grid: vec![50, 200, 800, 3200],
            replications: 20,
            radius_scale: 1.0,
            eps: 1e-4,
            solver: SolverOptions::default(),
            dro: DroConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub n: usize,
    pub replication: usize,
    pub radius: f64,
    /// `R*_{r_N}(θ, P̂^f_N)`.
    pub robust: f64,
    /// `R(θ, P^f)` under the I-projection of the true distribution.
    pub limit: f64,
    pub error: Option<String>,
}

impl ConsistencyRecord {
    pub fn gap(&self) -> f64 {
        (self.robust - self.limit).abs()
    }
}

pub fn consistency(cfg: &ConsistencyConfig, seed: u64) -> Result<Vec<ConsistencyRecord>> {
    check_trials(cfg.replications, &cfg.n_grid)?;
    if !(cfg.radius_scale > 0.0) {
        return Err(MdiError::Config("radius_scale must be positive".into()));
    }
    let truth = DiscreteDistribution::from_scalars(&cfg.atoms, &cfg.weights)?;
    let set = MomentSet::new_box(vec![cfg.lower], vec![cfg.upper])?;
    let mean = truth.expectation(|a| a[0]);
    let limit_dist = if set.contains(&[mean]) {
        truth.clone()
    } else {
        tilting_oracle(&truth, &FeatureMap::Identity, set.project(&[mean])[0])?
    };
    let loss = LossModel::newsvendor(cfg.unit_cost, cfg.underage_cost, cfg.theta, cfg.theta)?;
    let theta = [cfg.theta];
    let limit = risk(&theta, &limit_dist, &loss);
    let sampler = rand::distr::weighted::WeightedIndex::new(truth.weights())
        .map_err(|e| invalid(e.to_string()))?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|g| (0..cfg.replications).map(move |t| (g, t)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(g, t)| {
            use rand::distr::Distribution;
            let n = cfg.n_grid[g];
            let radius = cfg.radius_scale / n as f64;
            let mut rng = trial_rng(seed, g, t);
            let samples: Vec<Vec<f64>> = (0..n)
                .map(|_| truth.atoms()[sampler.sample(&mut rng)].clone())
                .collect();
            let robust = (|| {
                let emp = empirical_from_samples(&samples)?;
                let problem =
                    IProjectionProblem::new(emp.clone(), FeatureMap::Identity, set.clone(), cfg.eps);
                let proj = solve_with(&problem, &cfg.solver)?;
                let scenarios = ScenarioSet::from_support(&emp, &FeatureMap::Identity)?;
                let dro = DroConfig {
                    radius,
                    ..cfg.dro.clone()
                };
                let wc = worst_case_risk(&theta, &proj.projection, &set, &scenarios, &dro, &loss)?;
                Ok::<_, MdiError>(wc.value)
            })();
            let (robust, error) = match robust {
                Ok(v) => (v, None),
                Err(e) => (f64::NAN, Some(e.to_string())),
            };
            ConsistencyRecord {
                n,
                replication: t,
                radius,
                robust,
                limit,
                error,
            }
        })
        .collect())
}

/// Mean gap `|R* − R|` per sample size, over successful replications.
pub fn consistency_mean_gaps(cfg: &ConsistencyConfig, records: &[ConsistencyRecord]) -> Vec<f64> {
    cfg.n_grid
        .iter()
        .map(|&n| {
            let gaps: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.error.is_none())
                .map(ConsistencyRecord::gap)
                .collect();
            mean(&gaps)
        })
        .collect()
}

pub fn consistency_report(cfg: &ConsistencyConfig, records: &[ConsistencyRecord]) -> ExperimentReport {
    let mut trials = Table::new(&["n", "replication", "radius", "robust", "limit", "gap", "error"]);
    for r in records {
        trials.rows.push(vec![
            r.n.to_string(),
            r.replication.to_string(),
            num(r.radius),
            num(r.robust),
            num(r.limit),
            num(r.gap()),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    let mut summary = Table::new(&[
        "n", "radius", "mean_robust", "limit", "mean_gap", "q05_gap", "q50_gap", "q95_gap",
        "successes", "failures",
    ]);
    for &n in &cfg.n_grid {
        let group: Vec<&ConsistencyRecord> = records.iter().filter(|r| r.n == n).collect();
        let ok: Vec<&&ConsistencyRecord> = group.iter().filter(|r| r.error.is_none()).collect();
        let gaps: Vec<f64> = ok.iter().map(|r| r.gap()).collect();
        let q = quantiles(gaps.clone());
        summary.rows.push(vec![
            n.to_string(),
            num(cfg.radius_scale / n as f64),
            num(mean(&ok.iter().map(|r| r.robust).collect::<Vec<_>>())),
            num(group.first().map_or(f64::NAN, |r| r.limit)),
            num(mean(&gaps)),
            num(q[0]),
            num(q[1]),
            num(q[2]),
            ok.len().to_string(),
            (group.len() - ok.len()).to_string(),
        ]);
    }
    ExperimentReport {
        name: "consistency".into(),
        trials,
        summary,
    }
}

// ---------------------------------------------------------------------------
// Conditional limit theorem

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalLimitConfig {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub trials: usize,
    pub eps: f64,
}

impl Default for ConditionalLimitConfig {
    fn default() -> Self {
        Self {
            atoms: vec![0.0, 1.0],
            weights: vec![0.5, 0.5],
            lower: 0.7,
            upper: 0.8,
            n: 40,
            trials: 200_000,
            eps: 1e-4,
        }
    }
}

/// Rejection sampling of `N`-samples whose mean lands in `E`, compared with
/// the I-projection mean (loss = identity).
pub fn conditional_limit(cfg: &ConditionalLimitConfig, seed: u64) -> Result<ConditionalLimitCheck> {
    if cfg.trials == 0 {
        return Err(MdiError::Config("trials must be at least 1".into()));
    }
    let p = DiscreteDistribution::from_scalars(&cfg.atoms, &cfg.weights)?;
    let set = MomentSet::new_box(vec![cfg.lower], vec![cfg.upper])?;
    let losses: Vec<f64> = p.atoms().iter().map(|a| a[0]).collect();
    conditional_limit_check(
        &p,
        &FeatureMap::Identity,
        &set,
        &losses,
        cfg.n,
        cfg.trials,
        seed,
        cfg.eps,
    )
}

pub fn conditional_limit_report(check: &ConditionalLimitCheck) -> ExperimentReport {
    let mut t = Table::new(&[
        "trials",
        "accepted_trials",
        "conditional_mean",
        "projection_mean",
        "abs_difference",
    ]);
    t.rows.push(vec![
        check.trials.to_string(),
        check.accepted_trials.to_string(),
        num(check.conditional_mean),
        num(check.projection_mean),
        num((check.conditional_mean - check.projection_mean).abs()),
    ]);
    ExperimentReport {
        name: "conditional-limit".into(),
        trials: t.clone(),
        summary: t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert!((quantile(&xs, 0.05) - 1.2).abs() < 1e-12);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn trial_streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = trial_rng(7, 0, 1).random();
        let b: u64 = trial_rng(7, 0, 1).random();
        let c: u64 = trial_rng(7, 1, 1).random();
        let d: u64 = trial_rng(7, 0, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn summary_counts_failures_and_disappointments() {
        let err = MdiError::NonConvergence("x".into());
        let records = vec![
            TrialRecord::ok(0, 0, "a", 1.0, 2.0, true),
            TrialRecord::ok(0, 1, "a", 3.0, 2.0, true),
            TrialRecord::failed(0, 2, "a", &err),
            TrialRecord::ok(0, 0, "b", 1.0, 1.0, true),
        ];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].successes, 2);
        assert_eq!(s[0].failures, 1);
        assert_eq!(s[0].disappointment, 0.5);
        assert_eq!(s[0].mean_abs_error, 1.0);
        assert_eq!(s[1].disappointment, 0.0);
        let table = summary_table("n", &[10.0], &s);
        assert_eq!(table.columns, vec!["n", "statistic", "a", "b"]);
        assert_eq!(table.rows.len(), 13);
    }

    #[test]
    fn single_trial_sweeps_produce_one_row_per_method() {
        let cfg = CovshiftConfig {
            trials: 1,
            n_grid: vec![30],
            test_size: 500,
            mc_budget: 10_000,
            ..Default::default()
        };
        let records = covshift(&cfg, 3).unwrap();
        assert_eq!(records.len(), 3);
        let report = covshift_report(&cfg, &records);
        assert_eq!(report.trials.rows.len(), 3);

        let ope = OpeExperimentConfig {
            trials: 1,
            n_grid: vec![200],
            ..Default::default()
        };
        let records = ope_inventory(&ope, 3).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(TrialRecord::succeeded), "{records:?}");
    }

    #[test]
    fn sweeps_are_deterministic() {
        let cfg = OpeExperimentConfig {
            trials: 4,
            n_grid: vec![100],
            ..Default::default()
        };
        assert_eq!(ope_inventory(&cfg, 11).unwrap(), ope_inventory(&cfg, 11).unwrap());
    }

    #[test]
    fn zero_trials_is_a_configuration_error() {
        let cfg = CovshiftConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(matches!(covshift(&cfg, 0), Err(MdiError::Config(_))));
        let cfg = HeartConfig::default();
        assert!(matches!(heart(&cfg, 0), Err(MdiError::Config(_))));
    }

    #[test]
    fn heart_sweep_runs_on_fixture() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/heart_fixture.csv");
        let cfg = HeartConfig {
            data: Some(path.into()),
            trials: 2,
            n_grid: vec![2],
            delta_m: 0.5,
            ..Default::default()
        };
        let records = heart(&cfg, 1).unwrap();
        assert_eq!(records.len(), 4);
        assert!(records.iter().filter(|r| r.method == "erm").all(TrialRecord::succeeded));
    }

    #[test]
    fn conditional_limit_defaults_match_projection() {
        let cfg = ConditionalLimitConfig {
            trials: 20_000,
            ..Default::default()
        };
        let check = conditional_limit(&cfg, 5).unwrap();
        assert!((check.projection_mean - 0.7).abs() < 1e-4, "{check:?}");
        assert!((check.conditional_mean - check.projection_mean).abs() < 0.05);
    }
}
