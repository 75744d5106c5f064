//! Tabular average-cost MDPs, occupation measures, the inventory-control
//! instance and off-policy estimators of the long-run average cost.
//!
//! States and actions are 0-based indices internally. The inventory instance
//! labels states `1..=nS` and actions `1..=nA`, so state index `i` means stock
//! level `i + 1` and action index `j` means ordering `j + 1` units.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, FeatureMap, MomentSet};
use crate::dro::{worst_case_risk, DroConfig, LossModel, ScenarioSet, WorstCaseRisk};
use crate::error::{invalid, MdiError, Result};
use crate::iprojection::{self, IProjectionProblem, IProjectionSolution, SolverOptions};

const STOCHASTIC_TOL: f64 = 1e-10;

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(invalid(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `kernel[s][a][s′] = Q(s′ | s, a)`.
    kernel: Vec<Vec<Vec<f64>>>,
    /// `cost[s][a] = c(s, a)`.
    cost: Vec<Vec<f64>>,
    initial_state: usize,
}

impl TabularMdp {
    pub fn new(
        kernel: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<f64>>,
        initial_state: usize,
    ) -> Result<Self> {
        let n_states = kernel.len();
        if n_states == 0 {
            return Err(invalid("MDP needs at least one state"));
        }
        let n_actions = kernel[0].len();
        if n_actions == 0 {
            return Err(invalid("MDP needs at least one action"));
        }
        if cost.len() != n_states || initial_state >= n_states {
            return Err(invalid("cost table or initial state does not match the state count"));
        }
        for (s, rows) in kernel.iter().enumerate() {
            if rows.len() != n_actions || cost[s].len() != n_actions {
                return Err(invalid("every state needs the same number of actions"));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(invalid("kernel rows must cover every next state"));
                }
                check_row(row, &format!("kernel row ({s}, {a})"))?;
            }
            if cost[s].iter().any(|c| !c.is_finite()) {
                return Err(invalid("costs must be finite"));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            cost,
            initial_state,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn kernel(&self, s: usize, a: usize) -> &[f64] {
        &self.kernel[s][a]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s][a]
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    /// `probs[s][a] = π(a | s)`.
    probs: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(invalid("policy table must be nonempty"));
        }
        let n_actions = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(invalid("policy rows must have equal length"));
            }
            check_row(row, &format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / n_actions as f64; n_actions]; n_states])
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

/// Stationary state-action frequencies `μ(s, a) = d(s) π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMeasure {
    mu: Vec<Vec<f64>>,
    mean_cost: f64,
    balance_residual: f64,
}

impl OccupationMeasure {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.mu[s][a]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.mu
    }

    /// `Σ μ(s, a) c(s, a)`.
    pub fn mean_cost(&self) -> f64 {
        self.mean_cost
    }

    /// `max_{s′} |Σ_a μ(s′, a) - Σ_{s,a} Q(s′|s,a) μ(s, a)|`.
    pub fn balance_residual(&self) -> f64 {
        self.balance_residual
    }

    /// `π_μ(a|s) = μ(s,a) / Σ_a′ μ(s,a′)`; uniform on states with no mass.
    pub fn induced_policy(&self) -> StationaryPolicy {
        let probs = self
            .mu
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter().map(|m| m / total).collect()
                } else {
                    vec![1.0 / row.len() as f64; row.len()]
                }
            })
            .collect();
        StationaryPolicy { probs }
    }

    /// `D(μ‖ν) = Σ μ log(μ/ν)` over state-action pairs.
    pub fn relative_entropy(&self, other: &OccupationMeasure) -> f64 {
        let mut total = 0.0;
        for (row, orow) in self.mu.iter().zip(&other.mu) {
            for (&m, &o) in row.iter().zip(orow) {
                if m > 0.0 {
                    if o <= 0.0 {
                        return f64::INFINITY;
                    }
                    total += m * (m / o).ln();
                }
            }
        }
        total
    }
}

fn balance_residual(mdp: &TabularMdp, mu: &[Vec<f64>]) -> f64 {
    let n = mdp.n_states;
    let mut inflow = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            for (t, q) in mdp.kernel[s][a].iter().enumerate() {
                inflow[t] += q * mu[s][a];
            }
        }
    }
    (0..n)
        .map(|t| (mu[t].iter().sum::<f64>() - inflow[t]).abs())
        .fold(0.0, f64::max)
}

/// Occupation measure of `policy`, from the stationary law of the induced chain.
///
/// The stationary law is found by lazy power iteration `d ← (d + dP)/2` from
/// the uniform law (same fixed points as `P`, immune to periodicity).
pub fn occupation_measure(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<OccupationMeasure> {
    let (n, m) = (mdp.n_states, mdp.n_actions);
    if policy.probs.len() != n || policy.probs[0].len() != m {
        return Err(invalid("policy shape does not match the MDP"));
    }
    let mut chain = vec![vec![0.0; n]; n];
    for s in 0..n {
        for a in 0..m {
            let pa = policy.probs[s][a];
            if pa > 0.0 {
                for (t, q) in mdp.kernel[s][a].iter().enumerate() {
                    chain[s][t] += pa * q;
                }
            }
        }
    }
    let mut d = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    for _ in 0..1_000_000 {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            for t in 0..n {
                next[t] += d[s] * chain[s][t];
            }
        }
        let residual = d
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        for (x, y) in d.iter_mut().zip(&next) {
            *x = 0.5 * (*x + y);
        }
        if residual <= 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MdiError::NonConvergence(
            "stationary distribution did not converge; the policy chain may be multichain".into(),
        ));
    }
    let total: f64 = d.iter().sum();
    let mu: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..m).map(|a| d[s] / total * policy.probs[s][a]).collect())
        .collect();
    let mean_cost = (0..n)
        .flat_map(|s| (0..m).map(move |a| (s, a)))
        .map(|(s, a)| mu[s][a] * mdp.cost[s][a])
        .sum();
    let residual = balance_residual(mdp, &mu);
    if residual > 1e-8 {
        return Err(MdiError::NonConvergence(format!(
            "occupation measure violates the balance equations by {residual:e}"
        )));
    }
    Ok(OccupationMeasure {
        mu,
        mean_cost,
        balance_residual: residual,
    })
}

/// Long-run average cost `V_π = Σ μ_π(s,a) c(s,a)`.
pub fn long_run_cost(mdp: &TabularMdp, policy: &StationaryPolicy) -> Result<f64> {
    Ok(occupation_measure(mdp, policy)?.mean_cost)
}

/// An observed state-action pair with its cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub cost: f64,
}

/// `N` i.i.d. draws `(s, a) ~ μ_{π_b}` with their costs.
pub fn sample_behavioral(
    mdp: &TabularMdp,
    behavior: &StationaryPolicy,
    n: usize,
    seed: u64,
) -> Result<Vec<Transition>> {
    let mu = occupation_measure(mdp, behavior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_from_measure(mdp, &mu, n, &mut rng)
}

/// `N` i.i.d. draws from a given occupation measure.
pub fn sample_from_measure(
    mdp: &TabularMdp,
    mu: &OccupationMeasure,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Transition>> {
    let m = mdp.n_actions;
    let flat: Vec<f64> = mu.mu.iter().flatten().copied().collect();
    let sampler = WeightedIndex::new(&flat).map_err(|e| invalid(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let k = sampler.sample(rng);
            let (s, a) = (k / m, k % m);
            Transition {
                state: s,
                action: a,
                cost: mdp.cost[s][a],
            }
        })
        .collect())
}

fn importance_ratios(
    samples: &[Transition],
    target: &OccupationMeasure,
    behavior: &OccupationMeasure,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    samples
        .iter()
        .map(|t| {
            let b = behavior.mu[t.state][t.action];
            if b <= 0.0 {
                Err(MdiError::SupportViolation(format!(
                    "observed pair ({}, {}) has zero behavioral frequency",
                    t.state, t.action
                )))
            } else {
                Ok(target.mu[t.state][t.action] / b)
            }
        })
        .collect()
}

/// `(1/N) Σ c_i μ_e(s_i,a_i) / μ_b(s_i,a_i)`.
pub fn ips_estimate(
    samples: &[Transition],
    target: &OccupationMeasure,
    behavior: &OccupationMeasure,
) -> Result<f64> {
    capped_ips_estimate(samples, target, behavior, f64::INFINITY)
}

/// IPS with every ratio replaced by `min(β, ratio)`.
pub fn capped_ips_estimate(
    samples: &[Transition],
    target: &OccupationMeasure,
    behavior: &OccupationMeasure,
    cap: f64,
) -> Result<f64> {
    if cap.is_nan() || cap < 0.0 {
        return Err(invalid("cap β must be nonnegative"));
    }
    let ratios = importance_ratios(samples, target, behavior)?;
    let total: f64 = samples
        .iter()
        .zip(&ratios)
        .map(|(t, w)| t.cost * w.min(cap))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Range `b = max |c(s,a)| μ_e(s,a)/μ_b(s,a)` of the IPS terms.
pub fn hoeffding_scale(
    mdp: &TabularMdp,
    target: &OccupationMeasure,
    behavior: &OccupationMeasure,
) -> f64 {
    let mut b: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mb = behavior.mu[s][a];
            if mb > 0.0 {
                b = b.max(mdp.cost[s][a].abs() * target.mu[s][a] / mb);
            }
        }
    }
    b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpeEstimate {
    /// Robust upper estimate `J*_N` of the target policy's long-run cost.
    pub value: f64,
    /// `D(μ_e‖μ_b)`.
    pub kl_target: f64,
    /// Empirical distribution of the observed costs.
    pub nominal: DiscreteDistribution,
    pub projection: IProjectionSolution,
    pub worst_case: WorstCaseRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeConfig {
    pub radius: f64,
    /// I-projection accuracy; defaults to `min(1e-3, r/10)`.
    pub eps: Option<f64>,
    /// Inflation of the singleton KL target; defaults to `1e-4 (1 + D(μ_e‖μ_b))`.
    pub tau: Option<f64>,
    pub solver: SolverOptions,
    pub dro: DroConfig,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            eps: None,
            tau: None,
            solver: SolverOptions::default(),
            dro: DroConfig::default(),
        }
    }
}

/// Robust off-policy estimate from behavioral samples.
///
/// The observed costs form the empirical distribution `P̂_N`; each cost value
/// carries the feature `ψ = log(μ_e/μ_b)` of the pair that produced it, so the
/// I-projection onto `{Q : E_Q[ψ] = D(μ_e‖μ_b)}` recovers the cost law under
/// the target policy. The worst case over the KL ball around that projection
/// bounds the target's long-run cost.
pub fn mdi_ope_estimate(
    samples: &[Transition],
    target: &OccupationMeasure,
    behavior: &OccupationMeasure,
    cfg: &OpeConfig,
) -> Result<OpeEstimate> {
    let ratios = importance_ratios(samples, target, behavior)?;
    // cost value → (pair, ψ); observed pairs only
    let mut table: Vec<(f64, (usize, usize), f64)> = Vec::new();
    for (t, ratio) in samples.iter().zip(&ratios) {
        match table.iter().find(|(c, _, _)| *c == t.cost) {
            Some((_, pair, _)) if *pair != (t.state, t.action) => {
                return Err(MdiError::NotInvertible(format!(
                    "pairs {:?} and {:?} share the cost {}",
                    pair,
                    (t.state, t.action),
                    t.cost
                )));
            }
            Some(_) => {}
            None => {
                if *ratio <= 0.0 {
                    return Err(invalid(format!(
                        "observed pair ({}, {}) has zero target frequency; log ratio undefined",
                        t.state, t.action
                    )));
                }
                table.push((t.cost, (t.state, t.action), ratio.ln()));
            }
        }
    }
    let kl = target.relative_entropy(behavior);
    if !kl.is_finite() {
        return Err(MdiError::SupportViolation(
            "target occupation measure is not absolutely continuous w.r.t. the behavioral one".into(),
        ));
    }
    let tau = cfg.tau.unwrap_or(1e-4 * (1.0 + kl.abs()));
    let eps = cfg.eps.unwrap_or((cfg.radius / 10.0).min(1e-3));
    let features = FeatureMap::Tabular {
        atoms: table.iter().map(|(c, _, _)| vec![*c]).collect(),
        values: table.iter().map(|(_, _, psi)| vec![*psi]).collect(),
    };
    let set = MomentSet::new_box(vec![kl - tau], vec![kl + tau])?;
    let costs: Vec<Vec<f64>> = samples.iter().map(|t| vec![t.cost]).collect();
    let nominal = crate::distributions::empirical_from_samples(&costs)?;
    let problem = IProjectionProblem::new(nominal.clone(), features.clone(), set.clone(), eps);
    let projection = iprojection::solve_with(&problem, &cfg.solver)?;
    let scenarios = ScenarioSet::from_support(&nominal, &features)?;
    let dro = DroConfig {
        radius: cfg.radius,
        ..cfg.dro.clone()
    };
    let worst_case = worst_case_risk(
        &[],
        &projection.projection,
        &set,
        &scenarios,
        &dro,
        &LossModel::Linear,
    )?;
    Ok(OpeEstimate {
        value: worst_case.value,
        kl_target: kl,
        nominal,
        projection,
        worst_case,
    })
}

/// Parameters of the single-item inventory problem with geometric demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InventoryParams {
    /// Demand parameter: `P(ζ = k) = λ(1-λ)^k`, `k ≥ 0`.
    pub lambda: f64,
    /// Storage capacity.
    pub capacity: usize,
    pub unit_cost: f64,
    pub holding_cost: f64,
    pub price: f64,
    pub n_states: usize,
    pub n_actions: usize,
}

impl Default for InventoryParams {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            capacity: 5,
            unit_cost: 0.6,
            holding_cost: 0.3,
            price: 1.0,
            n_states: 5,
            n_actions: 4,
        }
    }
}

/// Expected per-period cost `pa + h(s+a) - v (1-λ)/λ (1 - (1-λ)^{s+a})`.
pub fn inventory_cost(params: &InventoryParams, stock: usize, order: usize) -> f64 {
    let l = params.lambda;
    let level = (stock + order) as f64;
    params.unit_cost * order as f64 + params.holding_cost * level
        - params.price * (1.0 - l) / l * (1.0 - (1.0 - l).powf(level))
}

/// Inventory MDP on stock levels `1..=nS` with orders `1..=nA`.
///
/// The stock after ordering is `y = min(γ, s + a)`; the next level is
/// `max(1, y - ζ)`, so the floor level 1 absorbs the demand tail
/// `P(ζ ≥ y - 1) = (1-λ)^{y-1}`.
pub fn inventory_instance(params: &InventoryParams) -> Result<TabularMdp> {
    let l = params.lambda;
    if !(l > 0.0 && l < 1.0) {
        return Err(invalid("demand parameter λ must lie in (0, 1)"));
    }
    if params.capacity < 1 || params.n_states < 1 || params.n_actions < 1 {
        return Err(invalid("capacity, |S| and |A| must be at least 1"));
    }
    if params.capacity > params.n_states {
        return Err(invalid(format!(
            "capacity {} exceeds the largest stock level {}",
            params.capacity, params.n_states
        )));
    }
    for v in [params.unit_cost, params.holding_cost, params.price] {
        if !v.is_finite() {
            return Err(invalid("costs must be finite"));
        }
    }
    let (n, m) = (params.n_states, params.n_actions);
    let mut kernel = vec![vec![vec![0.0; n]; m]; n];
    let mut cost = vec![vec![0.0; m]; n];
    for si in 0..n {
        for ai in 0..m {
            let (s, a) = (si + 1, ai + 1);
            let y = params.capacity.min(s + a);
            let row = &mut kernel[si][ai];
            for k in 2..=y {
                row[k - 1] = l * (1.0 - l).powi((y - k) as i32);
            }
            row[0] = (1.0 - l).powi(y as i32 - 1);
            cost[si][ai] = inventory_cost(params, s, a);
        }
    }
    TabularMdp::new(kernel, cost, 0)
}

/// Policy with rows drawn from the flat Dirichlet on the action simplex.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> Result<StationaryPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_policy_with(n_states, n_actions, &mut rng)
}

pub fn random_policy_with(
    n_states: usize,
    n_actions: usize,
    rng: &mut impl Rng,
) -> Result<StationaryPolicy> {
    if n_states == 0 || n_actions == 0 {
        return Err(invalid("policy needs at least one state and action"));
    }
    // normalized i.i.d. Exp(1) draws are flat-Dirichlet distributed
    let probs = (0..n_states)
        .map(|_| {
            let e: Vec<f64> = (0..n_actions).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|x| x / total).collect()
        })
        .collect();
    StationaryPolicy::new(probs)
}
