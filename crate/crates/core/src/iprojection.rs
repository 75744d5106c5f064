//! I-projection of a discrete distribution onto `Π = {Q : E_Q[ψ] ∈ E}`.
//!
//! The primal problem `min_{Q ∈ Π} D(Q‖P)` is solved through its doubly
//! smoothed dual
//!
//! ```text
//! F_η(z) = -σ_{E,η₁}(z) - log Σ_i w_i exp(-zᵀψ_i) - (η₂/2)‖z‖²
//! ```
//!
//! where `σ_{E,η₁}(z) = max_{y∈E} yᵀz - (η₁/2)‖y‖²`. Its gradient is
//! `G_η(z) = -π_E(z/η₁) - η₂ z + (Gibbs mean of ψ)`, and `F_η` is
//! `L_η`-smooth and `η₂`-strongly concave, so a constant-momentum fast
//! gradient scheme converges linearly. A dual iterate `z` is mapped back to
//! the primal by Gibbs reweighting `q_i ∝ w_i exp(-zᵀψ_i)`.
//!
//! Given a Slater point `P°` with margin `δ` and `C = D(P°‖P)`, the iteration
//! count from [`SmoothingSchedule`] guarantees
//! `|D(Q̂‖P) - D(P^f‖P)| ≤ 2(1+2√3)ε` and `d(E_Q̂[ψ], E) ≤ 2εδ/C`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    relative_entropy_weights, weighted_mean, DiscreteDistribution, FeatureMap, MomentSet,
};
use crate::error::{invalid, MdiError, Result};
use crate::vector::{all_finite, dot, norm_inf, project_simplex};

/// Optimality certificate constant `2(1 + 2√3)`.
pub const OPTIMALITY_FACTOR: f64 = 2.0 * (1.0 + 2.0 * 1.732_050_807_568_877_2);

#[derive(Debug, Clone)]
pub struct IProjectionProblem {
    /// Reference distribution (typically the empirical distribution).
    pub base: DiscreteDistribution,
    pub features: FeatureMap,
    pub set: MomentSet,
    /// Weights of a Slater point over the base atoms. Searched for when absent.
    pub slater_weights: Option<Vec<f64>>,
    /// Accuracy `ε > 0`.
    pub tolerance: f64,
}

impl IProjectionProblem {
    pub fn new(
        base: DiscreteDistribution,
        features: FeatureMap,
        set: MomentSet,
        tolerance: f64,
    ) -> Self {
        Self {
            base,
            features,
            set,
            slater_weights: None,
            tolerance,
        }
    }

    pub fn with_slater(mut self, weights: Vec<f64>) -> Self {
        self.slater_weights = Some(weights);
        self
    }
}

/// Knobs that do not change the mathematical problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Hard cap on fast-gradient iterations; `None` runs the full schedule.
    pub max_iterations: Option<usize>,
    /// Stop once feasibility and the duality-gap surrogate are both below `ε/10`.
    pub early_exit: bool,
    /// Iterations between early-exit checks.
    pub check_every: usize,
    /// Inflation width for sets without interior. Defaults to `1e-6 (1 + ‖m₀‖∞)`.
    pub inflation: Option<f64>,
    /// Iteration budget of the Slater-point search.
    pub slater_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: Some(2_000_000),
            early_exit: true,
            check_every: 10,
            inflation: None,
            slater_iterations: 20_000,
        }
    }
}

/// Smoothing parameters, step size and iteration count of the fast gradient scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSchedule {
    /// `C = D(P°‖P)`.
    pub c: f64,
    /// `D = ½ max_{y∈E} ‖y‖₂`.
    pub d: f64,
    /// Slater margin `δ`.
    pub delta: f64,
    /// `α = max_i ‖ψ(ξ_i)‖∞`.
    pub alpha: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// `L_η = 1/η₁ + η₂ + α²`.
    pub lipschitz: f64,
    pub m1: f64,
    pub m2: f64,
    /// `⌈max{M₁, M₂}⌉`.
    pub iterations: u64,
}

impl SmoothingSchedule {
    pub fn from_constants(c: f64, d: f64, delta: f64, alpha: f64, eps: f64) -> Self {
        let eta1 = eps / (4.0 * d);
        let eta2 = eps * delta * delta / (2.0 * c * c);
        let lipschitz = 1.0 / eta1 + eta2 + alpha * alpha;
        let root = (8.0 * d * c * c / (eps * eps * delta * delta)
            + 2.0 * alpha * alpha * c * c / (eps * delta * delta)
            + 1.0)
            .sqrt();
        let m1 = 2.0 * root * (10.0 * (eps + 2.0 * c) / eps).ln();
        let inner = 4.0
            * (4.0 * d / eps + alpha * alpha + eps * delta * delta / (2.0 * c * c))
            * (c + eps / 2.0);
        let m2 = 2.0 * root * (c / (eps * delta * (2.0 - 3f64.sqrt())) * inner.sqrt()).ln();
        let iterations = m1.max(m2).max(0.0).ceil() as u64;
        Self {
            c,
            d,
            delta,
            alpha,
            eta1,
            eta2,
            lipschitz,
            m1,
            m2,
            iterations,
        }
    }

    /// Momentum coefficient `(√L - √η₂)/(√L + √η₂)`.
    pub fn momentum(&self) -> f64 {
        let (a, b) = (self.lipschitz.sqrt(), self.eta2.sqrt());
        (a - b) / (a + b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IProjectionSolution {
    /// Gibbs reweighting `Q̂_k` of the base atoms.
    pub projection: DiscreteDistribution,
    /// Dual vector `z_k`.
    pub dual: Vec<f64>,
    /// `D(Q̂_k‖P)`.
    pub entropy_value: f64,
    /// `d(E_Q̂[ψ], E)`.
    pub feasibility_gap: f64,
    /// `σ_E(z) - zᵀ E_Q̂[ψ]`, an upper bound on suboptimality when `Q̂` is feasible.
    pub duality_gap: f64,
    pub certified_optimality_bound: f64,
    pub certified_feasibility_bound: f64,
    pub iterations_run: usize,
    /// The set actually used (after inflation of flat directions).
    pub effective_set: MomentSet,
    pub schedule: Option<SmoothingSchedule>,
    /// True when the base already satisfied the constraint.
    pub shortcut: bool,
    /// False when an iteration cap stopped the solver before either the full
    /// schedule or the stopping test; no optimality certificate then applies.
    pub converged: bool,
}

/// Exponential family `q_i ∝ w_i exp(-zᵀψ_i)` over fixed atoms.
#[derive(Debug, Clone)]
pub(crate) struct GibbsFamily {
    d: usize,
    log_w: Vec<f64>,
    psi: Vec<f64>,
}

impl GibbsFamily {
    pub(crate) fn new(weights: &[f64], rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let log_w = weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        let psi = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self {
            d,
            log_w,
            psi,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.psi[i * self.d..(i + 1) * self.d]
    }

    /// Fills `probs` and `mean`; returns `log Σ_i w_i exp(-zᵀψ_i)`.
    /// Exponents are shifted by their maximum before exponentiation.
    pub(crate) fn evaluate(&self, z: &[f64], probs: &mut [f64], mean: &mut [f64]) -> f64 {
        let mut top = f64::NEG_INFINITY;
        for (i, p) in probs.iter_mut().enumerate() {
            let s = if self.log_w[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                self.log_w[i] - dot(z, self.row(i))
            };
            *p = s;
            top = top.max(s);
        }
        let mut total = 0.0;
        for p in probs.iter_mut() {
            *p = if *p == f64::NEG_INFINITY {
                0.0
            } else {
                (*p - top).exp()
            };
            total += *p;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for (i, p) in probs.iter_mut().enumerate() {
            *p /= total;
            if *p > 0.0 {
                for (m, x) in mean.iter_mut().zip(self.row(i)) {
                    *m += *p * x;
                }
            }
        }
        top + total.ln()
    }
}

/// Problem data after evaluation of ψ and inflation of flat sets.
struct Prepared {
    weights: Vec<f64>,
    rows: Vec<Vec<f64>>,
    set: MomentSet,
    family: GibbsFamily,
    base_moment: Vec<f64>,
}

impl Prepared {
    fn new(problem: &IProjectionProblem, options: &SolverOptions) -> Result<Self> {
        if !(problem.tolerance > 0.0) || !problem.tolerance.is_finite() {
            return Err(invalid("tolerance ε must be a positive finite number"));
        }
        let rows = problem.features.evaluate_all(&problem.base)?;
        if rows[0].len() != problem.set.dim() {
            return Err(invalid(format!(
                "feature dimension {} does not match the moment set dimension {}",
                rows[0].len(),
                problem.set.dim()
            )));
        }
        let set = if problem.set.has_interior() {
            problem.set.clone()
        } else {
            let tau = options
                .inflation
                .unwrap_or(1e-6 * (1.0 + problem.set.reference_scale()));
            if !(tau > 0.0) {
                return Err(invalid("inflation width must be positive"));
            }
            problem.set.inflate(tau)
        };
        let weights = problem.base.weights().to_vec();
        let family = GibbsFamily::new(&weights, &rows);
        let base_moment = weighted_mean(&weights, &rows);
        Ok(Self {
            weights,
            rows,
            set,
            family,
            base_moment,
        })
    }

    fn slater(&self, given: Option<&[f64]>, options: &SolverOptions) -> Result<Vec<f64>> {
        match given {
            Some(w) => {
                if w.len() != self.weights.len() {
                    return Err(invalid("Slater weights must match the base atom count"));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(invalid("Slater weights must be nonnegative"));
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return Err(invalid("Slater weights sum to zero"));
                }
                Ok(w.iter().map(|x| x / total).collect())
            }
            None => self.search_slater(options.slater_iterations),
        }
    }

    /// Accelerated projected gradient for `min ½‖Σ w_i ψ_i - center(E)‖²`
    /// over the simplex on the base support.
    fn search_slater(&self, budget: usize) -> Result<Vec<f64>> {
        if self.set.interior_margin(&self.base_moment) > 0.0 {
            return Ok(self.weights.clone());
        }
        let center = self.set.center();
        let support: Vec<usize> = (0..self.weights.len())
            .filter(|&i| self.weights[i] > 0.0)
            .collect();
        let rows: Vec<&[f64]> = support.iter().map(|&i| self.rows[i].as_slice()).collect();
        let lipschitz: f64 = rows.iter().map(|r| dot(r, r)).sum::<f64>().max(1e-300);
        let moment_of = |w: &[f64]| -> Vec<f64> {
            let mut m = vec![0.0; center.len()];
            for (wi, r) in w.iter().zip(&rows) {
                for (mj, x) in m.iter_mut().zip(r.iter()) {
                    *mj += wi * x;
                }
            }
            m
        };
        let objective = |w: &[f64]| -> f64 {
            let m = moment_of(w);
            0.5 * m
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };

        let mut x: Vec<f64> = support.iter().map(|&i| self.weights[i]).collect();
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut f_x = objective(&x);
        for _ in 0..budget {
            let m = moment_of(&y);
            let residual: Vec<f64> = m.iter().zip(&center).map(|(a, b)| a - b).collect();
            let step: Vec<f64> = y
                .iter()
                .zip(&rows)
                .map(|(yi, r)| yi - dot(r, &residual) / lipschitz)
                .collect();
            let x_next = project_simplex(&step);
            let f_next = objective(&x_next);
            if f_next > f_x {
                // restart the momentum
                y = x.clone();
                t = 1.0;
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = x_next
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            let done = f_x - f_next <= 1e-16 * (1.0 + f_x) && f_next < f_x + 1e-300;
            x = x_next;
            f_x = f_next;
            t = t_next;
            if done && f_x <= 1e-28 {
                break;
            }
        }
        let mut weights = vec![0.0; self.weights.len()];
        for (k, &i) in support.iter().enumerate() {
            weights[i] = x[k];
        }
        let margin = self.set.interior_margin(&moment_of(&x));
        if margin > 0.0 {
            Ok(weights)
        } else {
            Err(MdiError::NoSlater(format!(
                "closest moment to the center of E has margin {margin:e} after {budget} iterations"
            )))
        }
    }

    fn schedule(&self, slater: &[f64], eps: f64) -> Result<SmoothingSchedule> {
        let slater_moment = weighted_mean(slater, &self.rows);
        let delta = self.set.interior_margin(&slater_moment);
        if !(delta > 0.0) {
            return Err(MdiError::SlaterViolation { margin: delta });
        }
        let c = relative_entropy_weights(slater, &self.weights);
        if !c.is_finite() {
            return Err(invalid(
                "Slater point must be absolutely continuous w.r.t. the base distribution",
            ));
        }
        if c <= 0.0 {
            return Err(MdiError::AlreadyFeasible);
        }
        let d = 0.5 * self.set.max_norm();
        if d <= 0.0 {
            return Err(MdiError::DegenerateSet(
                "E = {0} makes η₁ = ε/(4D) undefined; shift ψ by a constant so E moves away from the origin"
                    .into(),
            ));
        }
        let alpha = self
            .rows
            .iter()
            .map(|r| norm_inf(r))
            .fold(0.0_f64, f64::max);
        Ok(SmoothingSchedule::from_constants(c, d, delta, alpha, eps))
    }

    fn gradient(&self, z: &[f64], sched: &SmoothingSchedule, probs: &mut [f64], out: &mut [f64]) {
        self.family.evaluate(z, probs, out);
        let scaled: Vec<f64> = z.iter().map(|v| v / sched.eta1).collect();
        let proj = self.set.project(&scaled);
        for ((g, p), zj) in out.iter_mut().zip(&proj).zip(z) {
            *g += -p - sched.eta2 * zj;
        }
    }

    fn objective(&self, z: &[f64], sched: &SmoothingSchedule) -> f64 {
        let mut probs = vec![0.0; self.weights.len()];
        let mut mean = vec![0.0; z.len()];
        let log_z = self.family.evaluate(z, &mut probs, &mut mean);
        -self.set.smoothed_support(z, sched.eta1) - log_z - 0.5 * sched.eta2 * dot(z, z)
    }
}

/// Schedule of the fast gradient scheme for `problem`.
///
/// Uses the given Slater weights, or searches for a Slater point when none
/// are supplied.
pub fn compute_schedule(problem: &IProjectionProblem) -> Result<SmoothingSchedule> {
    compute_schedule_with(problem, &SolverOptions::default())
}

pub fn compute_schedule_with(
    problem: &IProjectionProblem,
    options: &SolverOptions,
) -> Result<SmoothingSchedule> {
    let prep = Prepared::new(problem, options)?;
    let slater = prep.slater(problem.slater_weights.as_deref(), options)?;
    prep.schedule(&slater, problem.tolerance)
}

/// Smoothed dual gradient `G_η(z)`.
pub fn smoothed_dual_gradient(
    z: &[f64],
    problem: &IProjectionProblem,
    schedule: &SmoothingSchedule,
) -> Result<Vec<f64>> {
    if !all_finite(z) {
        return Err(invalid("dual point must be finite"));
    }
    let prep = Prepared::new(problem, &SolverOptions::default())?;
    if z.len() != prep.set.dim() {
        return Err(invalid("dual point has the wrong dimension"));
    }
    let mut probs = vec![0.0; prep.weights.len()];
    let mut g = vec![0.0; z.len()];
    prep.gradient(z, schedule, &mut probs, &mut g);
    Ok(g)
}

/// Smoothed dual objective `F_η(z)`, whose gradient is [`smoothed_dual_gradient`].
pub fn smoothed_dual_objective(
    z: &[f64],
    problem: &IProjectionProblem,
    schedule: &SmoothingSchedule,
) -> Result<f64> {
    if !all_finite(z) {
        return Err(invalid("dual point must be finite"));
    }
    let prep = Prepared::new(problem, &SolverOptions::default())?;
    Ok(prep.objective(z, schedule))
}

/// Solves the I-projection with default [`SolverOptions`].
pub fn solve(problem: &IProjectionProblem) -> Result<IProjectionSolution> {
    solve_with(problem, &SolverOptions::default())
}

pub fn solve_with(
    problem: &IProjectionProblem,
    options: &SolverOptions,
) -> Result<IProjectionSolution> {
    let prep = Prepared::new(problem, options)?;
    let eps = problem.tolerance;
    let d = prep.set.dim();

    if prep.set.contains(&prep.base_moment) {
        return Ok(IProjectionSolution {
            projection: problem.base.clone(),
            dual: vec![0.0; d],
            entropy_value: 0.0,
            feasibility_gap: 0.0,
            duality_gap: 0.0,
            certified_optimality_bound: 0.0,
            certified_feasibility_bound: 0.0,
            iterations_run: 0,
            effective_set: prep.set,
            schedule: None,
            shortcut: true,
            converged: true,
        });
    }

    let slater = prep.slater(problem.slater_weights.as_deref(), options)?;
    let sched = prep.schedule(&slater, eps)?;
    let feasibility_bound = 2.0 * eps * sched.delta / sched.c;
    let total = match options.max_iterations {
        Some(cap) => (sched.iterations as usize).min(cap),
        None => sched.iterations as usize,
    };
    let step = 1.0 / sched.lipschitz;
    let beta = sched.momentum();
    let check_every = options.check_every.max(1);

    let n = prep.weights.len();
    let mut probs = vec![0.0; n];
    let mut grad = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut y_next = vec![0.0; d];
    let mut run = 0;

    let feasibility_target = (eps / 10.0).min(feasibility_bound);
    let stop = |feas: f64, gap: f64| feas <= feasibility_target && gap.abs() <= eps / 10.0;
    for k in 0..total {
        prep.gradient(&w, &sched, &mut probs, &mut grad);
        for j in 0..d {
            y_next[j] = w[j] + step * grad[j];
        }
        if !all_finite(&y_next) {
            return Err(MdiError::Divergence {
                iteration: k,
                reason: "non-finite dual iterate".into(),
            });
        }
        for j in 0..d {
            w[j] = y_next[j] + beta * (y_next[j] - y[j]);
        }
        std::mem::swap(&mut y, &mut y_next);
        run = k + 1;

        if options.early_exit && run % check_every == 0 {
            prep.family.evaluate(&y, &mut probs, &mut mean);
            let feas = prep.set.distance(&mean);
            let gap = prep.set.support(&y) - dot(&y, &mean);
            if stop(feas, gap) {
                break;
            }
        }
    }

    prep.family.evaluate(&y, &mut probs, &mut mean);
    let feasibility_gap = prep.set.distance(&mean);
    let duality_gap = prep.set.support(&y) - dot(&y, &mean);
    let entropy_value = relative_entropy_weights(&probs, &prep.weights);
    let converged = run as u64 >= sched.iterations || stop(feasibility_gap, duality_gap);
    if feasibility_gap > feasibility_bound {
        return Err(MdiError::CertificateViolation {
            gap: feasibility_gap,
            bound: feasibility_bound,
            iterations: run,
        });
    }
    Ok(IProjectionSolution {
        projection: problem.base.reweighted(probs)?,
        dual: y,
        entropy_value,
        feasibility_gap,
        duality_gap,
        certified_optimality_bound: if converged {
            OPTIMALITY_FACTOR * eps
        } else {
            f64::INFINITY
        },
        certified_feasibility_bound: feasibility_bound,
        iterations_run: run,
        effective_set: prep.set,
        schedule: Some(sched),
        shortcut: false,
        converged,
    })
}

/// Slater weights closest (in moment) to the center of `E`.
///
/// Returns the base weights when the base moment already lies in the
/// interior of `E`.
pub fn default_slater(problem: &IProjectionProblem) -> Result<Vec<f64>> {
    let options = SolverOptions::default();
    let prep = Prepared::new(problem, &options)?;
    prep.search_slater(options.slater_iterations)
}

/// Exponential tilt `w_i e^{λψ_i} / Z` of a scalar-featured distribution
/// whose mean of ψ equals `target` (bisection on λ, accuracy 1e-10).
pub fn tilting_oracle(
    base: &DiscreteDistribution,
    features: &FeatureMap,
    target: f64,
) -> Result<DiscreteDistribution> {
    let values: Vec<f64> = features
        .evaluate_all(base)?
        .into_iter()
        .map(|r| {
            if r.len() == 1 {
                Ok(r[0])
            } else {
                Err(invalid("tilting oracle needs a scalar feature map"))
            }
        })
        .collect::<Result<_>>()?;
    let weights = base.weights();
    let mean0: f64 = weights.iter().zip(&values).map(|(w, v)| w * v).sum();
    if target == mean0 {
        return Ok(base.clone());
    }
    let (lo_v, hi_v) = weights
        .iter()
        .zip(&values)
        .filter(|(w, _)| **w > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| {
            (lo.min(v), hi.max(v))
        });
    if !(target > lo_v && target < hi_v) {
        return Err(MdiError::Infeasible(format!(
            "target mean {target} outside the open range ({lo_v}, {hi_v})"
        )));
    }
    let tilt = |lambda: f64| -> (Vec<f64>, f64) {
        let s: Vec<f64> = weights
            .iter()
            .zip(&values)
            .map(|(&w, &v)| {
                if w > 0.0 {
                    w.ln() + lambda * v
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - top).exp()).collect();
        let total: f64 = e.iter().sum();
        let q: Vec<f64> = e.iter().map(|x| x / total).collect();
        let mean = q.iter().zip(&values).map(|(a, b)| a * b).sum();
        (q, mean)
    };
    let (mut lo, mut hi) = if target > mean0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    if target > mean0 {
        while tilt(hi).1 < target {
            lo = hi;
            hi *= 2.0;
        }
    } else {
        while tilt(lo).1 > target {
            hi = lo;
            lo *= 2.0;
        }
    }
    let mut best = tilt(0.5 * (lo + hi));
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        best = tilt(mid);
        if (best.1 - target).abs() <= 1e-12 || hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
            break;
        }
        if best.1 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target).abs() > 1e-10 {
        return Err(MdiError::NonConvergence(format!(
            "tilting bisection stalled at mean {} for target {target}",
            best.1
        )));
    }
    base.reweighted(best.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalLimitCheck {
    /// Monte Carlo estimate of `E[L(ξ₁) | mean ψ ∈ E]`.
    pub conditional_mean: f64,
    /// `E_{P^f}[L]` under the computed I-projection.
    pub projection_mean: f64,
    pub accepted_trials: usize,
    pub trials: usize,
}

/// Rejection-sampling check of the conditional limit theorem: draws `n`
/// i.i.d. points from `p` per trial, keeps trials whose empirical ψ-mean
/// lies in `E`, and averages the loss of the first point.
#[allow(clippy::too_many_arguments)]
pub fn conditional_limit_check(
    p: &DiscreteDistribution,
    features: &FeatureMap,
    set: &MomentSet,
    losses: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ConditionalLimitCheck> {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    if losses.len() != p.len() {
        return Err(invalid("need one loss value per atom"));
    }
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    let rows = features.evaluate_all(p)?;
    let d = rows[0].len();
    let sampler = WeightedIndex::new(p.weights()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0usize;
    let mut loss_sum = 0.0;
    let mut sum = vec![0.0; d];
    for _ in 0..trials {
        sum.iter_mut().for_each(|s| *s = 0.0);
        let first = sampler.sample(&mut rng);
        for (s, x) in sum.iter_mut().zip(&rows[first]) {
            *s += x;
        }
        for _ in 1..n {
            let i = sampler.sample(&mut rng);
            for (s, x) in sum.iter_mut().zip(&rows[i]) {
                *s += x;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        if set.contains(&mean) {
            accepted += 1;
            loss_sum += losses[first];
        }
    }
    if accepted == 0 {
        return Err(MdiError::NoAcceptance);
    }
    let problem = IProjectionProblem::new(p.clone(), features.clone(), set.clone(), tolerance);
    let sol = solve(&problem)?;
    let projection_mean = sol
        .projection
        .weights()
        .iter()
        .zip(losses)
        .map(|(w, l)| w * l)
        .sum();
    Ok(ConditionalLimitCheck {
        conditional_mean: loss_sum / accepted as f64,
        projection_mean,
        accepted_trials: accepted,
        trials,
    })
}
