//! Worst-case risk over a relative-entropy ball intersected with a moment
//! family, and its minimization over decisions.
//!
//! For a nominal distribution `P′ = Σ w_i δ_{ξ_i}` the worst-case risk
//!
//! ```text
//! R*(θ, P′) = sup { E_Q[L(θ, ξ)] : D(P′‖Q) ≤ r, E_Q[ψ] ∈ E }
//! ```
//!
//! equals the convex dual program
//!
//! ```text
//! inf_{α, z}  α + σ_E(z) - e^{-r} exp( Σ_i w_i log(α - L(θ, ξ_i) + zᵀψ(ξ_i)) )
//! s.t.        α ≥ L(θ, ξ_j) - zᵀψ(ξ_j)   for every scenario ξ_j.
//! ```
//!
//! The solver eliminates `α` exactly (a monotone 1-D root find for each
//! `(z, θ)`), which leaves a smooth-plus-support-function problem in `(z, θ)`
//! handled by accelerated proximal gradient. Scenarios outside the nominal
//! support enter through a logarithmic barrier driven to zero by continuation.

use serde::{Deserialize, Serialize};

use crate::distributions::{find_atom, DiscreteDistribution, FeatureMap, MomentSet};
use crate::error::{invalid, MdiError, Result};
use crate::iprojection::{self, IProjectionProblem, IProjectionSolution, SolverOptions};
use crate::optim::{golden_section, minimize, ApgOptions, Composite};
use crate::vector::{dot, norm2};

/// Axis-aligned parameter box `Θ = [lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamBox")]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawParamBox> for ParamBox {
    type Error = MdiError;
    fn try_from(raw: RawParamBox) -> Result<Self> {
        ParamBox::new(raw.lower, raw.upper)
    }
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("parameter box bounds must be nonempty and of equal length"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(invalid("parameter box needs finite bounds with lower <= upper"));
        }
        Ok(Self { lower, upper })
    }

    /// `[-half, half]^n`.
    pub fn symmetric(n: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; n], vec![half; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| t.clamp(*l, *u))
            .collect()
    }
}

/// Convex losses `L(θ, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum LossModel {
    /// `ξ = (x, y)` with label `y ∈ {-1, 1}` in the last coordinate;
    /// `L = log(1 + exp(-y θᵀx))`.
    Logistic { theta_box: ParamBox },
    /// `L = ξ₁`; no decision variable.
    Linear,
    /// `L = c_p θ + c_u max(ξ₁ - θ, 0)`.
    Newsvendor {
        unit_cost: f64,
        underage_cost: f64,
        theta_box: ParamBox,
    },
}

impl LossModel {
    pub fn newsvendor(unit_cost: f64, underage_cost: f64, lower: f64, upper: f64) -> Result<Self> {
        Ok(Self::Newsvendor {
            unit_cost,
            underage_cost,
            theta_box: ParamBox::new(vec![lower], vec![upper])?,
        })
    }

    pub fn theta_box(&self) -> Option<&ParamBox> {
        match self {
            Self::Logistic { theta_box } | Self::Newsvendor { theta_box, .. } => Some(theta_box),
            Self::Linear => None,
        }
    }

    /// Number of decision variables.
    pub fn param_dim(&self) -> usize {
        self.theta_box().map_or(0, ParamBox::dim)
    }

    fn check(&self, theta: &[f64], atom_dim: usize) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(invalid(format!(
                "θ has length {} but the loss expects {}",
                theta.len(),
                self.param_dim()
            )));
        }
        match self {
            Self::Logistic { theta_box } if theta_box.dim() + 1 != atom_dim => Err(invalid(
                format!(
                    "logistic loss with {} weights needs atoms (x, y) of dimension {}, got {atom_dim}",
                    theta_box.dim(),
                    theta_box.dim() + 1
                ),
            )),
            Self::Newsvendor {
                unit_cost,
                underage_cost,
                ..
            } if !unit_cost.is_finite() || !underage_cost.is_finite() => {
                Err(invalid("newsvendor costs must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// `L(θ, ξ)`.
    pub fn loss(&self, theta: &[f64], xi: &[f64]) -> f64 {
        match self {
            Self::Logistic { .. } => {
                let (x, y) = xi.split_at(xi.len() - 1);
                softplus(-y[0] * dot(theta, x))
            }
            Self::Linear => xi[0],
            Self::Newsvendor {
                unit_cost,
                underage_cost,
                ..
            } => unit_cost * theta[0] + underage_cost * (xi[0] - theta[0]).max(0.0),
        }
    }

    /// Adds `scale · ∇_θ L(θ, ξ)` (a subgradient at kinks) to `out`.
    pub fn add_gradient(&self, theta: &[f64], xi: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Self::Logistic { .. } => {
                let (x, y) = xi.split_at(xi.len() - 1);
                let s = -y[0] * dot(theta, x);
                let coef = -y[0] * logistic(s) * scale;
                for (o, xj) in out.iter_mut().zip(x) {
                    *o += coef * xj;
                }
            }
            Self::Linear => {}
            Self::Newsvendor {
                unit_cost,
                underage_cost,
                ..
            } => {
                let under = if xi[0] > theta[0] { *underage_cost } else { 0.0 };
                out[0] += scale * (unit_cost - under);
            }
        }
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `R(θ, P) = Σ_i w_i L(θ, ξ_i)`.
pub fn risk(theta: &[f64], dist: &DiscreteDistribution, loss: &LossModel) -> f64 {
    dist.expectation(|xi| loss.loss(theta, xi))
}

/// Finite surrogate of the outcome space with precomputed features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    points: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn new(points: Vec<Vec<f64>>, psi: &FeatureMap) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("scenario set must be nonempty"));
        }
        let features = points
            .iter()
            .map(|p| psi.evaluate(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, features })
    }

    /// The atoms of `dist`.
    pub fn from_support(dist: &DiscreteDistribution, psi: &FeatureMap) -> Result<Self> {
        Self::new(dist.atoms().to_vec(), psi)
    }

    /// Adds points not already present.
    pub fn extended(mut self, extra: &[Vec<f64>], psi: &FeatureMap) -> Result<Self> {
        for p in extra {
            if find_atom(&self.points, p).is_none() {
                self.features.push(psi.evaluate(p)?);
                self.points.push(p.clone());
            }
        }
        Ok(self)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DroConfig {
    /// Ball radius `r > 0` in nats.
    pub radius: f64,
    /// Tolerance on the proximal-gradient residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Step shrink factor on a failed sufficient-decrease test.
    pub backtrack_shrink: f64,
    /// Step growth factor after an accepted step.
    pub step_growth: f64,
    /// Barrier weights for scenarios outside the nominal support.
    pub barrier_schedule: Vec<f64>,
}

impl Default for DroConfig {
    fn default() -> Self {
        Self {
            radius: 0.1,
            tolerance: 1e-8,
            max_iterations: 50_000,
            backtrack_shrink: 0.5,
            step_growth: 1.2,
            barrier_schedule: vec![1e-3, 1e-5, 1e-7, 1e-9],
        }
    }
}

impl DroConfig {
    pub fn with_radius(radius: f64) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("radius r must be positive and finite"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if !(self.backtrack_shrink > 0.0 && self.backtrack_shrink < 1.0) || self.step_growth < 1.0
        {
            return Err(invalid("need 0 < backtrack_shrink < 1 <= step_growth"));
        }
        Ok(())
    }

    fn apg(&self) -> ApgOptions {
        ApgOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            initial_step: 1.0,
            shrink: self.backtrack_shrink,
            grow: self.step_growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRisk {
    pub value: f64,
    pub alpha: f64,
    pub z: Vec<f64>,
    pub converged: bool,
    pub first_order_residual: f64,
    pub iterations: usize,
}

/// The dual program of the worst-case risk for a fixed instance, as a
/// function of `(α, z, θ)`.
#[derive(Debug, Clone)]
pub struct DualProgram<'a> {
    loss: &'a LossModel,
    set: &'a MomentSet,
    scenarios: &'a ScenarioSet,
    /// `(scenario index, weight)` of the nominal support.
    nominal: Vec<(usize, f64)>,
    /// Scenarios carrying no nominal mass.
    extra: Vec<usize>,
    radius: f64,
}

impl<'a> DualProgram<'a> {
    pub fn new(
        nominal: &DiscreteDistribution,
        scenarios: &'a ScenarioSet,
        set: &'a MomentSet,
        loss: &'a LossModel,
        radius: f64,
    ) -> Result<Self> {
        if scenarios.features[0].len() != set.dim() {
            return Err(invalid("scenario features do not match the moment set dimension"));
        }
        if scenarios.points[0].len() != nominal.dim() {
            return Err(invalid("scenario points do not match the nominal dimension"));
        }
        let mut in_support = vec![false; scenarios.len()];
        let mut pairs = Vec::new();
        for (atom, w) in nominal.support() {
            let j = find_atom(&scenarios.points, atom).ok_or_else(|| {
                invalid(format!("nominal atom {atom:?} is not in the scenario set"))
            })?;
            in_support[j] = true;
            pairs.push((j, w));
        }
        let extra = (0..scenarios.len()).filter(|&j| !in_support[j]).collect();
        Ok(Self {
            loss,
            set,
            scenarios,
            nominal: pairs,
            extra,
            radius,
        })
    }

    fn losses(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let values: Vec<f64> = self
            .scenarios
            .points
            .iter()
            .map(|p| self.loss.loss(theta, p))
            .collect();
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(MdiError::Evaluation {
                atom: self.scenarios.points[j].clone(),
                reason: "loss is not finite".into(),
            });
        }
        Ok(values)
    }

    /// Full objective `α + σ_E(z) - e^{-r} exp(Σ w_i log a_i)`; `+∞` when a
    /// scenario constraint is violated or a nominal log argument is not positive.
    pub fn value(&self, alpha: f64, z: &[f64], theta: &[f64]) -> Result<f64> {
        let l = self.losses(theta)?;
        let mut log_gm = 0.0;
        for &(j, w) in &self.nominal {
            let a = alpha - l[j] + dot(z, &self.scenarios.features[j]);
            if !(a > 0.0) {
                return Ok(f64::INFINITY);
            }
            log_gm += w * a.ln();
        }
        for &j in &self.extra {
            if alpha - l[j] + dot(z, &self.scenarios.features[j]) < 0.0 {
                return Ok(f64::INFINITY);
            }
        }
        Ok(alpha + self.set.support(z) - (log_gm - self.radius).exp())
    }

    /// Gradient in `(α, z, θ)` (concatenated), using the support point of
    /// `E` as the gradient of `σ_E`.
    pub fn gradient(&self, alpha: f64, z: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let l = self.losses(theta)?;
        let d = z.len();
        let mut args = Vec::with_capacity(self.nominal.len());
        let mut log_gm = 0.0;
        for &(j, w) in &self.nominal {
            let a = alpha - l[j] + dot(z, &self.scenarios.features[j]);
            if !(a > 0.0) {
                return Err(invalid("point outside the domain of the dual objective"));
            }
            log_gm += w * a.ln();
            args.push(a);
        }
        let gm = (log_gm - self.radius).exp();
        let mut g = vec![0.0; 1 + d + theta.len()];
        g[0] = 1.0;
        let sp = self.set.support_point(z);
        g[1..=d].copy_from_slice(&sp);
        for (&(j, w), a) in self.nominal.iter().zip(&args) {
            let c = gm * w / a;
            g[0] -= c;
            for (gk, p) in g[1..=d].iter_mut().zip(&self.scenarios.features[j]) {
                *gk -= c * p;
            }
            self.loss
                .add_gradient(theta, &self.scenarios.points[j], c, &mut g[1 + d..]);
        }
        Ok(g)
    }
}

/// Exact minimization over `α` for fixed `(z, θ)` with barrier weight `μ`.
struct AlphaSolve {
    alpha: f64,
    /// Smooth part of the objective (everything except `σ_E(z)`), barrier included.
    value: f64,
    /// `e^{-r} GM w_i / a_i` for each nominal atom.
    nominal_coef: Vec<f64>,
    /// `μ / b_j` for each extra scenario.
    extra_coef: Vec<f64>,
}

impl DualProgram<'_> {
    /// `s_j = L_j - zᵀψ_j` for all scenarios.
    fn shifts(&self, z: &[f64], losses: &[f64]) -> Vec<f64> {
        losses
            .iter()
            .zip(&self.scenarios.features)
            .map(|(l, p)| l - dot(z, p))
            .collect()
    }

    fn solve_alpha(&self, s: &[f64], mu: f64) -> AlphaSolve {
        let floor = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = floor - s.iter().copied().fold(f64::INFINITY, f64::min);
        let decay = (-self.radius).exp();
        let mu = if self.extra.is_empty() { 0.0 } else { mu };
        // φ'(u) and φ''(u) at α = floor + u
        let eval = |u: f64| -> (f64, f64) {
            let mut log_gm = 0.0;
            let mut h1 = 0.0;
            let mut h2 = 0.0;
            for &(j, w) in &self.nominal {
                let a = floor - s[j] + u;
                log_gm += w * a.ln();
                h1 += w / a;
                h2 += w / (a * a);
            }
            let gm = decay * log_gm.exp();
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for &j in &self.extra {
                let b = floor - s[j] + u;
                b1 += 1.0 / b;
                b2 += 1.0 / (b * b);
            }
            let d1 = 1.0 - gm * h1 - mu * b1;
            let d2 = gm * (h2 - h1 * h1) + mu * b2;
            (d1, d2.max(0.0))
        };
        // smallest offset that keeps every log argument representable
        let u_min = 8.0 * f64::EPSILON * floor.abs().max(1.0);
        let scale = spread.max(1e-3);
        let mut lo = scale;
        while eval(lo).0 > 0.0 && lo > u_min {
            lo = (lo * 0.125).max(u_min);
        }
        let mut hi = scale;
        while eval(hi).0 <= 0.0 && hi < 1e300 {
            hi *= 8.0;
        }
        if lo >= hi {
            lo = hi * 0.125;
        }
        let mut u = (lo * hi).sqrt();
        if eval(lo).0 > 0.0 {
            // φ is increasing all the way down: the infimum sits at the constraint
            u = lo;
            hi = lo;
        }
        for _ in 0..200 {
            if hi <= lo {
                break;
            }
            let (d1, d2) = eval(u);
            if d1 > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
            let newton = if d2 > 0.0 { u - d1 / d2 } else { f64::NAN };
            u = if newton > lo && newton < hi {
                newton
            } else {
                (lo * hi).sqrt()
            };
            if d1.abs() <= 1e-15 {
                break;
            }
        }
        let alpha = floor + u;
        let mut log_gm = 0.0;
        let args: Vec<f64> = self
            .nominal
            .iter()
            .map(|&(j, w)| {
                let a = alpha - s[j];
                log_gm += w * a.ln();
                a
            })
            .collect();
        let gm = decay * log_gm.exp();
        let nominal_coef = self
            .nominal
            .iter()
            .zip(&args)
            .map(|(&(_, w), a)| gm * w / a)
            .collect();
        let mut barrier = 0.0;
        let extra_coef = self
            .extra
            .iter()
            .map(|&j| {
                let b = alpha - s[j];
                barrier += b.ln();
                if mu > 0.0 {
                    mu / b
                } else {
                    0.0
                }
            })
            .collect();
        AlphaSolve {
            alpha,
            value: alpha - gm - mu * barrier,
            nominal_coef,
            extra_coef,
        }
    }
}

/// Reduced problem in `x = (z, θ)` with `α` eliminated.
struct Reduced<'p, 'a> {
    program: &'p DualProgram<'a>,
    d: usize,
    mu: f64,
}

impl Reduced<'_, '_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.d)
    }

    fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Option<(f64, AlphaSolve)> {
        let (z, theta) = self.split(x);
        let losses = self.program.losses(theta).ok()?;
        let s = self.program.shifts(z, &losses);
        let sol = self.program.solve_alpha(&s, self.mu);
        if !sol.value.is_finite() {
            return None;
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            let (gz, gt) = g.split_at_mut(self.d);
            let points = &self.program.scenarios.points;
            let feats = &self.program.scenarios.features;
            let terms = self
                .program
                .nominal
                .iter()
                .map(|&(j, _)| j)
                .zip(sol.nominal_coef.iter().copied())
                .chain(self.program.extra.iter().copied().zip(sol.extra_coef.iter().copied()));
            for (j, c) in terms {
                if c == 0.0 {
                    continue;
                }
                for (gk, p) in gz.iter_mut().zip(&feats[j]) {
                    *gk -= c * p;
                }
                if !gt.is_empty() {
                    self.program.loss.add_gradient(theta, &points[j], c, gt);
                }
            }
        }
        Some((sol.value, sol))
    }
}

impl Composite for Reduced<'_, '_> {
    fn smooth(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.evaluate(x, Some(grad)).map(|(v, _)| v)
    }

    fn smooth_value(&self, x: &[f64]) -> Option<f64> {
        self.evaluate(x, None).map(|(v, _)| v)
    }

    fn nonsmooth(&self, x: &[f64]) -> f64 {
        self.program.set.support(&x[..self.d])
    }

    fn prox(&self, v: &[f64], t: f64) -> Vec<f64> {
        let (vz, vt) = self.split(v);
        // Moreau: prox_{tσ_E}(v) = v - t π_E(v / t)
        let scaled: Vec<f64> = vz.iter().map(|a| a / t).collect();
        let proj = self.program.set.project(&scaled);
        let mut out: Vec<f64> = vz.iter().zip(&proj).map(|(a, p)| a - t * p).collect();
        match self.program.loss.theta_box() {
            Some(b) if !vt.is_empty() => out.extend(b.project(vt)),
            _ => out.extend_from_slice(vt),
        }
        out
    }
}

struct DualSolution {
    x: Vec<f64>,
    alpha: f64,
    value: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
}

/// Runs the barrier continuation from `x0 = (z, θ)`.
fn solve_dual(
    program: &DualProgram<'_>,
    x0: Vec<f64>,
    cfg: &DroConfig,
    mut observe: impl FnMut(&[f64], f64),
) -> Result<DualSolution> {
    let d = program.set.dim();
    let schedule: Vec<f64> = if program.extra.is_empty() || cfg.barrier_schedule.is_empty() {
        vec![0.0]
    } else {
        cfg.barrier_schedule.clone()
    };
    let opts = cfg.apg();
    let mut x = x0;
    let mut last = None;
    let mut iterations = 0;
    for &mu in &schedule {
        let reduced = Reduced { program, d, mu };
        let res = minimize(&reduced, x.clone(), &opts, &mut observe).ok_or_else(|| {
            MdiError::NonConvergence("dual objective undefined at the starting point".into())
        })?;
        iterations += res.iterations;
        x = res.x.clone();
        last = Some(res);
    }
    let res = last.expect("barrier schedule is nonempty");
    let (z, theta) = x.split_at(d);
    let losses = program.losses(theta)?;
    let alpha = program.solve_alpha(&program.shifts(z, &losses), *schedule.last().unwrap()).alpha;
    let value = program.value(alpha, z, theta)?;
    Ok(DualSolution {
        x,
        alpha,
        value,
        residual: res.residual,
        iterations,
        converged: res.converged,
    })
}

/// `R*(θ, P′)` with its dual certificate.
pub fn worst_case_risk(
    theta: &[f64],
    nominal: &DiscreteDistribution,
    set: &MomentSet,
    scenarios: &ScenarioSet,
    cfg: &DroConfig,
    loss: &LossModel,
) -> Result<WorstCaseRisk> {
    cfg.validate()?;
    loss.check(theta, nominal.dim())?;
    let program = DualProgram::new(nominal, scenarios, set, loss, cfg.radius)?;
    solve_fixed_theta(&program, theta, cfg)
}

fn solve_fixed_theta(
    program: &DualProgram<'_>,
    theta: &[f64],
    cfg: &DroConfig,
) -> Result<WorstCaseRisk> {
    program.losses(theta)?;
    // θ is fixed: optimize over z alone by wrapping with a frozen θ
    let fixed = FixedTheta { program, theta };
    let d = program.set.dim();
    let schedule: Vec<f64> = if program.extra.is_empty() || cfg.barrier_schedule.is_empty() {
        vec![0.0]
    } else {
        cfg.barrier_schedule.clone()
    };
    let opts = cfg.apg();
    let mut z = vec![0.0; d];
    let mut last = None;
    let mut iterations = 0;
    for &mu in &schedule {
        let reduced = FixedReduced { inner: &fixed, mu };
        let res = minimize(&reduced, z.clone(), &opts, |_, _| {}).ok_or_else(|| {
            MdiError::NonConvergence("dual objective undefined at the starting point".into())
        })?;
        iterations += res.iterations;
        z = res.x.clone();
        last = Some(res);
    }
    let res = last.expect("barrier schedule is nonempty");
    let losses = program.losses(theta)?;
    let alpha = program
        .solve_alpha(&program.shifts(&z, &losses), *schedule.last().unwrap())
        .alpha;
    let value = program.value(alpha, &z, theta)?;
    Ok(WorstCaseRisk {
        value,
        alpha,
        z,
        converged: res.converged,
        first_order_residual: res.residual,
        iterations,
    })
}

struct FixedTheta<'p, 'a> {
    program: &'p DualProgram<'a>,
    theta: &'p [f64],
}

struct FixedReduced<'f, 'p, 'a> {
    inner: &'f FixedTheta<'p, 'a>,
    mu: f64,
}

impl FixedReduced<'_, '_, '_> {
    fn full(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        x.extend_from_slice(self.inner.theta);
        x
    }

    fn reduced(&self) -> Reduced<'_, '_> {
        Reduced {
            program: self.inner.program,
            d: z_dim(self.inner.program),
            mu: self.mu,
        }
    }
}

fn z_dim(program: &DualProgram<'_>) -> usize {
    program.set.dim()
}

impl Composite for FixedReduced<'_, '_, '_> {
    fn smooth(&self, z: &[f64], grad: &mut [f64]) -> Option<f64> {
        let x = self.full(z);
        let mut g = vec![0.0; x.len()];
        let v = self.reduced().smooth(&x, &mut g)?;
        grad.copy_from_slice(&g[..z.len()]);
        Some(v)
    }

    fn smooth_value(&self, z: &[f64]) -> Option<f64> {
        self.reduced().smooth_value(&self.full(z))
    }

    fn nonsmooth(&self, z: &[f64]) -> f64 {
        self.inner.program.set.support(z)
    }

    fn prox(&self, v: &[f64], t: f64) -> Vec<f64> {
        let scaled: Vec<f64> = v.iter().map(|a| a / t).collect();
        let proj = self.inner.program.set.project(&scaled);
        v.iter().zip(&proj).map(|(a, p)| a - t * p).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroSolution {
    pub theta: Vec<f64>,
    /// `J* = min_θ R*(θ, P′)`.
    pub value: f64,
    pub alpha: f64,
    pub z: Vec<f64>,
    pub converged: bool,
    pub first_order_residual: f64,
    pub iterations: usize,
}

/// Relative tolerance under which two objective values count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

/// Tracks the best iterate, preferring the smallest `‖θ‖` among ties.
#[derive(Default)]
struct TieBreak {
    best: Option<(f64, Vec<f64>)>,
}

impl TieBreak {
    fn offer(&mut self, value: f64, theta: &[f64]) {
        let replace = match &self.best {
            None => true,
            Some((bv, bt)) => {
                let tol = TIE_TOLERANCE * bv.abs().max(1.0);
                value < bv - tol || (value <= bv + tol && norm2(theta) < norm2(bt))
            }
        };
        if replace {
            self.best = Some((value, theta.to_vec()));
        }
    }
}

/// `min_{θ ∈ Θ} R*(θ, P′)`.
pub fn dro_train(
    loss: &LossModel,
    nominal: &DiscreteDistribution,
    set: &MomentSet,
    scenarios: &ScenarioSet,
    cfg: &DroConfig,
) -> Result<DroSolution> {
    cfg.validate()?;
    let program = DualProgram::new(nominal, scenarios, set, loss, cfg.radius)?;
    match loss {
        LossModel::Linear => {
            let w = solve_fixed_theta(&program, &[], cfg)?;
            Ok(DroSolution {
                theta: vec![],
                value: w.value,
                alpha: w.alpha,
                z: w.z,
                converged: w.converged,
                first_order_residual: w.first_order_residual,
                iterations: w.iterations,
            })
        }
        LossModel::Newsvendor { theta_box, .. } => {
            // nonsmooth in θ: golden section on the convex map θ ↦ R*(θ)
            let (lo, hi) = (theta_box.lower()[0], theta_box.upper()[0]);
            loss.check(&[lo], nominal.dim())?;
            let mut ties = TieBreak::default();
            let tol = 1e-7 * (hi - lo).max(1e-12);
            let (theta, _) = golden_section(
                |t| {
                    let w = solve_fixed_theta(&program, &[t], cfg)?;
                    ties.offer(w.value, &[t]);
                    Ok::<_, MdiError>(w.value)
                },
                lo,
                hi,
                tol,
            )?;
            let theta = ties.best.map_or(vec![theta], |(_, t)| t);
            let w = solve_fixed_theta(&program, &theta, cfg)?;
            Ok(DroSolution {
                theta,
                value: w.value,
                alpha: w.alpha,
                z: w.z,
                converged: w.converged,
                first_order_residual: w.first_order_residual,
                iterations: w.iterations,
            })
        }
        LossModel::Logistic { theta_box } => {
            let d = set.dim();
            let theta0 = theta_box.project(&vec![0.0; theta_box.dim()]);
            loss.check(&theta0, nominal.dim())?;
            let mut x0 = vec![0.0; d];
            x0.extend(theta0);
            let mut ties = TieBreak::default();
            let sol = solve_dual(&program, x0, cfg, |x, v| ties.offer(v, &x[d..]))?;
            let (value, alpha, x) = match ties.best {
                Some((_, theta)) if theta != sol.x[d..] => {
                    // a tied iterate with smaller ‖θ‖: re-evaluate it exactly
                    let w = solve_fixed_theta(&program, &theta, cfg)?;
                    let mut x = w.z.clone();
                    x.extend(theta);
                    (w.value, w.alpha, x)
                }
                _ => (sol.value, sol.alpha, sol.x.clone()),
            };
            Ok(DroSolution {
                theta: x[d..].to_vec(),
                value,
                alpha,
                z: x[..d].to_vec(),
                converged: sol.converged,
                first_order_residual: sol.residual,
                iterations: sol.iterations,
            })
        }
    }
}

/// Empirical (or weighted) risk minimizer `argmin_{θ ∈ Θ} R(θ, P)`.
pub fn minimize_risk(loss: &LossModel, dist: &DiscreteDistribution) -> Result<Vec<f64>> {
    match loss {
        LossModel::Linear => Ok(vec![]),
        LossModel::Newsvendor { theta_box, .. } => {
            let (lo, hi) = (theta_box.lower()[0], theta_box.upper()[0]);
            let (t, _) = golden_section(
                |t| Ok::<_, MdiError>(risk(&[t], dist, loss)),
                lo,
                hi,
                1e-9 * (hi - lo).max(1e-12),
            )?;
            Ok(vec![t])
        }
        LossModel::Logistic { theta_box } => {
            let theta0 = theta_box.project(&vec![0.0; theta_box.dim()]);
            loss.check(&theta0, dist.dim())?;
            let problem = EmpiricalRisk { loss, dist, theta_box };
            let opts = DroConfig::default().apg();
            let mut ties = TieBreak::default();
            let res = minimize(&problem, theta0, &opts, |t, v| ties.offer(v, t))
                .ok_or_else(|| MdiError::NonConvergence("empirical risk undefined".into()))?;
            Ok(ties.best.map_or(res.x, |(_, t)| t))
        }
    }
}

struct EmpiricalRisk<'a> {
    loss: &'a LossModel,
    dist: &'a DiscreteDistribution,
    theta_box: &'a ParamBox,
}

impl Composite for EmpiricalRisk<'_> {
    fn smooth(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (xi, w) in self.dist.support() {
            total += w * self.loss.loss(x, xi);
            self.loss.add_gradient(x, xi, w, grad);
        }
        Some(total)
    }

    fn smooth_value(&self, x: &[f64]) -> Option<f64> {
        Some(risk(x, self.dist, self.loss))
    }

    fn nonsmooth(&self, _: &[f64]) -> f64 {
        0.0
    }

    fn prox(&self, v: &[f64], _: f64) -> Vec<f64> {
        self.theta_box.project(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    pub theta: Vec<f64>,
    /// `J*_N`.
    pub value: f64,
    pub alpha: f64,
    pub z: Vec<f64>,
    pub converged: bool,
    /// The I-projection of the empirical distribution with its certificates.
    pub projection: IProjectionSolution,
}

/// Empirical distribution → I-projection onto `Π` → DRO training over the
/// sample support.
pub fn mdi_dro_pipeline(
    samples: &[Vec<f64>],
    psi: &FeatureMap,
    set: &MomentSet,
    loss: &LossModel,
    cfg: &DroConfig,
    eps: f64,
) -> Result<PipelineResult> {
    mdi_dro_pipeline_with(samples, psi, set, loss, cfg, eps, &SolverOptions::default())
}

pub fn mdi_dro_pipeline_with(
    samples: &[Vec<f64>],
    psi: &FeatureMap,
    set: &MomentSet,
    loss: &LossModel,
    cfg: &DroConfig,
    eps: f64,
    options: &SolverOptions,
) -> Result<PipelineResult> {
    let empirical = crate::distributions::empirical_from_samples(samples)?;
    let problem = IProjectionProblem::new(empirical.clone(), psi.clone(), set.clone(), eps);
    let projection = iprojection::solve_with(&problem, options)?;
    let scenarios = ScenarioSet::from_support(&empirical, psi)?;
    let sol = dro_train(loss, &projection.projection, set, &scenarios, cfg)?;
    Ok(PipelineResult {
        theta: sol.theta,
        value: sol.value,
        alpha: sol.alpha,
        z: sol.z,
        converged: sol.converged && projection.converged,
        projection,
    })
}
