//! Finitely supported distributions, feature maps and moment sets.
//!
//! A [`DiscreteDistribution`] stores its atoms in a canonical (lexicographic)
//! order with duplicates merged, so two distributions built from the same
//! points share an atom index and can be compared weight by weight.
//!
//! The constraint family handled throughout the crate is
//!
//! ```text
//! Π = { Q : E_Q[ψ(ξ)] ∈ E }
//! ```
//!
//! where `ψ` is a [`FeatureMap`] and `E` a compact convex [`MomentSet`].
//! All logarithms are natural; divergences are reported in nats.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MdiError, Result};
use crate::vector::{dist2, dot, norm2};

/// Tolerance used for set membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn canonical(x: f64) -> f64 {
    // -0.0 and 0.0 must be the same atom
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

fn cmp_atoms(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

pub(crate) fn find_atom(atoms: &[Vec<f64>], x: &[f64]) -> Option<usize> {
    atoms
        .iter()
        .position(|a| a.len() == x.len() && a.iter().zip(x).all(|(u, v)| u == v))
}

/// A probability distribution on finitely many points of `R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DiscreteDistribution {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
    sample_count: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<RawDistribution> for DiscreteDistribution {
    type Error = MdiError;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        DiscreteDistribution::new(raw.atoms, raw.weights)
    }
}

impl From<DiscreteDistribution> for RawDistribution {
    fn from(d: DiscreteDistribution) -> Self {
        RawDistribution {
            atoms: d.atoms,
            weights: d.weights,
        }
    }
}

impl DiscreteDistribution {
    /// Builds a distribution, renormalizing the weights and merging duplicate atoms.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("distribution needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].len();
        if dim == 0 {
            return Err(invalid("atoms must have dimension >= 1"));
        }
        for a in &atoms {
            if a.len() != dim {
                return Err(invalid("atoms have inconsistent dimensions"));
            }
            if !a.iter().all(|x| x.is_finite()) {
                return Err(invalid(format!("atom {a:?} is not finite")));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }

        let mut pairs: Vec<(Vec<f64>, f64)> = atoms
            .into_iter()
            .map(|a| a.into_iter().map(canonical).collect())
            .zip(weights.into_iter().map(|w| w / total))
            .collect();
        pairs.sort_by(|a, b| cmp_atoms(&a.0, &b.0));

        let mut merged_atoms: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match merged_atoms.last() {
                Some(last) if cmp_atoms(last, &a) == Ordering::Equal => {
                    *merged_weights.last_mut().unwrap() += w;
                }
                _ => {
                    merged_atoms.push(a);
                    merged_weights.push(w);
                }
            }
        }
        Ok(Self {
            atoms: merged_atoms,
            weights: merged_weights,
            sample_count: None,
        })
    }

    /// Uniform distribution on the given points.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0; n])
    }

    /// Scalar convenience constructor: atoms are the points of `values`.
    pub fn from_scalars(values: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), weights.to_vec())
    }

    /// The same atoms under a new weight vector (renormalized, no merging needed).
    pub fn reweighted(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.atoms.len() {
            return Err(invalid("weight vector length does not match the atom count"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        Ok(Self {
            atoms: self.atoms.clone(),
            weights: weights.into_iter().map(|w| w / total).collect(),
            sample_count: self.sample_count,
        })
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Dimension `m` of the atoms.
    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    /// Number of samples the distribution was built from, when known.
    pub fn sample_count(&self) -> Option<usize> {
        self.sample_count
    }

    pub fn index_of(&self, atom: &[f64]) -> Option<usize> {
        let key: Vec<f64> = atom.iter().copied().map(canonical).collect();
        self.atoms
            .binary_search_by(|a| cmp_atoms(a, &key))
            .ok()
    }

    /// Weight of `atom`, zero if it is not an atom.
    pub fn weight_of(&self, atom: &[f64]) -> f64 {
        self.index_of(atom).map_or(0.0, |i| self.weights[i])
    }

    /// Atoms carrying positive mass.
    pub fn support(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.atoms
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(a, &w)| (a.as_slice(), w))
    }

    /// `E[f(ξ)]` for a scalar function of the atom.
    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.support().map(|(a, w)| w * f(a)).sum()
    }
}

/// Empirical distribution of a sample: duplicate points are merged and each
/// atom weighs `multiplicity / N`.
pub fn empirical_from_samples(samples: &[Vec<f64>]) -> Result<DiscreteDistribution> {
    if samples.is_empty() {
        return Err(invalid("empirical distribution of an empty sample"));
    }
    let n = samples.len();
    let mut dist = DiscreteDistribution::new(samples.to_vec(), vec![1.0; n])?;
    dist.sample_count = Some(n);
    Ok(dist)
}

/// Relative entropy `D(Q‖P) = Σ q log(q/p)` in nats; `+∞` when `Q` is not
/// absolutely continuous with respect to `P`.
pub fn relative_entropy(q: &DiscreteDistribution, p: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    for (atom, qi) in q.support() {
        let pi = p.weight_of(atom);
        if pi <= 0.0 {
            return f64::INFINITY;
        }
        total += qi * (qi / pi).ln();
    }
    total.max(0.0)
}

/// Relative entropy between weight vectors over a shared index.
pub(crate) fn relative_entropy_weights(q: &[f64], p: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return f64::INFINITY;
            }
            total += qi * (qi / pi).ln();
        }
    }
    total.max(0.0)
}

/// Total variation distance `½ Σ |q - p|` over the union of the supports.
pub fn total_variation(q: &DiscreteDistribution, p: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    for (atom, &w) in q.atoms().iter().zip(q.weights()) {
        total += (w - p.weight_of(atom)).abs();
    }
    for (atom, &w) in p.atoms().iter().zip(p.weights()) {
        if q.index_of(atom).is_none() {
            total += w;
        }
    }
    0.5 * total
}

/// Feature map `ψ : R^m → R^d` defining the moment constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum FeatureMap {
    /// Selects coordinates (zero-based indices) of the atom.
    Coordinate { indices: Vec<usize> },
    /// `ψ(ξ) = ξ`.
    Identity,
    /// `ψ(ξ) = Aξ + b` with `A` given row-major as `d` rows of length `m`.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// `ψ(ξ_i) = log(q_i / p_i)` over the shared atom index `atoms`.
    LogRatio {
        atoms: Vec<Vec<f64>>,
        numerator: Vec<f64>,
        denominator: Vec<f64>,
    },
    /// Explicit table `atom → R^d`.
    Tabular {
        atoms: Vec<Vec<f64>>,
        values: Vec<Vec<f64>>,
    },
}

impl FeatureMap {
    /// Log density ratio `log dQ/dP` over the atoms of `base`.
    ///
    /// Fails unless `target ≪ base`.
    pub fn log_ratio(target: &DiscreteDistribution, base: &DiscreteDistribution) -> Result<Self> {
        for (atom, _) in target.support() {
            if base.weight_of(atom) <= 0.0 {
                return Err(invalid(format!(
                    "log-ratio features need the numerator absolutely continuous w.r.t. the denominator; \
                     atom {atom:?} has zero base mass"
                )));
            }
        }
        let atoms: Vec<Vec<f64>> = base.atoms().to_vec();
        let numerator = atoms.iter().map(|a| target.weight_of(a)).collect();
        Ok(FeatureMap::LogRatio {
            atoms,
            numerator,
            denominator: base.weights().to_vec(),
        })
    }

    /// Output dimension `d` for atoms of dimension `input_dim`.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Coordinate { indices } => indices.len(),
            FeatureMap::Identity => input_dim,
            FeatureMap::Affine { offset, .. } => offset.len(),
            FeatureMap::LogRatio { .. } => 1,
            FeatureMap::Tabular { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn evaluate(&self, atom: &[f64]) -> Result<Vec<f64>> {
        let undefined = |reason: String| MdiError::Evaluation {
            atom: atom.to_vec(),
            reason,
        };
        match self {
            FeatureMap::Coordinate { indices } => indices
                .iter()
                .map(|&j| {
                    atom.get(j)
                        .copied()
                        .ok_or_else(|| undefined(format!("coordinate {j} out of range")))
                })
                .collect(),
            FeatureMap::Identity => Ok(atom.to_vec()),
            FeatureMap::Affine { matrix, offset } => {
                if matrix.len() != offset.len() {
                    return Err(undefined("affine matrix/offset row mismatch".into()));
                }
                matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, b)| {
                        if row.len() != atom.len() {
                            Err(undefined(format!(
                                "affine row has {} columns, atom has {}",
                                row.len(),
                                atom.len()
                            )))
                        } else {
                            Ok(dot(row, atom) + b)
                        }
                    })
                    .collect()
            }
            FeatureMap::LogRatio {
                atoms,
                numerator,
                denominator,
            } => {
                let i = find_atom(atoms, atom)
                    .ok_or_else(|| undefined("atom not in the log-ratio index".into()))?;
                let (q, p) = (numerator[i], denominator[i]);
                if p <= 0.0 {
                    return Err(undefined("denominator mass is zero".into()));
                }
                if q <= 0.0 {
                    return Err(undefined("numerator mass is zero, log ratio is -inf".into()));
                }
                Ok(vec![(q / p).ln()])
            }
            FeatureMap::Tabular { atoms, values } => {
                let i = find_atom(atoms, atom)
                    .ok_or_else(|| undefined("atom not in the feature table".into()))?;
                Ok(values[i].clone())
            }
        }
    }

    /// Feature vectors of every atom of `dist`, in atom order.
    pub fn evaluate_all(&self, dist: &DiscreteDistribution) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<Vec<f64>> = dist
            .atoms()
            .iter()
            .map(|a| self.evaluate(a))
            .collect::<Result<_>>()?;
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(invalid("feature map produced inconsistent output dimensions"));
        }
        Ok(rows)
    }
}

/// `E_Q[ψ(ξ)] = Σ_i w_i ψ(ξ_i)`.
pub fn moment(dist: &DiscreteDistribution, features: &FeatureMap) -> Result<Vec<f64>> {
    let rows = features.evaluate_all(dist)?;
    Ok(weighted_mean(dist.weights(), &rows))
}

pub(crate) fn weighted_mean(weights: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for (w, row) in weights.iter().zip(rows) {
        if *w > 0.0 {
            for (mj, x) in m.iter_mut().zip(row) {
                *mj += w * x;
            }
        }
    }
    m
}

/// Compact convex set `E ⊂ R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMomentSet", into = "RawMomentSet")]
pub enum MomentSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Singleton { point: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant")]
enum RawMomentSet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Singleton { point: Vec<f64> },
}

impl TryFrom<RawMomentSet> for MomentSet {
    type Error = MdiError;
    fn try_from(raw: RawMomentSet) -> Result<Self> {
        match raw {
            RawMomentSet::Box { lower, upper } => MomentSet::new_box(lower, upper),
            RawMomentSet::Ball { center, radius } => MomentSet::new_ball(center, radius),
            RawMomentSet::Singleton { point } => MomentSet::new_singleton(point),
        }
    }
}

impl From<MomentSet> for RawMomentSet {
    fn from(s: MomentSet) -> Self {
        match s {
            MomentSet::Box { lower, upper } => RawMomentSet::Box { lower, upper },
            MomentSet::Ball { center, radius } => RawMomentSet::Ball { center, radius },
            MomentSet::Singleton { point } => RawMomentSet::Singleton { point },
        }
    }
}

fn check_point(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        return Err(invalid(format!("{what} must have dimension >= 1")));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(invalid(format!("{what} must be finite")));
    }
    Ok(())
}

impl MomentSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_point(&lower, "box lower bound")?;
        check_point(&upper, "box upper bound")?;
        if lower.len() != upper.len() {
            return Err(invalid("box bounds have different dimensions"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(invalid("box needs lower <= upper componentwise"));
        }
        Ok(MomentSet::Box { lower, upper })
    }

    /// Box `[c - h, c + h]` with the same half-width in every coordinate.
    pub fn centered_box(center: &[f64], half_width: f64) -> Result<Self> {
        if !(half_width >= 0.0) {
            return Err(invalid("box half-width must be nonnegative"));
        }
        Self::new_box(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        check_point(&center, "ball center")?;
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(invalid("ball radius must be finite and nonnegative"));
        }
        Ok(MomentSet::Ball { center, radius })
    }

    pub fn new_singleton(point: Vec<f64>) -> Result<Self> {
        check_point(&point, "singleton point")?;
        Ok(MomentSet::Singleton { point })
    }

    pub fn dim(&self) -> usize {
        match self {
            MomentSet::Box { lower, .. } => lower.len(),
            MomentSet::Ball { center, .. } => center.len(),
            MomentSet::Singleton { point } => point.len(),
        }
    }

    /// Euclidean projection `argmin_{y ∈ E} ‖y - x‖₂`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MomentSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            MomentSet::Ball { center, radius } => {
                let r = dist2(x, center);
                if r <= *radius {
                    x.to_vec()
                } else {
                    let s = radius / r;
                    center
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c + s * (v - c))
                        .collect()
                }
            }
            MomentSet::Singleton { point } => point.clone(),
        }
    }

    /// Support function `σ_E(z) = max_{y ∈ E} yᵀz`.
    pub fn support(&self, z: &[f64]) -> f64 {
        match self {
            MomentSet::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(zj, (l, u))| (zj * l).max(zj * u))
                .sum(),
            MomentSet::Ball { center, radius } => dot(center, z) + radius * norm2(z),
            MomentSet::Singleton { point } => dot(point, z),
        }
    }

    /// A maximizer of `yᵀz` over `E` (a subgradient of `σ_E` at `z`).
    pub fn support_point(&self, z: &[f64]) -> Vec<f64> {
        match self {
            MomentSet::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(zj, (l, u))| if *zj >= 0.0 { *u } else { *l })
                .collect(),
            MomentSet::Ball { center, radius } => {
                let n = norm2(z);
                if n == 0.0 {
                    center.clone()
                } else {
                    center
                        .iter()
                        .zip(z)
                        .map(|(c, zj)| c + radius * zj / n)
                        .collect()
                }
            }
            MomentSet::Singleton { point } => point.clone(),
        }
    }

    /// Moreau-smoothed support function `max_{y ∈ E} yᵀz - (η/2)‖y‖²`,
    /// attained at `y = π_E(z/η)`.
    pub fn smoothed_support(&self, z: &[f64], eta: f64) -> f64 {
        let scaled: Vec<f64> = z.iter().map(|v| v / eta).collect();
        let y = self.project(&scaled);
        dot(&y, z) - 0.5 * eta * dot(&y, &y)
    }

    /// Euclidean distance from `x` to `E`.
    pub fn distance(&self, x: &[f64]) -> f64 {
        dist2(x, &self.project(x))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) <= MEMBERSHIP_TOL
    }

    /// Signed margin of `x`: the distance to the complement of `E` when
    /// `x ∈ E`, and a nonpositive number otherwise.
    pub fn interior_margin(&self, x: &[f64]) -> f64 {
        match self {
            MomentSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| (v - l).min(u - v))
                .fold(f64::INFINITY, f64::min),
            MomentSet::Ball { center, radius } => radius - dist2(x, center),
            MomentSet::Singleton { .. } => -self.distance(x),
        }
    }

    /// Box midpoint, ball center, or the singleton point.
    pub fn center(&self) -> Vec<f64> {
        match self {
            MomentSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.5 * (l + u))
                .collect(),
            MomentSet::Ball { center, .. } => center.clone(),
            MomentSet::Singleton { point } => point.clone(),
        }
    }

    /// `max_{y ∈ E} ‖y‖₂`.
    pub fn max_norm(&self) -> f64 {
        match self {
            MomentSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (l * l).max(u * u))
                .sum::<f64>()
                .sqrt(),
            MomentSet::Ball { center, radius } => norm2(center) + radius,
            MomentSet::Singleton { point } => norm2(point),
        }
    }

    pub fn has_interior(&self) -> bool {
        match self {
            MomentSet::Box { lower, upper } => lower.iter().zip(upper).all(|(l, u)| u > l),
            MomentSet::Ball { radius, .. } => *radius > 0.0,
            MomentSet::Singleton { .. } => false,
        }
    }

    /// Grows flat directions by `tau` so the set gains an interior:
    /// a singleton becomes the box `m₀ ± τ`, zero-width box coordinates are
    /// widened by `τ`, a zero-radius ball gets radius `τ`.
    pub fn inflate(&self, tau: f64) -> MomentSet {
        match self {
            MomentSet::Singleton { point } => MomentSet::Box {
                lower: point.iter().map(|p| p - tau).collect(),
                upper: point.iter().map(|p| p + tau).collect(),
            },
            MomentSet::Box { lower, upper } => {
                let (mut lo, mut hi) = (lower.clone(), upper.clone());
                for (l, u) in lo.iter_mut().zip(hi.iter_mut()) {
                    if *u <= *l {
                        *l -= tau;
                        *u += tau;
                    }
                }
                MomentSet::Box {
                    lower: lo,
                    upper: hi,
                }
            }
            MomentSet::Ball { center, radius } => MomentSet::Ball {
                center: center.clone(),
                radius: if *radius > 0.0 { *radius } else { tau },
            },
        }
    }

    /// Reference point size used for the default inflation width.
    pub(crate) fn reference_scale(&self) -> f64 {
        crate::vector::norm_inf(&self.center())
    }
}
