//! Data for the classification experiments: a synthetic covariate-shift
//! generator and a loader for the heart-disease CSV with biased subsampling.
//!
//! Synthetic features are uniform on `[0,1]^{m-1}` for training; test
//! features have density `p*(x) = (2/(m-1)) Σ_j x_j`. Labels follow the
//! threshold rule `y = +1` iff the feature mean exceeds `½` (ties go to `-1`).

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{empirical_from_samples, moment, FeatureMap, MomentSet};
use crate::error::{invalid, MdiError, Result};

/// A feature vector with a `±1` label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if y != 1.0 && y != -1.0 {
            return Err(invalid(format!("label must be ±1, got {y}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(Self { x, y })
    }

    /// `ξ = (x, y)` as used by the logistic loss.
    pub fn atom(&self) -> Vec<f64> {
        let mut a = self.x.clone();
        a.push(self.y);
        a
    }
}

/// Points `(x, y)` of a sample.
pub fn atoms(samples: &[LabeledSample]) -> Vec<Vec<f64>> {
    samples.iter().map(LabeledSample::atom).collect()
}

/// `+1` if the mean of `x` exceeds `½`, else `-1`.
pub fn threshold_label(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    if mean > 0.5 {
        1.0
    } else {
        -1.0
    }
}

fn check_dim(m: usize) -> Result<()> {
    if m < 2 {
        return Err(invalid("dimension m must be at least 2"));
    }
    Ok(())
}

/// Training sample: features uniform on the hypercube.
pub fn synth_train(m: usize, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    synth_train_with(m, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn synth_train_with(m: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<LabeledSample>> {
    check_dim(m)?;
    Ok((0..n)
        .map(|_| {
            let x: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
            let y = threshold_label(&x);
            LabeledSample { x, y }
        })
        .collect())
}

/// Test sample from `p*`, drawn through its mixture form: pick a coordinate
/// uniformly, give it density `2t` (inverse CDF `√U`), keep the others uniform.
pub fn synth_test(m: usize, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    synth_test_with(m, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn synth_test_with(m: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<LabeledSample>> {
    check_dim(m)?;
    Ok((0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
            let j = rng.random_range(0..m - 1);
            x[j] = rng.random::<f64>().sqrt();
            let y = threshold_label(&x);
            LabeledSample { x, y }
        })
        .collect())
}

/// Density ratio `p*(x)/p(x) = (2/(m-1)) Σ_j x_j` used as importance weight.
pub fn covshift_density_ratio(x: &[f64]) -> f64 {
    2.0 / x.len() as f64 * x.iter().sum::<f64>()
}

/// Per-coordinate feature mean under `p*`: `(m-2)/(2(m-1)) + 2/(3(m-1))`.
pub fn covshift_feature_mean(m: usize) -> f64 {
    let k = (m - 1) as f64;
    (k - 1.0) / (2.0 * k) + 2.0 / (3.0 * k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovshiftMoments {
    pub set: MomentSet,
    pub feature_mean: f64,
    /// Monte Carlo estimate of `E_{P*}[y]`.
    pub label_mean: f64,
    pub label_std_error: f64,
}

/// Box of half-width `slack` around `(μ*, …, μ*, ȳ*)` for `ψ(x, y) = (x, y)`.
pub fn covshift_moment_set(
    m: usize,
    slack: f64,
    mc_budget: usize,
    seed: u64,
) -> Result<CovshiftMoments> {
    check_dim(m)?;
    if !(slack > 0.0) || !slack.is_finite() {
        return Err(invalid("slack must be positive"));
    }
    if mc_budget < 2 {
        return Err(invalid("Monte Carlo budget must be at least 2"));
    }
    let draws = synth_test(m, mc_budget, seed)?;
    let n = draws.len() as f64;
    let label_mean = draws.iter().map(|s| s.y).sum::<f64>() / n;
    let var = draws.iter().map(|s| (s.y - label_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let label_std_error = (var / n).sqrt();
    if !(label_mean > 0.0) {
        return Err(MdiError::Config(format!(
            "estimated test label mean {label_mean} is not positive; increase the budget"
        )));
    }
    let mu = covshift_feature_mean(m);
    let mut center = vec![mu; m - 1];
    center.push(label_mean);
    let set = MomentSet::centered_box(&center, slack)?;
    if set.contains(&vec![0.0; m]) {
        return Err(MdiError::Config(format!(
            "slack {slack} is so large that the moment box contains the origin"
        )));
    }
    Ok(CovshiftMoments {
        set,
        feature_mean: mu,
        label_mean,
        label_std_error,
    })
}

/// Heart-disease records: standardized features plus the raw columns that
/// drive the biased subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartData {
    pub feature_names: Vec<String>,
    pub samples: Vec<LabeledSample>,
    pub age: Vec<f64>,
    pub male: Vec<bool>,
}

pub fn load_heart_csv(path: impl AsRef<Path>) -> Result<HeartData> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        MdiError::Config(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    load_heart_reader(file)
}

/// Reads a CSV with header; `age`, `sex` (1 = male) and `target` (0/1 or ±1)
/// are required; `age` and `sex` drive the biased subsample. All remaining
/// columns become features in file order, standardized to zero mean and unit
/// variance over the file.
pub fn load_heart_reader(reader: impl Read) -> Result<HeartData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("missing required column `{name}`")))
    };
    let (age_col, sex_col, target_col) = (col("age")?, col("sex")?, col("target")?);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != target_col && j != age_col && j != sex_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(invalid("heart data has no feature columns besides age, sex and target"));
    }

    let mut raw: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut age = Vec::new();
    let mut male = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |j: usize| -> Result<f64> {
            let field = record.get(j).unwrap_or("");
            field.parse::<f64>().map_err(|_| {
                invalid(format!(
                    "row {}: column `{}` has non-numeric value `{field}`",
                    line + 2,
                    headers[j]
                ))
            })
        };
        let t = parse(target_col)?;
        let y = match t {
            t if t == 1.0 => 1.0,
            t if t == 0.0 || t == -1.0 => -1.0,
            other => {
                return Err(invalid(format!(
                    "row {}: target must be binary, got {other}",
                    line + 2
                )))
            }
        };
        raw.push(feature_cols.iter().map(|&j| parse(j)).collect::<Result<_>>()?);
        labels.push(y);
        age.push(parse(age_col)?);
        male.push(parse(sex_col)? == 1.0);
    }
    if raw.len() < 2 {
        return Err(invalid("heart data needs at least two rows"));
    }
    let (n, d) = (raw.len() as f64, feature_cols.len());
    for j in 0..d {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in raw.iter_mut() {
            r[j] = if sd > 0.0 { (r[j] - mean) / sd } else { 0.0 };
        }
    }
    let samples = raw
        .into_iter()
        .zip(labels)
        .map(|(x, y)| LabeledSample { x, y })
        .collect();
    Ok(HeartData {
        feature_names: feature_cols.iter().map(|&j| headers[j].clone()).collect(),
        samples,
        age,
        male,
    })
}

/// Row indices of the oldest 20% (rounded up) of the male records, oldest first.
pub fn biased_pool(data: &HeartData) -> Vec<usize> {
    let mut males: Vec<usize> = (0..data.samples.len()).filter(|&i| data.male[i]).collect();
    males.sort_by(|&a, &b| data.age[b].total_cmp(&data.age[a]).then(a.cmp(&b)));
    let keep = males.len().div_ceil(5);
    males.truncate(keep);
    males
}

/// `N` records drawn without replacement from [`biased_pool`].
pub fn biased_subsample(data: &HeartData, n: usize, seed: u64) -> Result<Vec<LabeledSample>> {
    biased_subsample_with(data, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn biased_subsample_with(
    data: &HeartData,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledSample>> {
    let pool = biased_pool(data);
    if pool.len() < n {
        return Err(invalid(format!(
            "only {} eligible rows for a subsample of size {n}",
            pool.len()
        )));
    }
    Ok(index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|k| data.samples[pool[k]].clone())
        .collect())
}

/// Box of half-width `Δm` around the mean of `(x, y)` over `samples`.
pub fn empirical_mean_box(samples: &[LabeledSample], half_width: f64) -> Result<MomentSet> {
    if samples.is_empty() {
        return Err(invalid("empirical mean of an empty sample"));
    }
    if !(half_width > 0.0) {
        return Err(invalid("half-width Δm must be positive"));
    }
    let dist = empirical_from_samples(&atoms(samples))?;
    let center = moment(&dist, &FeatureMap::Identity)?;
    MomentSet::centered_box(&center, half_width)
}

/// Writes `x1..x{m-1}, y` with a header, 12 significant digits.
pub fn write_samples_csv(out: impl Write, samples: &[LabeledSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = samples.first() {
        let mut header: Vec<String> = (1..=first.x.len()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
    }
    for s in samples {
        let mut row: Vec<String> = s.x.iter().map(|v| crate::format::num(*v)).collect();
        row.push(crate::format::num(s.y));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    pub(crate) const FIXTURE: &str = include_str!("../tests/data/heart_fixture.csv");

    #[test]
    fn training_labels_and_moments() {
        assert_eq!(threshold_label(&[0.6, 0.9, 0.51]), 1.0);
        assert_eq!(threshold_label(&[0.5, 0.5]), -1.0);
        let s = synth_train(6, 100_000, 1).unwrap();
        for j in 0..5 {
            let mean = s.iter().map(|p| p.x[j]).sum::<f64>() / s.len() as f64;
            assert!((mean - 0.5).abs() < 0.01);
        }
        let two = synth_train(2, 100_000, 2).unwrap();
        let pos = two.iter().filter(|p| p.y > 0.0).count() as f64 / two.len() as f64;
        assert!((pos - 0.5).abs() < 0.02);
        assert!(s.iter().all(|p| p.y == threshold_label(&p.x)));
    }

    #[test]
    fn test_sampler_moments() {
        assert!((covshift_feature_mean(6) - 8.0 / 15.0).abs() < 1e-15);
        let s = synth_test(6, 100_000, 3).unwrap();
        for j in 0..5 {
            let mean = s.iter().map(|p| p.x[j]).sum::<f64>() / s.len() as f64;
            assert!((mean - 8.0 / 15.0).abs() < 0.01);
        }
        let one = synth_test(2, 100_000, 4).unwrap();
        let mean = one.iter().map(|p| p.x[0]).sum::<f64>() / one.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01);
        assert_eq!(covshift_density_ratio(&[0.5, 1.0]), 1.5);
        assert!(synth_test(1, 10, 0).is_err());
    }

    #[test]
    fn test_sampler_matches_density_chi_square() {
        // m = 3: density p*(x₁, x₂) = x₁ + x₂ on the unit square
        let n = 1_000_000;
        let s = synth_test(3, n, 5).unwrap();
        let bins = 10;
        let mut counts = vec![0.0; bins * bins];
        for p in &s {
            let i = ((p.x[0] * bins as f64) as usize).min(bins - 1);
            let j = ((p.x[1] * bins as f64) as usize).min(bins - 1);
            counts[i * bins + j] += 1.0;
        }
        let h = 1.0 / bins as f64;
        let mut stat = 0.0;
        for i in 0..bins {
            for j in 0..bins {
                // ∫∫ (x + y) over the cell
                let p = h * h * ((i as f64 + 0.5) * h + (j as f64 + 0.5) * h);
                let e = p * n as f64;
                stat += (counts[i * bins + j] - e).powi(2) / e;
            }
        }
        let limit = ChiSquared::new((bins * bins - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < limit, "chi-square {stat} >= {limit}");
    }

    #[test]
    fn covshift_set_geometry() {
        let c = covshift_moment_set(6, 0.05, 100_000, 7).unwrap();
        assert!(c.label_mean > 0.0 && c.label_std_error < 0.01);
        let center = c.set.center();
        assert!(center[..5].iter().all(|v| (v - 8.0 / 15.0).abs() < 1e-15));
        assert!((center[5] - c.label_mean).abs() < 1e-15);
        assert!(!c.set.contains(&[0.0; 6]));
        // the training moment (½, …, ½, 0) is excluded
        let mut train = vec![0.5; 5];
        train.push(0.0);
        assert!(!c.set.contains(&train));
        assert!(matches!(
            covshift_moment_set(6, 5.0, 1000, 7),
            Err(MdiError::Config(_))
        ));
    }

    #[test]
    fn heart_loader_standardizes() {
        let data = load_heart_reader(FIXTURE.as_bytes()).unwrap();
        assert_eq!(data.samples.len(), 30);
        assert_eq!(data.feature_names, vec!["cp", "trestbps", "chol"]);
        let d = data.samples[0].x.len();
        for j in 0..d {
            let mean = data.samples.iter().map(|s| s.x[j]).sum::<f64>() / 30.0;
            assert!(mean.abs() < 1e-10);
        }
        assert!(data.samples.iter().all(|s| s.y == 1.0 || s.y == -1.0));
    }

    #[test]
    fn heart_loader_errors() {
        assert!(load_heart_reader("age,sex\n1,2\n".as_bytes()).is_err());
        assert!(load_heart_reader("age,sex,target\n40,1,2\n50,0,1\n".as_bytes()).is_err());
        assert!(load_heart_reader("age,sex,target\n40,1,x\n50,0,1\n".as_bytes()).is_err());
        assert!(matches!(load_heart_csv("/nonexistent/heart.csv"), Err(MdiError::Config(_))));
    }

    #[test]
    fn ten_males_keep_two_oldest() {
        let mut csv = String::from("age,sex,chol,target\n");
        for age in 30..40 {
            csv.push_str(&format!("{age},1,{},{}\n", 200 + age, age % 2));
        }
        csv.push_str("80,0,250,1\n");
        let data = load_heart_reader(csv.as_bytes()).unwrap();
        let pool = biased_pool(&data);
        let ages: Vec<f64> = pool.iter().map(|&i| data.age[i]).collect();
        assert_eq!(ages, vec![39.0, 38.0]);
    }

    #[test]
    fn biased_subsample_properties() {
        let data = load_heart_reader(FIXTURE.as_bytes()).unwrap();
        let pool = biased_pool(&data);
        let a = biased_subsample(&data, 3, 11).unwrap();
        let b = biased_subsample(&data, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let pooled: Vec<&LabeledSample> = pool.iter().map(|&i| &data.samples[i]).collect();
        assert!(a.iter().all(|s| pooled.contains(&s)));
        assert!(biased_subsample(&data, pool.len() + 1, 0).is_err());
    }

    #[test]
    fn mean_box_is_centered() {
        let data = load_heart_reader(FIXTURE.as_bytes()).unwrap();
        let set = empirical_mean_box(&data.samples, 1e-3).unwrap();
        let dist = empirical_from_samples(&atoms(&data.samples)).unwrap();
        let m = moment(&dist, &FeatureMap::Identity).unwrap();
        assert!(set.center().iter().zip(&m).all(|(a, b)| (a - b).abs() < 1e-15));
        let huge = empirical_mean_box(&data.samples, 1e9).unwrap();
        assert!(huge.contains(&m));
        assert!(empirical_mean_box(&[], 1e-3).is_err());
    }

    #[test]
    fn samples_csv_round_trip() {
        let s = synth_train(3, 4, 0).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
