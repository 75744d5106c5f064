//! End-to-end runs of the library: data generation → I-projection → robust
//! training, and off-policy evaluation on the inventory problem.

use mdi_dro::datasets::{atoms, covshift_moment_set, synth_test, synth_train};
use mdi_dro::mdp::sample_from_measure;
use mdi_dro::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn covariate_shift_pipeline_trains_a_certified_classifier() {
    let m = 4;
    let train = atoms(&synth_train(m, 60, 1).unwrap());
    let test = DiscreteDistribution::uniform(atoms(&synth_test(m, 5000, 2).unwrap())).unwrap();
    let moments = covshift_moment_set(m, 0.02, 200_000, 3).unwrap();
    let loss = LossModel::Logistic {
        theta_box: ParamBox::symmetric(m - 1, 5.0).unwrap(),
    };
    let result = mdi_dro_pipeline(
        &train,
        &FeatureMap::Identity,
        &moments.set,
        &loss,
        &DroConfig::with_radius(1e-3),
        1e-3,
    )
    .unwrap();
    assert!(result.converged);
    let p = &result.projection;
    assert!(p.feasibility_gap <= p.certified_feasibility_bound);
    assert!(p.certified_optimality_bound.is_finite());

    // J* bounds the risk under the projection, which the KL ball contains
    let projected_risk = risk(&result.theta, &p.projection, &loss);
    assert!(result.value >= projected_risk - 1e-6, "{} < {projected_risk}", result.value);

    // evaluating the trained θ reproduces J*
    let scen = ScenarioSet::from_support(&p.projection, &FeatureMap::Identity).unwrap();
    let eval = worst_case_risk(
        &result.theta,
        &p.projection,
        &moments.set,
        &scen,
        &DroConfig::with_radius(1e-3),
        &loss,
    )
    .unwrap();
    assert!((eval.value - result.value).abs() < 1e-5 * result.value.abs().max(1.0));

    // and the classifier is better than chance on the shifted test set
    let test_risk = risk(&result.theta, &test, &loss);
    assert!(test_risk < 2f64.ln(), "test risk {test_risk}");
}

#[test]
fn robust_risk_grows_with_the_radius() {
    let nominal = DiscreteDistribution::from_scalars(&[0.0, 1.0, 2.0, 3.0], &[0.4, 0.3, 0.2, 0.1]).unwrap();
    let set = MomentSet::new_box(vec![0.5], vec![1.5]).unwrap();
    let scen = ScenarioSet::from_support(&nominal, &FeatureMap::Identity).unwrap();
    let loss = LossModel::newsvendor(0.5, 1.0, 0.0, 3.0).unwrap();
    let mut last = risk(&[1.0], &nominal, &loss);
    for r in [1e-3, 1e-2, 0.1, 0.5] {
        let w = worst_case_risk(&[1.0], &nominal, &set, &scen, &DroConfig::with_radius(r), &loss).unwrap();
        assert!(w.value >= last - 1e-7, "r={r}: {} < {last}", w.value);
        last = w.value;
    }
}

#[test]
fn off_policy_estimate_upper_bounds_truth_at_moderate_radius() {
    let params = InventoryParams::default();
    let mdp = inventory_instance(&params).unwrap();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let target = occupation_measure(&mdp, &random_policy(ns, na, 1).unwrap()).unwrap();
    let behavior = occupation_measure(&mdp, &random_policy(ns, na, 2).unwrap()).unwrap();
    let samples = sample_from_measure(&mdp, &behavior, 2000, &mut rng).unwrap();
    let est = mdi_ope_estimate(&samples, &target, &behavior, &OpeConfig::default()).unwrap();
    let truth = target.mean_cost();
    assert!(est.value >= truth, "robust {} below truth {truth}", est.value);
    assert!((est.kl_target - target.relative_entropy(&behavior)).abs() < 1e-12);
    let ips = ips_estimate(&samples, &target, &behavior).unwrap();
    assert!((ips - truth).abs() < 0.15, "ips {ips} vs truth {truth}");
}

#[test]
fn readme_example_runs() -> Result<()> {
    let samples = vec![vec![0.0], vec![1.0], vec![1.0], vec![2.0], vec![3.0]];
    let set = MomentSet::new_box(vec![0.6], vec![0.75])?;
    let loss = LossModel::newsvendor(0.5, 1.0, 0.0, 3.0)?;
    let result = mdi_dro_pipeline(
        &samples,
        &FeatureMap::Identity,
        &set,
        &loss,
        &DroConfig::with_radius(0.05),
        1e-4,
    )?;
    assert!(result.converged);
    assert!((0.0..=3.0).contains(&result.theta[0]));
    Ok(())
}
