use multicause::bootstrap::BootstrapConfig;
use multicause::factor_model::{LatentClassModel, TreatmentModel};
use multicause::parametric_id::FactorizedTreatmentModel;
use multicause::scenarios::{generate, true_delta, Dataset, ScenarioSpec, TreatmentDistribution};
use multicause::stochastic_intervention::{
    delta_from_factorized, estimate_delta, support_check, SIConfig, WeightMode,
};
use multicause::Error;
use proptest::prelude::*;

fn truth(m: usize) -> LatentClassModel {
    LatentClassModel::new(vec![0.5, 0.5], vec![vec![0.2; m], vec![0.8; m]]).unwrap()
}

fn config(p1: TreatmentDistribution, p0: TreatmentDistribution) -> SIConfig {
    SIConfig {
        bootstrap: BootstrapConfig { replicates: 0, seed: 0 },
        ..SIConfig::new(p1, p0)
    }
}

fn shifted() -> SIConfig {
    config(
        TreatmentDistribution::product(vec![0.7, 0.6, 0.5]).unwrap(),
        TreatmentDistribution::product(vec![0.3, 0.4, 0.5]).unwrap(),
    )
}

/// Hajek arm mean with oracle denominators, written out directly.
fn hajek(ds: &Dataset, model: &LatentClassModel, p: &TreatmentDistribution) -> f64 {
    let z = ds.latent().unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ds.n() {
        let a = ds.pattern(i);
        let w = p.prob(&a) / model.conditional(&a, z[i] as usize);
        num += w * ds.outcome()[i];
        den += w;
    }
    num / den
}

#[test]
fn matches_a_direct_weighted_mean() {
    let ds = generate(&ScenarioSpec::fig1(3, 5_000, 4)).unwrap();
    let cfg = shifted();
    let r = estimate_delta(&ds, &truth(3), &cfg).unwrap();
    let want = hajek(&ds, &truth(3), &cfg.p1) - hajek(&ds, &truth(3), &cfg.p0);
    assert!((r.estimate - want).abs() < 1e-10);
    assert_eq!(r.method, "si");
}

#[test]
fn constant_outcome_gives_zero_when_normalized() {
    let ds = generate(&ScenarioSpec::fig1(3, 2_000, 1)).unwrap();
    let ds = ds.clone().with_outcome(vec![1.0; ds.n()]).unwrap();
    for weights in [WeightMode::Oracle, WeightMode::PosteriorMixture] {
        let cfg = SIConfig { weights, ..shifted() };
        assert!(estimate_delta(&ds, &truth(3), &cfg).unwrap().estimate.abs() < 1e-12);
    }
}

#[test]
fn unnormalized_arms_divide_by_n() {
    let ds = generate(&ScenarioSpec::fig1(3, 2_000, 1)).unwrap();
    let cfg = SIConfig { normalize: false, ..shifted() };
    let z = ds.latent().unwrap();
    let mut want = 0.0;
    for i in 0..ds.n() {
        let a = ds.pattern(i);
        let d = truth(3).conditional(&a, z[i] as usize);
        want += ds.outcome()[i] * (cfg.p1.prob(&a) - cfg.p0.prob(&a)) / d;
    }
    want /= ds.n() as f64;
    let got = estimate_delta(&ds, &truth(3), &cfg).unwrap().estimate;
    assert!((got - want).abs() < 1e-10);
}

#[test]
fn point_masses_average_the_matching_rows() {
    let ds = generate(&ScenarioSpec::fig1(3, 20_000, 5)).unwrap();
    let cfg = config(
        TreatmentDistribution::point_mass(&[1, 1, 1]).unwrap(),
        TreatmentDistribution::point_mass(&[0, 0, 0]).unwrap(),
    );
    let r = estimate_delta(&ds, &truth(3), &cfg).unwrap();
    let want = hajek(&ds, &truth(3), &cfg.p1) - hajek(&ds, &truth(3), &cfg.p0);
    assert!((r.estimate - want).abs() < 1e-10);
    assert!((r.estimate - 6.0).abs() < 0.15, "{}", r.estimate);
    assert!(r.notes.iter().any(|n| n.contains("point mass")));
}

#[test]
fn unbiased_over_replications() {
    let spec = ScenarioSpec::fig1(3, 5_000, 0);
    let cfg = shifted();
    let target = true_delta(&spec, &cfg.p1, &cfg.p0).unwrap();
    let reps = 200;
    let estimates: Vec<f64> = (0..reps)
        .map(|r| {
            let ds = generate(&ScenarioSpec { seed: 1_000 + r, ..spec.clone() }).unwrap();
            estimate_delta(&ds, &truth(3), &cfg).unwrap().estimate
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let z = (mean - target) / (sd / (reps as f64).sqrt());
    assert!(z.abs() < 4.0, "mean {mean}, target {target}, z {z}");
}

#[test]
fn factorized_model_without_edges_matches_latent_class_weights() {
    let spec = ScenarioSpec { n: 5_000, edge_strength: 0.0, ..ScenarioSpec::fig3_default() };
    let ds = generate(&spec).unwrap();
    let fm = FactorizedTreatmentModel {
        prior: spec.prior.clone(),
        a1: spec.cond.iter().map(|r| r[0]).collect(),
        a2: spec.cond.iter().map(|r| [r[1], r[1]]).collect(),
        a3: spec.cond.iter().map(|r| [r[2], r[2]]).collect(),
        a4: spec.cond.iter().map(|r| r[3]).collect(),
        fit: None,
    };
    let lc = truth(4);
    let cfg = config(
        TreatmentDistribution::product(vec![0.9, 0.5, 0.5, 0.5]).unwrap(),
        TreatmentDistribution::product(vec![0.1, 0.5, 0.5, 0.5]).unwrap(),
    );
    let a = delta_from_factorized(&ds, &fm, &cfg).unwrap();
    let b = estimate_delta(&ds, &lc, &cfg).unwrap();
    assert!((a.estimate - b.estimate).abs() < 1e-10);
    assert_eq!(a.method, "si_factorized");
}

#[test]
fn support_violations_are_identification_errors() {
    let model = LatentClassModel::new(vec![0.5, 0.5], vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.5, 0.5]]).unwrap();
    let cfg = config(
        TreatmentDistribution::point_mass(&[1, 0, 0]).unwrap(),
        TreatmentDistribution::point_mass(&[0, 0, 0]).unwrap(),
    );
    let report = support_check(&cfg, &model).unwrap();
    assert!(!report.passed);
    assert_eq!(report.violations[0].pattern, "100");
    let ds = generate(&ScenarioSpec::fig1(3, 200, 1)).unwrap();
    assert!(estimate_delta(&ds, &model, &cfg).unwrap_err().is_identification());
}

#[test]
fn vanishing_denominator_raises_weight_explosion() {
    // Class 0 never takes A_1 = 1, but the data contain such rows in class 0.
    let model = LatentClassModel::new(vec![0.5, 0.5], vec![vec![0.0, 0.5, 0.5], vec![0.5, 0.5, 0.5]]).unwrap();
    let ds = Dataset::binary(&[vec![1, 0, 0], vec![0, 0, 0]], vec![1.0, 2.0])
        .unwrap()
        .with_latent(vec![0.0, 1.0])
        .unwrap();
    let cfg = config(
        TreatmentDistribution::point_mass(&[0, 0, 0]).unwrap(),
        TreatmentDistribution::point_mass(&[0, 1, 0]).unwrap(),
    );
    match estimate_delta(&ds, &model, &cfg) {
        Err(Error::WeightExplosion { row, .. }) => assert_eq!(row, 0),
        other => panic!("expected a weight explosion, got {other:?}"),
    }
}

#[test]
fn truncation_caps_weights() {
    let ds = generate(&ScenarioSpec::fig1(3, 5_000, 2)).unwrap();
    let cfg = SIConfig { truncation: Some(1.5), ..shifted() };
    let r = estimate_delta(&ds, &truth(3), &cfg).unwrap();
    assert!(r.diagnostics["max_weight"] <= 1.5);
    assert!(r.diagnostics["truncated_weights"] > 0.0);
}

#[test]
fn oracle_weights_need_the_latent_column() {
    let ds = generate(&ScenarioSpec::fig1(3, 100, 2)).unwrap();
    let bare = Dataset::binary(&(0..ds.n()).map(|i| ds.pattern(i)).collect::<Vec<_>>(), ds.outcome().to_vec()).unwrap();
    assert!(estimate_delta(&bare, &truth(3), &shifted()).is_err());
    let cfg = SIConfig { weights: WeightMode::PosteriorMixture, ..shifted() };
    assert!(estimate_delta(&bare, &truth(3), &cfg).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_in_the_outcome(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1_000) {
        let ds = generate(&ScenarioSpec::fig1(3, 500, seed)).unwrap();
        let y2: Vec<f64> = (0..ds.n()).map(|i| ds.treatment(i, 0) * 2.0 - (i % 7) as f64).collect();
        let combo: Vec<f64> = ds.outcome().iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let est = |ys: Vec<f64>| estimate_delta(&ds.clone().with_outcome(ys).unwrap(), &truth(3), &shifted()).unwrap().estimate;
        let lhs = est(combo);
        let rhs = a * est(ds.outcome().to_vec()) + b * est(y2);
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn swapping_arms_negates(seed in 0u64..1_000) {
        let ds = generate(&ScenarioSpec::fig1(3, 500, seed)).unwrap();
        let cfg = shifted();
        let back = SIConfig { p1: cfg.p0.clone(), p0: cfg.p1.clone(), ..cfg.clone() };
        let d = estimate_delta(&ds, &truth(3), &cfg).unwrap().estimate;
        prop_assert_eq!(d, -estimate_delta(&ds, &truth(3), &back).unwrap().estimate);
    }
}
