//! Simulation checks against known ground truth.

use modeshift::diagnostics::{random_subgroup, subsample_stability_check};
use modeshift::forest::ForestConfig;
use modeshift::impute::impute_chained;
use modeshift::stats::mean;
use modeshift::synth::{generate_population, true_ate, Confounding, DgpConfig};
use modeshift::{Dataset, Field};

fn group_means(d: &Dataset) -> (f64, f64) {
    let (mut t, mut nt, mut c, mut nc) = (0.0, 0.0, 0.0, 0.0);
    for r in d.records() {
        let y = r.used_pt as u8 as f64;
        if r.informed {
            t += y;
            nt += 1.0;
        } else {
            c += y;
            nc += 1.0;
        }
    }
    (t / nt, c / nc)
}

#[test]
fn calibrated_population_reproduces_outcome_shares() {
    let pop = generate_population(&DgpConfig::calibrated(100_000, 17)).unwrap();
    let (t, c) = group_means(&pop.dataset);
    assert!((t - 0.44).abs() <= 0.02, "informed share {t}");
    assert!((c - 0.22).abs() <= 0.02, "uninformed share {c}");
}

#[test]
fn null_effect_truth_is_zero() {
    let te = true_ate(&DgpConfig::null(10, 3), 1_000_000).unwrap();
    assert!(te.ate.abs() <= 0.005, "{te:?}");
    let mut cfg = DgpConfig::calibrated(10, 3);
    cfg.outcome.treatment_effect = 0.0;
    let te = true_ate(&cfg, 1_000_000).unwrap();
    assert_eq!(te.ate, 0.0);
}

#[test]
fn constant_and_two_group_truths() {
    let te = true_ate(&DgpConfig::calibrated(10, 8), 1_000_000).unwrap();
    assert!((te.ate - 0.15).abs() <= 0.005, "{te:?}");
    let te = true_ate(&DgpConfig::two_group(0.3, Confounding::Mild, 10, 8), 1_000_000).unwrap();
    assert!((te.ate - 0.15).abs() <= 0.005, "{te:?}");
}

#[test]
fn treatment_intercept_does_not_move_truth() {
    let a = DgpConfig::calibrated(10, 4);
    let mut b = a.clone();
    b.treatment.intercept -= 2.0;
    let ta = true_ate(&a, 100_000).unwrap();
    let tb = true_ate(&b, 100_000).unwrap();
    assert_eq!(ta.ate, tb.ate);
    let pa = generate_population(&DgpConfig { n: 5000, ..a }).unwrap();
    let pb = generate_population(&DgpConfig { n: 5000, ..b }).unwrap();
    assert!(pb.dataset.group_counts().0 < pa.dataset.group_counts().0);
}

fn masked(field: Field, n: usize, seed: u64) -> (Dataset, Dataset) {
    let cfg = DgpConfig::calibrated(n, seed);
    let full = generate_population(&cfg).unwrap().dataset;
    let mut m = cfg.clone();
    m.missing_rates = vec![(field, 0.2)];
    (full, generate_population(&m).unwrap().dataset)
}

fn column(d: &Dataset, f: Field) -> Vec<f64> {
    d.records().iter().map(|r| f.value(r).unwrap()).collect()
}

#[test]
fn imputed_age_recovers_mean() {
    let (full, masked) = masked(Field::Age, 4000, 21);
    let done = impute_chained(&masked, 5, 2).unwrap();
    let truth = mean(&column(&full, Field::Age));
    for d in &done {
        let m = mean(&column(d, Field::Age));
        assert!((m - truth).abs() <= 2.0, "imputed mean {m} vs {truth}");
    }
}

#[test]
fn imputed_car_owner_recovers_share() {
    let (full, masked) = masked(Field::CarOwner, 4000, 22);
    let done = impute_chained(&masked, 5, 3).unwrap();
    let truth = mean(&column(&full, Field::CarOwner));
    for d in &done {
        let m = mean(&column(d, Field::CarOwner));
        assert!((m - truth).abs() <= 0.05, "imputed share {m} vs {truth}");
    }
}

#[test]
fn imputation_keeps_observed_cells_and_is_deterministic() {
    let mut cfg = DgpConfig::calibrated(600, 5);
    cfg.missing_rates = vec![(Field::Age, 0.1), (Field::TtDiffMin, 0.1), (Field::Woman, 0.1), (Field::HighIncome, 0.1)];
    let d = generate_population(&cfg).unwrap().dataset;
    let a = impute_chained(&d, 3, 9).unwrap();
    let b = impute_chained(&d, 3, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
    for done in &a {
        for (orig, r) in d.records().iter().zip(done.records()) {
            assert!(r.is_complete());
            for f in Field::ALL {
                if let Some(v) = f.value(orig) {
                    assert_eq!(f.value(r), Some(v), "{f} changed for {}", r.id);
                }
            }
        }
    }
}

#[test]
fn complete_data_imputes_to_copies() {
    let d = generate_population(&DgpConfig::calibrated(200, 1)).unwrap().dataset;
    let out = impute_chained(&d, 4, 0).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out.iter().all(|c| *c == d));
}

#[test]
fn imputation_rejects_mostly_missing_field() {
    let mut cfg = DgpConfig::calibrated(300, 1);
    cfg.missing_rates = vec![(Field::Age, 0.7)];
    let d = generate_population(&cfg).unwrap().dataset;
    assert!(impute_chained(&d, 2, 0).is_err());
    cfg.missing_rates = vec![(Field::Age, 1.0)];
    let d = generate_population(&cfg).unwrap().dataset;
    assert!(impute_chained(&d, 2, 0).is_err());
}

fn small_forest(seed: u64) -> ForestConfig {
    ForestConfig {
        num_trees: 400,
        seed,
        ..Default::default()
    }
}

#[test]
fn stability_identity_subgroup() {
    let d = generate_population(&DgpConfig::calibrated(800, 2)).unwrap().dataset;
    let r = subsample_stability_check(&d, &vec![true; d.len()], &small_forest(1)).unwrap();
    assert!(r.differences.iter().all(|&x| x == 0.0));
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn stability_homogeneous_random_subgroup() {
    let d = generate_population(&DgpConfig::calibrated(4000, 31)).unwrap().dataset;
    let g = random_subgroup(d.len(), 0.7, 31);
    let r = subsample_stability_check(&d, &g, &small_forest(31)).unwrap();
    let mad = mean(&r.differences.iter().map(|x| x.abs()).collect::<Vec<_>>());
    assert!(mad < 0.05, "mean |difference| {mad}");
}

#[test]
fn stability_detects_distinct_subgroup_effect() {
    let d = generate_population(&DgpConfig::two_group(0.3, Confounding::Mild, 4000, 32))
        .unwrap()
        .dataset;
    let women: Vec<bool> = d.records().iter().map(|r| r.woman == Some(true)).collect();
    let r = subsample_stability_check(&d, &women, &small_forest(32)).unwrap();
    assert!(r.p_value < 0.05, "{} {}", r.mean_difference, r.p_value);
    assert!(r.mean_difference < 0.0);
}

#[test]
fn stability_rejects_tiny_subgroup() {
    let d = generate_population(&DgpConfig::calibrated(400, 2)).unwrap().dataset;
    let mut g = vec![false; d.len()];
    g[..6].iter_mut().for_each(|f| *f = true);
    assert!(subsample_stability_check(&d, &g, &small_forest(1)).is_err());
}
