use proptest::prelude::*;

use modeshift::data::{apply_eligibility_filters, parse_dataset, write_dataset, Region};
use modeshift::diagnostics::{overlap_report, standardized_mean_difference};
use modeshift::effect::{EffectEstimate, Estimand};
use modeshift::impact::{attribution_summary, co2_savings_per_switcher};
use modeshift::impute::pool_rubin;
use modeshift::logit::{fit_logit, LogitOptions};
use modeshift::psm::{match_on_score, trim_common_support};
use modeshift::stats::welch_test;
use modeshift::{Dataset, FilterConfig, GuestRecord};

fn opt<T: std::fmt::Debug + Clone>(s: impl Strategy<Value = T>) -> impl Strategy<Value = Option<T>> {
    prop_oneof![1 => Just(None), 4 => s.prop_map(Some)]
}

fn record() -> impl Strategy<Value = GuestRecord> {
    let flags = proptest::collection::vec(any::<bool>(), 13);
    let nums = (
        0.0..=1.0f64,
        1u32..10,
        0.0..600.0f64,
        opt(-60.0..240.0f64),
        opt(18.0..95.0f64),
        opt(any::<bool>()),
        opt(any::<bool>()),
        opt(any::<bool>()),
    );
    (flags, nums).prop_map(|(f, (ratio, stay, dist, tt, age, car, woman, hi))| {
        let mut r = GuestRecord::new("");
        r.informed = f[0];
        r.used_pt = f[1];
        r.aware_at_booking = f[11];
        r.used_offer = f[2] && (r.informed || r.aware_at_booking);
        r.holiday_flat = f[3];
        r.train_access = f[4];
        r.alone = f[5];
        r.family = f[6];
        r.purpose_nature = f[7];
        r.swiss_residence = f[8];
        r.half_fare = f[9];
        r.ga_travelcard = f[10];
        r.adjusted_stay = f[12];
        r.hotel_ratio_informed = ratio;
        r.length_of_stay = stay;
        r.distance_car_km = dist;
        r.tt_diff_min = tt;
        r.age = age;
        r.car_owner = car;
        r.woman = woman;
        r.high_income = hi;
        r.region = if f[0] || !f[3] {
            Region::AppenzellInnerrhoden
        } else {
            Region::AusserrhodenToggenburg
        };
        r
    })
}

fn dataset(max: usize) -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(record(), 1..max).prop_map(|rs| {
        let rs = rs
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.id = format!("g{i:04}");
                r
            })
            .collect();
        Dataset::new(rs, "generated").unwrap()
    })
}

/// Records with both groups present and strictly interior scores.
fn scored(max: usize) -> impl Strategy<Value = (Dataset, Vec<f64>)> {
    dataset(max)
        .prop_filter("needs both groups", |d| {
            let (t, c) = d.group_counts();
            t > 0 && c > 0
        })
        .prop_flat_map(|d| {
            let n = d.len();
            (Just(d), proptest::collection::vec(0.01..0.99f64, n))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filtering_is_idempotent_and_conserves_counts(d in dataset(60), nights in 1u32..6, max_km in 50.0..500.0f64) {
        let cfg = FilterConfig { min_nights: nights, max_distance_km: max_km, ..Default::default() };
        let once = apply_eligibility_filters(&d, &cfg).unwrap();
        let twice = apply_eligibility_filters(&once, &cfg).unwrap();
        prop_assert_eq!(once.records(), twice.records());
        let log = &once.filter_log;
        prop_assert_eq!(log.input_count, d.len());
        prop_assert_eq!(log.input_count, once.len() + log.total_dropped());
        prop_assert_eq!(log.counts.iter().map(|c| c.dropped).sum::<usize>(), log.dropped.len());
    }

    #[test]
    fn csv_round_trip(d in dataset(30)) {
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = parse_dataset(buf.as_slice()).unwrap();
        prop_assert_eq!(back.records(), d.records());
    }

    #[test]
    fn logit_is_affine_invariant(
        xs in proptest::collection::vec((-2.0..2.0f64, -1.0..1.0f64), 30..60),
        labels in proptest::collection::vec(any::<bool>(), 60),
        scale in 0.2..5.0f64,
        shift in -10.0..10.0f64,
    ) {
        let n = xs.len();
        let labels = &labels[..n];
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let names = vec!["a".to_string(), "b".to_string()];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a, b]).collect();
        let moved: Vec<Vec<f64>> = xs.iter().map(|&(a, b)| vec![a * scale + shift, b]).collect();
        let opts = LogitOptions::default();
        if let (Ok(m1), Ok(m2)) = (fit_logit(&rows, labels, &names, &opts), fit_logit(&moved, labels, &names, &opts)) {
            for (p, q) in m1.fitted.iter().zip(&m2.fitted) {
                prop_assert!((p - q).abs() < 1e-6);
            }
            prop_assert!((m1.coefficients[1] - m2.coefficients[1] * scale).abs() < 1e-5 * m1.coefficients[1].abs().max(1.0));
            let share = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
            let mean_fit = m1.fitted.iter().sum::<f64>() / n as f64;
            prop_assert!((mean_fit - share).abs() < 1e-8);
        }
    }

    #[test]
    fn matching_ignores_row_order((d, s) in scored(40), rot in 0usize..40) {
        let m = match_on_score(&d, &s).unwrap();
        let n = d.len();
        let k = rot % n;
        let perm: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
        let rs: Vec<GuestRecord> = perm.iter().rev().map(|&i| d.records()[i].clone()).collect();
        let ss: Vec<f64> = perm.iter().rev().map(|&i| s[i]).collect();
        let d2 = Dataset::new(rs, "permuted").unwrap();
        let m2 = match_on_score(&d2, &ss).unwrap();
        prop_assert_eq!(m.estimate.to_bits(), m2.estimate.to_bits());
        for (j, &i) in perm.iter().rev().enumerate() {
            prop_assert_eq!(m.weights[i], m2.weights[j]);
        }
    }

    #[test]
    fn constant_scores_match_difference_in_means((d, _) in scored(50), c in 0.05..0.95f64) {
        let m = match_on_score(&d, &vec![c; d.len()]).unwrap();
        let (mut t, mut nt, mut u, mut nu) = (0.0, 0.0, 0.0, 0.0);
        for r in d.records() {
            let y = r.used_pt as u8 as f64;
            if r.informed { t += y; nt += 1.0 } else { u += y; nu += 1.0 }
        }
        prop_assert!((m.estimate - (t / nt - u / nu)).abs() < 1e-8);
    }

    #[test]
    fn trimming_is_idempotent((d, s) in scored(40)) {
        let once = trim_common_support(&d, &s).unwrap();
        let twice = trim_common_support(&once.dataset, &once.scores).unwrap();
        prop_assert_eq!(once.dataset.records(), twice.dataset.records());
        let max_c = once.max_control_score;
        for (r, &sc) in once.dataset.records().iter().zip(&once.scores) {
            prop_assert!(!r.informed || sc <= max_c);
        }
    }

    #[test]
    fn smd_antisymmetric(mt in -5.0..5.0f64, mc in -5.0..5.0f64, sd in 0.01..3.0f64) {
        let a = standardized_mean_difference(mt, mc, sd).unwrap();
        let b = standardized_mean_difference(mc, mt, sd).unwrap();
        prop_assert!((a + b).abs() < 1e-9);
        prop_assert_eq!(standardized_mean_difference(mt, mt, sd), Some(0.0));
    }

    #[test]
    fn welch_shift_invariant(
        a in proptest::collection::vec(-10.0..10.0f64, 3..20),
        b in proptest::collection::vec(-10.0..10.0f64, 3..20),
        c in -100.0..100.0f64,
    ) {
        if let (Some(w1), Some(w2)) = (
            welch_test(&a, &b),
            welch_test(&a.iter().map(|x| x + c).collect::<Vec<_>>(), &b.iter().map(|x| x + c).collect::<Vec<_>>()),
        ) {
            prop_assert!((0.0..=1.0).contains(&w1.p_value));
            prop_assert!((w1.p_value - w2.p_value).abs() < 1e-6);
        }
    }

    #[test]
    fn overlap_histogram_counts_everyone(s in proptest::collection::vec((0.0..=1.0f64, any::<bool>()), 1..100), bins in 1usize..30) {
        let (scores, t): (Vec<f64>, Vec<bool>) = s.into_iter().unzip();
        let r = overlap_report(&scores, &t, bins).unwrap();
        prop_assert_eq!(r.bins.iter().map(|b| b.treated + b.control).sum::<usize>(), scores.len());
    }

    #[test]
    fn pooled_se_dominates_within(points in proptest::collection::vec((-1.0..1.0f64, 0.001..0.5f64), 2..10)) {
        let ests: Vec<EffectEstimate> = points.iter().map(|&(v, se)| {
            let mut e = EffectEstimate::new(v, Estimand::Ate, "psm", 10);
            e.standard_error = Some(se);
            e
        }).collect();
        let p = pool_rubin(&ests).unwrap();
        let within = points.iter().map(|(_, s)| s * s).sum::<f64>() / points.len() as f64;
        prop_assert!(p.standard_error.unwrap() >= within.sqrt() - 1e-15);
    }

    #[test]
    fn savings_linear_in_each_input(dc in 0.0..500.0f64, dp in 0.0..500.0f64, ec in 0.0..300.0f64, ep in 0.0..100.0f64, k in 0.0..4.0f64) {
        let base = co2_savings_per_switcher(dc, dp, ec, ep).unwrap();
        let zero_car = co2_savings_per_switcher(0.0, dp, ec, ep).unwrap();
        let scaled = co2_savings_per_switcher(dc * k, dp, ec, ep).unwrap();
        prop_assert!((scaled - (zero_car + k * (base - zero_car))).abs() < 1e-9 * (1.0 + base.abs() * k));
        let scaled = co2_savings_per_switcher(dc, dp, ec, ep * k).unwrap();
        let zero_pt = co2_savings_per_switcher(dc, dp, ec, 0.0).unwrap();
        prop_assert!((scaled - (zero_pt + k * (base - zero_pt))).abs() < 1e-9 * (1.0 + base.abs() * k));
    }

    #[test]
    fn attribution_scales(ate in -0.5..0.5f64, up in 0.01..1.0f64, k in 0.1..3.0f64) {
        let a = attribution_summary(ate, up, None, 1620.0).unwrap().attributed_share;
        let b = attribution_summary(ate * k, up, None, 1620.0).unwrap().attributed_share;
        prop_assert!((b - k * a).abs() < 1e-12);
        let shrink = 1.0 + k;
        let c = attribution_summary(ate, up / shrink, None, 1620.0).unwrap().attributed_share;
        prop_assert!((c - shrink * a).abs() < 1e-9);
    }
}
