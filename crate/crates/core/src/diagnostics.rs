//! Checks of the testable identifying assumptions: covariate balance,
//! common support of the propensity score, and stability of the forest's
//! CATEs when it is refitted on a subgroup.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

use crate::data::{Dataset, Field};
use crate::error::{Error, Result};
use crate::forest::{fit_causal_forest, ForestConfig};
use crate::rng::{stream, Domain};
use crate::stats::{mean, sample_sd, two_sided_t_p, weighted_moments, welch_from_moments};

/// `100 (mean_t - mean_c) / sd_t`; undefined when the treated sd is zero.
pub fn standardized_mean_difference(mean_t: f64, mean_c: f64, sd_t: f64) -> Option<f64> {
    (sd_t > 0.0 && sd_t.is_finite()).then(|| 100.0 * (mean_t - mean_c) / sd_t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_treated_before: f64,
    pub mean_control_before: f64,
    pub smd_before: Option<f64>,
    pub p_before: f64,
    pub mean_treated_after: Option<f64>,
    pub mean_control_after: Option<f64>,
    pub smd_after: Option<f64>,
    pub p_after: Option<f64>,
    /// Treated-group sd is zero, so the SMD columns are empty.
    pub smd_undefined: bool,
}

struct Side {
    xs: Vec<f64>,
    ws: Vec<f64>,
}

fn split(d: &Dataset, field: Field, weights: Option<&[f64]>) -> (Side, Side) {
    let mut t = Side { xs: vec![], ws: vec![] };
    let mut c = Side { xs: vec![], ws: vec![] };
    for (i, r) in d.records().iter().enumerate() {
        if let Some(v) = field.value(r) {
            let side = if r.informed { &mut t } else { &mut c };
            side.xs.push(v);
            side.ws.push(weights.map_or(1.0, |w| w[i]));
        }
    }
    (t, c)
}

/// Balance of `vars` between informed and uninformed guests. With
/// `weights` (one per record, e.g. [`crate::psm::MatchResult::weights`] or
/// overlap weights) the after-columns describe the reweighted sample. The
/// SMD denominator is the unweighted treated sd in both columns. Missing
/// cells are skipped.
pub fn balance_table(d: &Dataset, weights: Option<&[f64]>, vars: &[Field]) -> Result<Vec<BalanceRow>> {
    if let Some(w) = weights {
        if w.len() != d.len() {
            return Err(Error::Dimension {
                expected: d.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("balance weights must be finite and nonnegative".into()));
        }
    }
    vars.iter()
        .map(|&field| {
            let (t, c) = split(d, field, None);
            if t.xs.is_empty() {
                return Err(Error::EmptyGroup(format!("treated (no observed {field})")));
            }
            if c.xs.is_empty() {
                return Err(Error::EmptyGroup(format!("control (no observed {field})")));
            }
            let mt = weighted_moments(&t.xs, &t.ws).expect("nonempty");
            let mc = weighted_moments(&c.xs, &c.ws).expect("nonempty");
            let sd_t = mt.variance.sqrt();
            let smd_before = standardized_mean_difference(mt.mean, mc.mean, sd_t);
            let p_before = welch_from_moments(mt.mean, mt.variance, mt.n_eff, mc.mean, mc.variance, mc.n_eff).p_value;
            let mut row = BalanceRow {
                covariate: field.name().to_string(),
                mean_treated_before: mt.mean,
                mean_control_before: mc.mean,
                smd_before,
                p_before,
                mean_treated_after: None,
                mean_control_after: None,
                smd_after: None,
                p_after: None,
                smd_undefined: smd_before.is_none(),
            };
            if weights.is_some() {
                let (ta, ca) = split(d, field, weights);
                if let (Some(a), Some(b)) = (weighted_moments(&ta.xs, &ta.ws), weighted_moments(&ca.xs, &ca.ws)) {
                    row.mean_treated_after = Some(a.mean);
                    row.mean_control_after = Some(b.mean);
                    row.smd_after = standardized_mean_difference(a.mean, b.mean, sd_t);
                    row.p_after = Some(welch_from_moments(a.mean, a.variance, a.n_eff, b.mean, b.variance, b.n_eff).p_value);
                }
            }
            Ok(row)
        })
        .collect()
}

pub fn write_balance_csv<W: Write>(rows: &[BalanceRow], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "covariate",
        "mean_treated_before",
        "mean_control_before",
        "smd_before",
        "p_before",
        "mean_treated_after",
        "mean_control_after",
        "smd_after",
        "p_after",
        "smd_undefined",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.covariate.clone(),
            r.mean_treated_before.to_string(),
            r.mean_control_before.to_string(),
            opt(r.smd_before),
            r.p_before.to_string(),
            opt(r.mean_treated_after),
            opt(r.mean_control_after),
            opt(r.smd_after),
            opt(r.p_after),
            r.smd_undefined.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapBin {
    pub lower: f64,
    pub upper: f64,
    pub treated: usize,
    pub control: usize,
    /// Populated by exactly one group.
    pub single_group: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub bins: Vec<OverlapBin>,
    pub treated: Option<GroupRange>,
    pub control: Option<GroupRange>,
    /// Positions of scores equal to 0 or 1.
    pub boundary_scores: Vec<usize>,
}

impl OverlapReport {
    pub fn has_violations(&self) -> bool {
        !self.boundary_scores.is_empty() || self.bins.iter().any(|b| b.single_group)
    }

    pub fn flagged_bins(&self) -> impl Iterator<Item = &OverlapBin> {
        self.bins.iter().filter(|b| b.single_group)
    }
}

/// Equal-width histograms of the scores over [0,1] by group. The last bin is
/// closed on the right.
pub fn overlap_report(scores: &[f64], treated: &[bool], bins: usize) -> Result<OverlapReport> {
    if scores.len() != treated.len() {
        return Err(Error::Dimension {
            expected: treated.len(),
            got: scores.len(),
        });
    }
    if bins == 0 {
        return Err(Error::Config("overlap report needs at least one bin".into()));
    }
    let mut out: Vec<OverlapBin> = (0..bins)
        .map(|k| OverlapBin {
            lower: k as f64 / bins as f64,
            upper: (k + 1) as f64 / bins as f64,
            treated: 0,
            control: 0,
            single_group: false,
        })
        .collect();
    let mut boundary = Vec::new();
    let (mut t_range, mut c_range): (Option<GroupRange>, Option<GroupRange>) = (None, None);
    for (i, (&s, &t)) in scores.iter().zip(treated).enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::ScoreOutOfRange {
                id: i.to_string(),
                score: s,
            });
        }
        if s == 0.0 || s == 1.0 {
            boundary.push(i);
        }
        let k = ((s * bins as f64).floor() as usize).min(bins - 1);
        let range = if t {
            out[k].treated += 1;
            &mut t_range
        } else {
            out[k].control += 1;
            &mut c_range
        };
        let r = range.get_or_insert(GroupRange { min: s, max: s });
        r.min = r.min.min(s);
        r.max = r.max.max(s);
    }
    for b in out.iter_mut() {
        b.single_group = (b.treated == 0) != (b.control == 0);
    }
    Ok(OverlapReport {
        bins: out,
        treated: t_range,
        control: c_range,
        boundary_scores: boundary,
    })
}

fn svg_frame(title: &str, x_label: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n",
            "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n",
            "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>\n",
            "<text x=\"320\" y=\"390\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            "<line x1=\"60\" y1=\"350\" x2=\"600\" y2=\"350\" stroke=\"black\"/>\n",
            "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"350\" stroke=\"black\"/>\n"
        ),
        title, x_label
    );
    s
}

/// Mirrored histogram: informed above the axis midline, uninformed below.
pub fn overlap_svg(report: &OverlapReport) -> String {
    let mut s = svg_frame("Propensity scores by information status", "propensity score");
    let max = report
        .bins
        .iter()
        .map(|b| b.treated.max(b.control))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let width = 540.0 / report.bins.len() as f64;
    let mid = 195.0;
    let _ = writeln!(s, "<line x1=\"60\" y1=\"{mid}\" x2=\"600\" y2=\"{mid}\" stroke=\"gray\"/>");
    for (k, b) in report.bins.iter().enumerate() {
        let x = 60.0 + k as f64 * width;
        let ht = 150.0 * b.treated as f64 / max;
        let hc = 150.0 * b.control as f64 / max;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{width:.2}\" height=\"{ht:.2}\" fill=\"#1f77b4\" stroke=\"white\"/>",
            mid - ht
        );
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{mid}\" width=\"{width:.2}\" height=\"{hc:.2}\" fill=\"#ff7f0e\" stroke=\"white\"/>"
        );
    }
    for (v, x) in [(0.0, 60.0), (0.5, 330.0), (1.0, 600.0)] {
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"366\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v}</text>"
        );
    }
    let _ = writeln!(s, "<text x=\"70\" y=\"55\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#1f77b4\">informed</text>");
    let _ = writeln!(s, "<text x=\"70\" y=\"340\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#ff7f0e\">uninformed</text>");
    s.push_str("</svg>\n");
    s
}

/// Histogram of CATE estimates over their observed range.
pub fn cate_histogram_svg(cates: &[f64], bins: usize) -> String {
    let mut s = svg_frame("Conditional average treatment effects", "CATE");
    let bins = bins.max(1);
    if cates.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let lo = cates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &c in cates {
        let k = (((c - lo) / span * bins as f64).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let max = *counts.iter().max().unwrap() as f64;
    let width = 540.0 / bins as f64;
    for (k, &c) in counts.iter().enumerate() {
        let h = 300.0 * c as f64 / max;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{width:.2}\" height=\"{h:.2}\" fill=\"#2ca02c\" stroke=\"white\"/>",
            60.0 + k as f64 * width,
            350.0 - h
        );
    }
    for (v, x) in [(lo, 60.0), (hi, 600.0)] {
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"366\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{v:.3}</text>"
        );
    }
    if lo < 0.0 && hi > 0.0 {
        let x0 = 60.0 + (-lo) / span * 540.0;
        let _ = writeln!(s, "<line x1=\"{x0:.2}\" y1=\"40\" x2=\"{x0:.2}\" y2=\"350\" stroke=\"red\" stroke-dasharray=\"4\"/>");
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Full-sample CATE minus subgroup CATE, per record in input order.
    pub differences: Vec<f64>,
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub n_subgroup: usize,
}

/// Paired two-sided t-test of `diffs` against zero.
pub fn paired_t_test(diffs: &[f64]) -> (f64, f64) {
    let m = mean(diffs);
    match sample_sd(diffs) {
        Some(sd) if sd > 0.0 => {
            let t = m / (sd / (diffs.len() as f64).sqrt());
            (t, two_sided_t_p(t, diffs.len() as f64 - 1.0))
        }
        _ if m == 0.0 || diffs.len() < 2 => (0.0, 1.0),
        _ => (m.signum() * f64::INFINITY, 0.0),
    }
}

/// A random subgroup holding `fraction` of the records (rounded), drawn on
/// its own stream.
pub fn random_subgroup(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let k = ((n as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let mut rng = stream(seed, Domain::Subgroup, 0);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut flags = vec![false; n];
    for &i in &idx[..k.min(n)] {
        flags[i] = true;
    }
    flags
}

/// Fits one forest on all of `d` and one on the flagged subgroup, predicts
/// CATEs for every record under both and tests the paired differences.
pub fn subsample_stability_check(d: &Dataset, subgroup: &[bool], cfg: &ForestConfig) -> Result<StabilityReport> {
    if subgroup.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            got: subgroup.len(),
        });
    }
    let n_subgroup = subgroup.iter().filter(|&&f| f).count();
    if n_subgroup == 0 {
        return Err(Error::InsufficientData("stability subgroup is empty".into()));
    }
    let sub = d.subset(subgroup);
    let (full, part) = rayon::join(|| fit_causal_forest(d, cfg), || fit_causal_forest(&sub, cfg));
    let full = full?;
    let part = part.map_err(|e| match e {
        Error::InsufficientData(m) | Error::EmptyGroup(m) => {
            Error::InsufficientData(format!("stability subgroup too small: {m}"))
        }
        other => other,
    })?;
    let a = full.cates_for(d)?;
    let b = part.cates_for(d)?;
    let differences: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (t_statistic, p_value) = paired_t_test(&differences);
    Ok(StabilityReport {
        mean_difference: mean(&differences),
        differences,
        t_statistic,
        p_value,
        n_subgroup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smd_from_group_summaries() {
        let smd = standardized_mean_difference(0.612, 0.407, 0.29).unwrap();
        assert!((smd - 70.793).abs() < 0.5, "{smd}");
        assert!(standardized_mean_difference(1.0, 0.0, 0.0).is_none());
    }

    #[test]
    fn constant_scores_share_one_bin() {
        let r = overlap_report(&[0.5; 6], &[true, false, true, false, true, false], 20).unwrap();
        assert_eq!(r.bins.iter().filter(|b| b.treated + b.control > 0).count(), 1);
        assert!(!r.has_violations());
    }

    #[test]
    fn treated_only_top_bin_and_boundary_flagged() {
        let s = [0.2, 0.3, 0.97, 0.25, 0.31];
        let t = [true, true, true, false, false];
        let r = overlap_report(&s, &t, 20).unwrap();
        let flagged: Vec<_> = r.flagged_bins().map(|b| b.lower).collect();
        assert!(flagged.contains(&0.95));
        assert!(r.boundary_scores.is_empty());
        let r = overlap_report(&[1.0, 0.5], &[true, false], 20).unwrap();
        assert_eq!(r.boundary_scores, vec![0]);
        assert_eq!(r.bins[19].treated, 1);
    }

    #[test]
    fn paired_t_degenerate_cases() {
        assert_eq!(paired_t_test(&[0.0; 5]), (0.0, 1.0));
        assert_eq!(paired_t_test(&[0.1; 5]).1, 0.0);
    }

    #[test]
    fn random_subgroup_has_requested_size() {
        let g = random_subgroup(1000, 0.7, 4);
        assert_eq!(g.iter().filter(|&&f| f).count(), 700);
        assert_eq!(g, random_subgroup(1000, 0.7, 4));
    }
}
