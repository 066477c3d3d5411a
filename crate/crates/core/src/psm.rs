//! Propensity-score matching: one nearest neighbour with replacement for
//! every unit (ATE), ties averaged, no caliper.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DropRule, Field};
use crate::effect::{EffectEstimate, Estimand};
use crate::error::{Error, Result};
use crate::logit::{fit_logit, LogitModel, LogitOptions};
use crate::rng::{stream, Domain};
use crate::stats::{sample_sd, two_sided_normal_p};

/// Outcome of a matching run.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub estimate: f64,
    /// Weight of each record (input order) in the matched sample on its own
    /// group's side: 1 for itself plus its share in every match it serves.
    pub weights: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

struct SortedGroup {
    /// Positions into the input arrays, sorted by (score, canonical rank).
    idx: Vec<usize>,
    scores: Vec<f64>,
    /// prefix[k] = sum of outcomes of the first k units.
    prefix: Vec<f64>,
}

impl SortedGroup {
    fn new(mut idx: Vec<usize>, scores: &[f64], y: &[f64], rank: &[usize]) -> Self {
        idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(rank[a].cmp(&rank[b])));
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let mut prefix = Vec::with_capacity(idx.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &i in &idx {
            acc += y[i];
            prefix.push(acc);
        }
        SortedGroup {
            idx,
            scores: s,
            prefix,
        }
    }

    /// Half-open ranges of sorted positions at minimal distance from `s`.
    fn nearest(&self, s: f64) -> [(usize, usize); 2] {
        let n = self.scores.len();
        let at = self.scores.partition_point(|&v| v < s);
        // run of exact matches
        let eq_end = self.scores.partition_point(|&v| v <= s);
        if eq_end > at {
            return [(at, eq_end), (0, 0)];
        }
        let left = (at > 0).then(|| {
            let v = self.scores[at - 1];
            (self.scores.partition_point(|&x| x < v), at, s - v)
        });
        let right = (at < n).then(|| {
            let v = self.scores[at];
            (at, self.scores.partition_point(|&x| x <= v), v - s)
        });
        match (left, right) {
            (Some((a, b, dl)), Some((c, d, dr))) => {
                if dl < dr {
                    [(a, b), (0, 0)]
                } else if dr < dl {
                    [(c, d), (0, 0)]
                } else {
                    [(a, b), (c, d)]
                }
            }
            (Some((a, b, _)), None) => [(a, b), (0, 0)],
            (None, Some((c, d, _))) => [(c, d), (0, 0)],
            (None, None) => [(0, 0), (0, 0)],
        }
    }
}

/// Matching on arrays. `rank` gives each unit's canonical position; units
/// are visited and tie-broken in that order so the result is independent of
/// input order.
pub(crate) fn match_ate(scores: &[f64], treated: &[bool], y: &[f64], rank: &[usize]) -> Result<MatchResult> {
    let n = scores.len();
    let t_idx: Vec<usize> = (0..n).filter(|&i| treated[i]).collect();
    let c_idx: Vec<usize> = (0..n).filter(|&i| !treated[i]).collect();
    if t_idx.is_empty() {
        return Err(Error::EmptyGroup("treated".into()));
    }
    if c_idx.is_empty() {
        return Err(Error::EmptyGroup("control".into()));
    }
    let (n_treated, n_control) = (t_idx.len(), c_idx.len());
    let tg = SortedGroup::new(t_idx, scores, y, rank);
    let cg = SortedGroup::new(c_idx, scores, y, rank);

    // Difference arrays over sorted positions for the match weights.
    let mut t_diff = vec![0.0; n_treated + 1];
    let mut c_diff = vec![0.0; n_control + 1];
    let mut contrib = vec![0.0; n];
    for i in 0..n {
        let (opp, diff) = if treated[i] { (&cg, &mut c_diff) } else { (&tg, &mut t_diff) };
        let runs = opp.nearest(scores[i]);
        let k: usize = runs.iter().map(|(a, b)| b - a).sum();
        let sum: f64 = runs.iter().map(|&(a, b)| opp.prefix[b] - opp.prefix[a]).sum();
        let imputed = sum / k as f64;
        let w = 1.0 / k as f64;
        for &(a, b) in &runs {
            if b > a {
                diff[a] += w;
                diff[b] -= w;
            }
        }
        contrib[i] = if treated[i] { y[i] - imputed } else { imputed - y[i] };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| rank[i]);
    let estimate = order.iter().map(|&i| contrib[i]).sum::<f64>() / n as f64;

    let mut weights = vec![1.0; n];
    for (g, diff) in [(&tg, &t_diff), (&cg, &c_diff)] {
        let mut acc = 0.0;
        for (pos, &i) in g.idx.iter().enumerate() {
            acc += diff[pos];
            weights[i] += acc;
        }
    }
    Ok(MatchResult {
        estimate,
        weights,
        n_treated,
        n_control,
    })
}

fn rank_of(order: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

fn check_scores(d: &Dataset, scores: &[f64]) -> Result<()> {
    if scores.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            got: scores.len(),
        });
    }
    for (r, &s) in d.records().iter().zip(scores) {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::ScoreOutOfRange {
                id: r.id.clone(),
                score: s,
            });
        }
    }
    Ok(())
}

/// Full matching result (estimate plus matched-sample weights).
pub fn match_on_score(d: &Dataset, scores: &[f64]) -> Result<MatchResult> {
    check_scores(d, scores)?;
    let rank = rank_of(&d.canonical_order());
    match_ate(scores, &d.treatment(), &d.outcome(), &rank)
}

/// ATE by one-nearest-neighbour matching on the propensity score. Standard
/// error and p-value stay empty; see [`bootstrap_inference`].
pub fn estimate_ate_psm(d: &Dataset, scores: &[f64]) -> Result<EffectEstimate> {
    let m = match_on_score(d, scores)?;
    Ok(EffectEstimate::new(m.estimate, Estimand::Ate, "psm", d.len()))
}

#[derive(Debug, Clone)]
pub struct Trimmed {
    pub dataset: Dataset,
    /// Scores of the retained records, aligned with `dataset`.
    pub scores: Vec<f64>,
    pub max_control_score: f64,
}

/// Drops treated records whose score exceeds the largest control score.
/// Without controls there is no reference and nothing is dropped.
pub fn trim_common_support(d: &Dataset, scores: &[f64]) -> Result<Trimmed> {
    if scores.len() != d.len() {
        return Err(Error::Dimension {
            expected: d.len(),
            got: scores.len(),
        });
    }
    let max_control = d
        .records()
        .iter()
        .zip(scores)
        .filter(|(r, _)| !r.informed)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<bool> = d
        .records()
        .iter()
        .zip(scores)
        .map(|(r, &s)| !r.informed || max_control == f64::NEG_INFINITY || s <= max_control)
        .collect();
    let dataset = d.retain_flagged(&keep, DropRule::CommonSupport);
    let scores = scores
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&s, _)| s)
        .collect();
    Ok(Trimmed {
        dataset,
        scores,
        max_control_score: max_control,
    })
}

/// Propensity model plus matching, re-run as a unit inside the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmEstimator {
    pub covariates: Vec<Field>,
    pub logit: LogitOptions,
    pub method: String,
}

impl Default for PsmEstimator {
    fn default() -> Self {
        PsmEstimator {
            covariates: Field::COVARIATES.to_vec(),
            logit: LogitOptions::default(),
            method: "psm".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PsmFit {
    pub estimate: EffectEstimate,
    pub model: LogitModel,
    pub matches: MatchResult,
}

impl PsmEstimator {
    fn names(&self) -> Vec<String> {
        self.covariates.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn fit_propensity(&self, d: &Dataset) -> Result<LogitModel> {
        let x = d.covariate_matrix(&self.covariates)?;
        fit_logit(&x, &d.treatment(), &self.names(), &self.logit)
    }

    pub fn fit(&self, d: &Dataset) -> Result<PsmFit> {
        let model = self.fit_propensity(d)?;
        let matches = match_on_score(d, &model.fitted)?;
        let estimate = EffectEstimate::new(matches.estimate, Estimand::Ate, self.method.clone(), d.len());
        Ok(PsmFit {
            estimate,
            model,
            matches,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replications: 999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub estimate: EffectEstimate,
    pub replicates: Vec<f64>,
    pub redraws: usize,
}

/// Point estimate on `d` plus a nonparametric bootstrap (resampling within
/// treatment groups) that re-fits the propensity model in every replicate.
/// Replicate `b` draws from its own stream, so the result does not depend on
/// the number of worker threads.
pub fn bootstrap_inference(d: &Dataset, est: &PsmEstimator, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if opts.replications < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replications".into()));
    }
    let point = est.fit(d)?;
    let x = d.covariate_matrix(&est.covariates)?;
    let treated = d.treatment();
    let y = d.outcome();
    let rank = rank_of(&d.canonical_order());
    let t_idx: Vec<usize> = (0..d.len()).filter(|&i| treated[i]).collect();
    let c_idx: Vec<usize> = (0..d.len()).filter(|&i| !treated[i]).collect();
    let names = est.names();
    let cap = 10 * opts.replications;

    let replicate = |b: usize| -> Result<(f64, usize)> {
        let mut rng = stream(opts.seed, Domain::Bootstrap, b as u64);
        let mut redraws = 0;
        loop {
            let mut draw = Vec::with_capacity(t_idx.len() + c_idx.len());
            for group in [&t_idx, &c_idx] {
                for _ in 0..group.len() {
                    draw.push(group[rng.random_range(0..group.len())]);
                }
            }
            let xs: Vec<Vec<f64>> = draw.iter().map(|&i| x[i].clone()).collect();
            let ts: Vec<bool> = draw.iter().map(|&i| treated[i]).collect();
            let ys: Vec<f64> = draw.iter().map(|&i| y[i]).collect();
            let rs: Vec<usize> = draw.iter().enumerate().map(|(j, &i)| rank[i] * draw.len() + j).collect();
            let result = fit_logit(&xs, &ts, &names, &est.logit).and_then(|m| match_ate(&m.fitted, &ts, &ys, &rs));
            match result {
                Ok(m) => return Ok((m.estimate, redraws)),
                Err(e) => {
                    redraws += 1;
                    log::debug!("bootstrap replicate {b} redrawn: {e}");
                    if redraws > cap {
                        return Err(Error::Bootstrap(format!("replicate {b} failed {redraws} times: {e}")));
                    }
                }
            }
        }
    };

    let results: Vec<Result<(f64, usize)>> = (0..opts.replications).into_par_iter().map(replicate).collect();
    let mut replicates = Vec::with_capacity(opts.replications);
    let mut redraws = 0;
    for r in results {
        let (v, k) = r?;
        replicates.push(v);
        redraws += k;
    }
    if redraws > cap {
        return Err(Error::Bootstrap(format!("{redraws} redraws exceed the cap of {cap}")));
    }
    let se = sample_sd(&replicates).unwrap_or(0.0);
    let mut estimate = point.estimate;
    estimate.standard_error = Some(se);
    estimate.p_value = Some(two_sided_normal_p(estimate.estimate, se));
    estimate.seed = Some(opts.seed);
    Ok(BootstrapResult {
        estimate,
        replicates,
        redraws,
    })
}
