//! Honest causal forest with local centering.
//!
//! Two auxiliary regression forests give out-of-bag estimates of
//! `m(x) = E[Y | X = x]` and `e(x) = Pr(D = 1 | X = x)`. Causal trees are grown
//! on the residualized outcome and treatment, split by maximizing the
//! heterogeneity of the local effect (gradient pseudo-outcomes), and estimate
//! leaf statistics on a disjoint honest half of each subsample. Average
//! effects use doubly robust (AIPW) scores built from the out-of-bag
//! predictions.

mod tree;

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Field};
use crate::effect::{EffectEstimate, Estimand};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::stats::two_sided_normal_p;
use tree::{grow, CausalRule, EffectStats, Matrix, MeanStats, Regression, Tree, TreeParams};

/// Propensities are clamped to this range inside the AIPW scores.
pub const PROPENSITY_CLAMP: (f64, f64) = (0.01, 0.99);

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    pub min_leaf_size: usize,
    /// Candidate features per split; defaults to `ceil(sqrt(p) + 20)` capped at p.
    pub mtry: Option<usize>,
    pub seed: u64,
    /// Trees in each nuisance forest; defaults to `max(50, num_trees / 4)`.
    pub nuisance_trees: Option<usize>,
    /// Known constant assignment probability (randomized designs). Replaces
    /// the treatment forest when set.
    pub known_propensity: Option<f64>,
    pub covariates: Vec<Field>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 2000,
            subsample_fraction: 0.5,
            honesty_fraction: 0.5,
            min_leaf_size: 5,
            mtry: None,
            seed: 0,
            nuisance_trees: None,
            known_propensity: None,
            covariates: Field::COVARIATES.to_vec(),
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if self.num_trees < 1 {
            return Err(Error::Config("num_trees must be at least 1".into()));
        }
        if !frac(self.subsample_fraction) || !frac(self.honesty_fraction) {
            return Err(Error::Config("forest fractions must lie in (0,1)".into()));
        }
        if self.min_leaf_size < 1 {
            return Err(Error::Config("min_leaf_size must be at least 1".into()));
        }
        if self.mtry == Some(0) {
            return Err(Error::Config("mtry must be positive".into()));
        }
        if let Some(e) = self.known_propensity {
            if !frac(e) {
                return Err(Error::Config("known_propensity must lie in (0,1)".into()));
            }
        }
        if self.covariates.is_empty() {
            return Err(Error::Config("forest needs at least one covariate".into()));
        }
        Ok(())
    }

    pub fn effective_mtry(&self) -> usize {
        let p = self.covariates.len();
        self.mtry
            .unwrap_or_else(|| ((p as f64).sqrt() + 20.0).ceil() as usize)
            .min(p)
    }

    fn nuisance_count(&self) -> usize {
        self.nuisance_trees.unwrap_or((self.num_trees / 4).max(50))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSample {
    All,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalForestModel {
    pub format_version: u32,
    pub config: ForestConfig,
    /// Training ids in canonical (sorted) order; every per-unit vector below
    /// is aligned with it.
    pub train_ids: Vec<String>,
    pub outcome: Vec<f64>,
    pub treated: Vec<bool>,
    /// Out-of-bag outcome regression.
    pub m_hat: Vec<f64>,
    /// Out-of-bag propensity, before clamping.
    pub e_hat: Vec<f64>,
    /// Out-of-bag treatment-effect predictions.
    pub oob_cate: Vec<f64>,
    /// Trees whose honest half could not populate a valid root.
    pub discarded_trees: usize,
    trees: Vec<Tree<EffectStats>>,
}

struct Training {
    ids: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<bool>,
}

fn training_data(d: &Dataset, covariates: &[Field]) -> Result<Training> {
    let order = d.canonical_order();
    let mut x = Vec::with_capacity(d.len() * covariates.len());
    let mut ids = Vec::with_capacity(d.len());
    let mut y = Vec::with_capacity(d.len());
    let mut w = Vec::with_capacity(d.len());
    for &i in &order {
        let r = &d.records()[i];
        for f in covariates {
            x.push(f.value(r).ok_or_else(|| Error::MissingValue {
                field: f.name().to_string(),
                id: r.id.clone(),
            })?);
        }
        ids.push(r.id.clone());
        y.push(if r.used_pt { 1.0 } else { 0.0 });
        w.push(r.informed);
    }
    Ok(Training { ids, x, y, w })
}

fn tree_params(n: usize, cfg: &ForestConfig) -> TreeParams {
    let subsample = ((n as f64) * cfg.subsample_fraction).floor() as usize;
    let structure = ((subsample as f64) * cfg.honesty_fraction).floor() as usize;
    TreeParams {
        min_leaf_size: cfg.min_leaf_size,
        mtry: cfg.effective_mtry(),
        subsample,
        structure: structure.clamp(1, subsample.saturating_sub(1).max(1)),
    }
}

/// Out-of-bag predictions of a regression forest grown on `target`.
fn regression_oob(x: &Matrix, target: &[f64], cfg: &ForestConfig, params: &TreeParams, domain: Domain) -> Vec<f64> {
    let n = target.len();
    let rule = Regression { y: target };
    let trees: Vec<Tree<MeanStats>> = (0..cfg.nuisance_count())
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = stream(cfg.seed, domain, b as u64);
            grow(x, n, &rule, params, &mut rng)
        })
        .collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let (mut sum, mut cnt, mut all_sum) = (0.0, 0usize, 0.0);
            for t in &trees {
                let leaf = t.leaf(row);
                let v = leaf.sum / leaf.n;
                all_sum += v;
                if !t.is_in_bag(i) {
                    sum += v;
                    cnt += 1;
                }
            }
            if cnt > 0 {
                sum / cnt as f64
            } else {
                all_sum / trees.len().max(1) as f64
            }
        })
        .collect()
}

#[derive(Default)]
struct EffectAccumulator {
    weight: f64,
    w: f64,
    y: f64,
    wy: f64,
    ww: f64,
}

impl EffectAccumulator {
    fn add(&mut self, s: &EffectStats) {
        self.weight += 1.0;
        self.w += s.sum_w / s.n;
        self.y += s.sum_y / s.n;
        self.wy += s.sum_wy / s.n;
        self.ww += s.sum_ww / s.n;
    }

    /// Forest-weighted local least-squares slope of outcome on treatment.
    fn tau(&self) -> Option<f64> {
        if self.weight == 0.0 {
            return None;
        }
        let a = self.weight;
        let (mw, my) = (self.w / a, self.y / a);
        let cov = self.wy / a - mw * my;
        let var = self.ww / a - mw * mw;
        (var > 1e-12).then(|| cov / var)
    }
}

/// Fits the causal forest on complete cases of `d`.
pub fn fit_causal_forest(d: &Dataset, cfg: &ForestConfig) -> Result<CausalForestModel> {
    cfg.validate()?;
    let (n_t, n_c) = d.group_counts();
    if n_t == 0 {
        return Err(Error::EmptyGroup("treated".into()));
    }
    if n_c == 0 {
        return Err(Error::EmptyGroup("control".into()));
    }
    let n = d.len();
    if (n as f64) * cfg.subsample_fraction < 4.0 * cfg.min_leaf_size as f64 {
        return Err(Error::InsufficientData(format!(
            "{n} records give subsamples below 4 x min_leaf_size = {}",
            4 * cfg.min_leaf_size
        )));
    }
    let train = training_data(d, &cfg.covariates)?;
    let x = Matrix {
        data: &train.x,
        cols: cfg.covariates.len(),
    };
    let params = tree_params(n, cfg);

    let m_hat = regression_oob(&x, &train.y, cfg, &params, Domain::OutcomeForest);
    let e_hat = match cfg.known_propensity {
        Some(e) => vec![e; n],
        None => {
            let wf: Vec<f64> = train.w.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
            regression_oob(&x, &wf, cfg, &params, Domain::TreatmentForest)
        }
    };
    let y_res: Vec<f64> = train.y.iter().zip(&m_hat).map(|(y, m)| y - m).collect();
    let w_res: Vec<f64> = train
        .w
        .iter()
        .zip(&e_hat)
        .map(|(&t, e)| if t { 1.0 } else { 0.0 } - e)
        .collect();

    let rule = CausalRule {
        y_res: &y_res,
        w_res: &w_res,
        treated: &train.w,
        min_leaf_size: cfg.min_leaf_size,
    };
    let grown: Vec<Option<Tree<EffectStats>>> = (0..cfg.num_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, Domain::CausalTree, b as u64);
            grow(&x, n, &rule, &params, &mut rng)
        })
        .collect();
    let discarded_trees = grown.iter().filter(|t| t.is_none()).count();
    let trees: Vec<Tree<EffectStats>> = grown.into_iter().flatten().collect();
    if trees.is_empty() {
        return Err(Error::InsufficientData(
            "no tree has a valid honest root; increase the sample or lower min_leaf_size".into(),
        ));
    }
    if discarded_trees > 0 {
        log::warn!("{discarded_trees} causal trees discarded (invalid honest root)");
    }

    let oob_cate: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut oob = EffectAccumulator::default();
            let mut all = EffectAccumulator::default();
            for t in &trees {
                let leaf = t.leaf(row);
                all.add(leaf);
                if !t.is_in_bag(i) {
                    oob.add(leaf);
                }
            }
            oob.tau().or_else(|| all.tau()).unwrap_or(0.0)
        })
        .collect();

    Ok(CausalForestModel {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        train_ids: train.ids,
        outcome: train.y,
        treated: train.w,
        m_hat,
        e_hat,
        oob_cate,
        discarded_trees,
        trees,
    })
}

impl CausalForestModel {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn covariates(&self) -> &[Field] {
        &self.config.covariates
    }

    /// Effect prediction for a new covariate row using every tree.
    pub fn predict_cate(&self, row: &[f64]) -> Result<f64> {
        let p = self.config.covariates.len();
        if row.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: row.len(),
            });
        }
        let mut acc = EffectAccumulator::default();
        for t in &self.trees {
            acc.add(t.leaf(row));
        }
        Ok(acc.tau().unwrap_or(0.0))
    }

    /// CATEs for every record of `d`: out-of-bag for training records (matched
    /// by id), full-forest predictions otherwise.
    pub fn cates_for(&self, d: &Dataset) -> Result<Vec<f64>> {
        let index: HashMap<&str, usize> = self
            .train_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let x = d.covariate_matrix(&self.config.covariates)?;
        d.records()
            .iter()
            .zip(&x)
            .map(|(r, row)| match index.get(r.id.as_str()) {
                Some(&i) => Ok(self.oob_cate[i]),
                None => self.predict_cate(row),
            })
            .collect()
    }

    /// Number of propensities outside the clamp range.
    pub fn clamped_count(&self) -> usize {
        self.e_hat
            .iter()
            .filter(|&&e| e < PROPENSITY_CLAMP.0 || e > PROPENSITY_CLAMP.1)
            .count()
    }

    pub fn save_json<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer(sink, self)?;
        Ok(())
    }

    pub fn load_json<R: Read>(source: R) -> Result<Self> {
        let m: CausalForestModel = serde_json::from_reader(source)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported forest format version {} (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Doubly robust per-unit scores
/// `tau + (w - e) / (e (1 - e)) * (y - m - (w - e) tau)` with `e` clamped.
/// Returns the scores, the clamped propensities and the number clamped.
pub fn aipw_scores(tau: &[f64], m_hat: &[f64], e_hat: &[f64], treated: &[bool], y: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let mut clamped = 0;
    let e: Vec<f64> = e_hat
        .iter()
        .map(|&e| {
            let c = e.clamp(PROPENSITY_CLAMP.0, PROPENSITY_CLAMP.1);
            if c != e {
                clamped += 1;
            }
            c
        })
        .collect();
    let scores = (0..tau.len())
        .map(|i| {
            let w = if treated[i] { 1.0 } else { 0.0 };
            let resid = y[i] - m_hat[i] - (w - e[i]) * tau[i];
            tau[i] + (w - e[i]) / (e[i] * (1.0 - e[i])) * resid
        })
        .collect();
    (scores, e, clamped)
}

/// Weighted mean of scores with a sandwich-style standard error; unit
/// weights give `sd(scores) / sqrt(n)`.
pub fn weighted_score_estimate(scores: &[f64], weights: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let sw: f64 = weights.iter().sum();
    let est = scores.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>() / sw;
    let ss: f64 = scores
        .iter()
        .zip(weights)
        .map(|(s, w)| (w * (s - est)).powi(2))
        .sum();
    let se = if n > 1.0 { (ss * n / (n - 1.0)).sqrt() / sw } else { 0.0 };
    (est, se)
}

/// Average effect from the forest's out-of-bag predictions: equal weights
/// (ATE) or overlap weights `e (1 - e)` (ATO).
pub fn estimate_ate_forest(m: &CausalForestModel, d: &Dataset, target: TargetSample) -> Result<EffectEstimate> {
    if d.is_empty() {
        return Err(Error::EmptyGroup("dataset is empty".into()));
    }
    if d.len() != m.train_ids.len() {
        return Err(Error::Dimension {
            expected: m.train_ids.len(),
            got: d.len(),
        });
    }
    let order = d.canonical_order();
    for (k, &i) in order.iter().enumerate() {
        let r = &d.records()[i];
        if r.id != m.train_ids[k] || r.informed != m.treated[k] || (r.used_pt as u8 as f64) != m.outcome[k] {
            return Err(Error::Config(format!(
                "record `{}` does not match the forest's training data",
                r.id
            )));
        }
    }
    let (scores, e, clamped) = aipw_scores(&m.oob_cate, &m.m_hat, &m.e_hat, &m.treated, &m.outcome);
    if clamped > 0 {
        log::warn!(
            "{clamped} propensities outside [{}, {}] clamped",
            PROPENSITY_CLAMP.0,
            PROPENSITY_CLAMP.1
        );
    }
    let (weights, estimand): (Vec<f64>, Estimand) = match target {
        TargetSample::All => (vec![1.0; scores.len()], Estimand::Ate),
        TargetSample::Overlap => (e.iter().map(|e| e * (1.0 - e)).collect(), Estimand::Ato),
    };
    let (est, se) = weighted_score_estimate(&scores, &weights);
    let mut out = EffectEstimate::new(est, estimand, "causal_forest", d.len());
    out.standard_error = Some(se);
    out.p_value = Some(two_sided_normal_p(est, se));
    out.seed = Some(m.config.seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GuestRecord;

    fn small(n: usize) -> Dataset {
        let recs = (0..n)
            .map(|i| {
                let mut r = GuestRecord::new(format!("r{i:04}"));
                r.informed = i % 2 == 0;
                r.used_pt = (i * 7) % 5 < 2;
                r.age = Some(20.0 + (i % 50) as f64);
                r.distance_car_km = (i * 13 % 300) as f64;
                r
            })
            .collect();
        Dataset::new(recs, "t").unwrap()
    }

    fn cfg(trees: usize) -> ForestConfig {
        ForestConfig {
            num_trees: trees,
            covariates: vec![Field::Age, Field::DistanceCarKm],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn default_mtry_is_capped() {
        assert_eq!(ForestConfig::default().effective_mtry(), 15);
        let c = ForestConfig {
            covariates: (0..500).map(|_| Field::Age).collect(),
            ..Default::default()
        };
        assert_eq!(c.effective_mtry(), 43);
    }

    #[test]
    fn rejects_bad_config() {
        for c in [
            ForestConfig { num_trees: 0, ..Default::default() },
            ForestConfig { subsample_fraction: 1.0, ..Default::default() },
            ForestConfig { honesty_fraction: 0.0, ..Default::default() },
            ForestConfig { min_leaf_size: 0, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn too_few_records() {
        let err = fit_causal_forest(&small(30), &cfg(10)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    }

    #[test]
    fn missing_group() {
        let recs = (0..100).map(|i| GuestRecord::new(format!("{i}"))).collect();
        let d = Dataset::new(recs, "t").unwrap();
        assert!(matches!(fit_causal_forest(&d, &cfg(10)), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn predict_checks_dimension() {
        let m = fit_causal_forest(&small(200), &cfg(20)).unwrap();
        assert!(matches!(m.predict_cate(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
        assert!(m.predict_cate(&[40.0, 100.0]).unwrap().is_finite());
    }

    #[test]
    fn json_round_trip() {
        let m = fit_causal_forest(&small(200), &cfg(5)).unwrap();
        let mut buf = Vec::new();
        m.save_json(&mut buf).unwrap();
        let back = CausalForestModel::load_json(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict_cate(&[33.0, 20.0]).unwrap(), m.predict_cate(&[33.0, 20.0]).unwrap());
    }

    #[test]
    fn ate_requires_training_data() {
        let m = fit_causal_forest(&small(200), &cfg(5)).unwrap();
        assert!(estimate_ate_forest(&m, &small(199), TargetSample::All).is_err());
        let e = estimate_ate_forest(&m, &small(200), TargetSample::All).unwrap();
        assert_eq!(e.n_used, 200);
        assert!(e.standard_error.unwrap() >= 0.0);
    }

    #[test]
    fn aipw_with_constant_propensity() {
        // tau=0, m=0, e=0.5: scores are 4 (w-0.5) y
        let (s, _, c) = aipw_scores(&[0.0; 2], &[0.0; 2], &[0.5; 2], &[true, false], &[1.0, 1.0]);
        assert_eq!(s, vec![2.0, -2.0]);
        assert_eq!(c, 0);
        let (_, e, c) = aipw_scores(&[0.0], &[0.0], &[0.999], &[true], &[1.0]);
        assert_eq!((e[0], c), (0.99, 1));
    }

    #[test]
    fn unit_weight_se_is_sd_over_root_n() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let (est, se) = weighted_score_estimate(&s, &[1.0; 4]);
        assert_eq!(est, 2.5);
        let sd = crate::stats::sample_sd(&s).unwrap();
        assert!((se - sd / 2.0).abs() < 1e-12);
    }
}
