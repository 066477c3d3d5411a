//! Stage functions shared by the subcommands, and the full run.

use serde::Serialize;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use modeshift::data::{
    apply_eligibility_filters, parse_dataset_with, summarize_by_treatment, FilterLog, MissingPolicy, ParseOptions,
    TreatmentSummary,
};
use modeshift::diagnostics::{
    balance_table, cate_histogram_svg, overlap_report, overlap_svg, random_subgroup, subsample_stability_check,
    write_balance_csv, BalanceRow, OverlapReport,
};
use modeshift::forest::{estimate_ate_forest, fit_causal_forest, CausalForestModel};
use modeshift::impact::ImpactSummary;
use modeshift::impute::{impute_chained_with, pool_rubin};
use modeshift::logit::LogitModel;
use modeshift::psm::{bootstrap_inference, trim_common_support, BootstrapOptions, PsmEstimator};
use modeshift::stats::{mean, quantile};
use modeshift::{Dataset, EffectEstimate, Error};

use crate::config::PipelineConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// A module error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.error.is_validation() {
            2
        } else {
            3
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait Stage<T> {
    fn stage(self, name: &'static str) -> StageResult<T>;
}

impl<T> Stage<T> for modeshift::Result<T> {
    fn stage(self, name: &'static str) -> StageResult<T> {
        self.map_err(|error| StageError { stage: name, error })
    }
}

pub fn load_config(path: Option<&Path>) -> StageResult<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).stage("config"),
        None => Ok(PipelineConfig::default()),
    }
}

pub fn load_input(path: &Path) -> StageResult<Dataset> {
    let file = fs::File::open(path).map_err(Error::from).stage("input")?;
    let provenance = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset_with(
        file,
        &ParseOptions {
            provenance: Some(provenance),
            ..Default::default()
        },
    )
    .stage("input")
}

pub fn filter(d: &Dataset, cfg: &PipelineConfig) -> StageResult<Dataset> {
    apply_eligibility_filters(d, &cfg.filter()).stage("filter")
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleAccounting {
    pub input_count: usize,
    pub retained: usize,
    pub dropped: usize,
    pub log: FilterLog,
}

impl SampleAccounting {
    pub fn new(d: &Dataset) -> Self {
        SampleAccounting {
            input_count: d.filter_log.input_count,
            retained: d.len(),
            dropped: d.filter_log.total_dropped(),
            log: d.filter_log.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityReport {
    pub covariates: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl From<&LogitModel> for PropensityReport {
    fn from(m: &LogitModel) -> Self {
        PropensityReport {
            covariates: m.covariate_names.clone(),
            coefficients: m.coefficients.clone(),
            converged: m.converged,
            iterations: m.iterations,
            log_likelihood: m.log_likelihood,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReport {
    pub method: String,
    pub replications: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestReport {
    pub num_trees: usize,
    pub discarded_trees: usize,
    pub clamped_propensities: usize,
    pub cate_mean: f64,
    pub cate_min: f64,
    pub cate_q25: f64,
    pub cate_median: f64,
    pub cate_q75: f64,
    pub cate_max: f64,
    pub cate_share_positive: f64,
}

impl ForestReport {
    fn new(m: &CausalForestModel) -> Self {
        let c = &m.oob_cate;
        ForestReport {
            num_trees: m.num_trees(),
            discarded_trees: m.discarded_trees,
            clamped_propensities: m.clamped_count(),
            cate_mean: mean(c),
            cate_min: quantile(c, 0.0),
            cate_q25: quantile(c, 0.25),
            cate_median: quantile(c, 0.5),
            cate_q75: quantile(c, 0.75),
            cate_max: quantile(c, 1.0),
            cate_share_positive: c.iter().filter(|&&x| x > 0.0).count() as f64 / c.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    pub subgroup: String,
    pub n_subgroup: usize,
    pub mean_difference: f64,
    pub mean_abs_difference: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputationReport {
    pub m: usize,
    pub sample: SampleAccounting,
    pub completions: Vec<Vec<EffectEstimate>>,
    pub pooled: Vec<EffectEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub input: String,
    pub config: PipelineConfig,
    pub sample: SampleAccounting,
    pub descriptives: TreatmentSummary,
    pub propensity: PropensityReport,
    pub overlap: OverlapReport,
    pub estimates: Vec<EffectEstimate>,
    pub bootstrap: Vec<BootstrapReport>,
    pub forest: Option<ForestReport>,
    pub balance: Vec<BalanceRow>,
    pub stability: Option<StabilitySummary>,
    pub imputation: Option<ImputationReport>,
    pub impact: Vec<ImpactSummary>,
}

/// Rendered outputs, written only once every stage has succeeded.
pub struct Artifacts {
    pub report: Report,
    pub balance_csv: Vec<u8>,
    pub overlap_svg: String,
    pub cates_svg: Option<String>,
}

impl Artifacts {
    pub fn write(&self, out: &Path) -> StageResult<()> {
        let io = |r: std::io::Result<()>| r.map_err(Error::from).stage("output");
        io(fs::create_dir_all(out))?;
        let mut json = serde_json::to_vec_pretty(&self.report).map_err(Error::from).stage("output")?;
        json.push(b'\n');
        io(fs::write(out.join("report.json"), json))?;
        io(fs::write(out.join("balance.csv"), &self.balance_csv))?;
        io(fs::write(out.join("overlap.svg"), &self.overlap_svg))?;
        if let Some(svg) = &self.cates_svg {
            io(fs::write(out.join("cates.svg"), svg))?;
        }
        Ok(())
    }
}

pub fn psm_estimator(cfg: &PipelineConfig) -> PsmEstimator {
    PsmEstimator {
        covariates: cfg.covariates.clone(),
        ..Default::default()
    }
}

fn bootstrap(d: &Dataset, est: &PsmEstimator, cfg: &PipelineConfig) -> StageResult<modeshift::psm::BootstrapResult> {
    bootstrap_inference(
        d,
        est,
        &BootstrapOptions {
            replications: cfg.bootstrap_replications,
            seed: cfg.seed,
        },
    )
    .stage("psm")
}

/// Effect estimates of the enabled estimators on one dataset.
pub struct Estimation {
    pub estimates: Vec<EffectEstimate>,
    pub bootstrap: Vec<BootstrapReport>,
    pub psm_weights: Option<Vec<f64>>,
    pub forest: Option<CausalForestModel>,
}

pub fn estimate(d: &Dataset, cfg: &PipelineConfig, logit: Option<&LogitModel>) -> StageResult<Estimation> {
    let mut out = Estimation {
        estimates: Vec::new(),
        bootstrap: Vec::new(),
        psm_weights: None,
        forest: None,
    };
    if cfg.method.psm() {
        let est = psm_estimator(cfg);
        let fit = est.fit(d).stage("psm")?;
        let b = bootstrap(d, &est, cfg)?;
        out.bootstrap.push(BootstrapReport {
            method: "psm".into(),
            replications: b.replicates.len(),
            redraws: b.redraws,
        });
        out.estimates.push(b.estimate);
        out.psm_weights = Some(fit.matches.weights);
        if cfg.trim {
            let scores = match logit {
                Some(m) => m.fitted.clone(),
                None => fit.model.fitted.clone(),
            };
            let trimmed = trim_common_support(d, &scores).stage("psm")?;
            let est = PsmEstimator {
                method: "psm_trimmed".into(),
                ..est
            };
            let b = bootstrap(&trimmed.dataset, &est, cfg)?;
            out.bootstrap.push(BootstrapReport {
                method: "psm_trimmed".into(),
                replications: b.replicates.len(),
                redraws: b.redraws,
            });
            out.estimates.push(b.estimate);
        }
    }
    if cfg.method.forest() {
        let model = fit_causal_forest(d, &cfg.forest()).stage("forest")?;
        for t in cfg.target_samples() {
            out.estimates.push(estimate_ate_forest(&model, d, t).stage("forest")?);
        }
        out.forest = Some(model);
    }
    Ok(out)
}

pub fn overlap(scores: &[f64], d: &Dataset, cfg: &PipelineConfig) -> StageResult<OverlapReport> {
    overlap_report(scores, &d.treatment(), cfg.overlap_bins).stage("overlap")
}

pub fn balance(d: &Dataset, cfg: &PipelineConfig, est: &Estimation) -> StageResult<Vec<BalanceRow>> {
    let weights = match (&est.psm_weights, &est.forest) {
        (Some(w), _) => Some(w.clone()),
        (None, Some(m)) => {
            // overlap weights, aligned from canonical order back to input order
            let order = d.canonical_order();
            let mut w = vec![0.0; d.len()];
            for (k, &i) in order.iter().enumerate() {
                let e = m.e_hat[k].clamp(0.01, 0.99);
                w[i] = e * (1.0 - e);
            }
            Some(w)
        }
        (None, None) => None,
    };
    balance_table(d, weights.as_deref(), &cfg.covariates).stage("balance")
}

pub fn stability(d: &Dataset, cfg: &PipelineConfig) -> StageResult<StabilitySummary> {
    let (flags, label) = match cfg.stability_field {
        Some(f) => (
            d.records().iter().map(|r| f.value(r) == Some(1.0)).collect::<Vec<_>>(),
            format!("{f} = 1"),
        ),
        None => (
            random_subgroup(d.len(), cfg.stability_fraction, cfg.seed),
            format!("random {}", cfg.stability_fraction),
        ),
    };
    let r = subsample_stability_check(d, &flags, &cfg.forest()).stage("stability")?;
    Ok(StabilitySummary {
        subgroup: label,
        n_subgroup: r.n_subgroup,
        mean_difference: r.mean_difference,
        mean_abs_difference: mean(&r.differences.iter().map(|x| x.abs()).collect::<Vec<_>>()),
        t_statistic: r.t_statistic,
        p_value: r.p_value,
    })
}

pub fn imputation(input: &Dataset, cfg: &PipelineConfig) -> StageResult<ImputationReport> {
    let mut filter = cfg.filter();
    filter.missing_policy = MissingPolicy::PassThrough;
    let d = apply_eligibility_filters(input, &filter).stage("imputation")?;
    let completed = impute_chained_with(&d, &cfg.impute_options()).stage("imputation")?;
    let mut completions = Vec::new();
    for c in &completed {
        completions.push(estimate(c, cfg, None)?.estimates);
    }
    let mut pooled = Vec::new();
    for k in 0..completions[0].len() {
        let column: Vec<EffectEstimate> = completions.iter().map(|e| e[k].clone()).collect();
        pooled.push(pool_rubin(&column).stage("imputation")?);
    }
    Ok(ImputationReport {
        m: completed.len(),
        sample: SampleAccounting::new(&d),
        completions,
        pooled,
    })
}

pub fn impact(estimates: &[EffectEstimate], cfg: &PipelineConfig) -> StageResult<Vec<ImpactSummary>> {
    let ic = cfg.impact();
    estimates
        .iter()
        .map(|e| ic.summarize(&format!("{} {}", e.method, e.estimand), e.estimate))
        .collect::<modeshift::Result<Vec<_>>>()
        .stage("impact")
}

/// Options for [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub input: PathBuf,
    pub out: PathBuf,
    pub config: PipelineConfig,
}

/// Every stage from ingestion to the impact summary. Nothing is written
/// unless all stages succeed.
pub fn build_artifacts(input: &Path, cfg: &PipelineConfig) -> StageResult<Artifacts> {
    cfg.validate().stage("config")?;
    let raw = load_input(input)?;
    let d = filter(&raw, cfg)?;
    let descriptives = summarize_by_treatment(&d).stage("describe")?;
    let logit = psm_estimator(cfg).fit_propensity(&d).stage("logit")?;
    let overlap_rep = overlap(&logit.fitted, &d, cfg)?;
    let est = estimate(&d, cfg, Some(&logit))?;
    let balance_rows = balance(&d, cfg, &est)?;
    let stability_rep = match (&est.forest, cfg.stability) {
        (Some(_), true) => Some(stability(&d, cfg)?),
        _ => None,
    };
    let imputation_rep = if cfg.impute {
        Some(imputation(&raw, cfg)?)
    } else {
        None
    };
    let mut impact_rep = impact(&est.estimates, cfg)?;
    if let Some(imp) = &imputation_rep {
        impact_rep.extend(impact(&imp.pooled, cfg)?.into_iter().map(|mut s| {
            s.method = format!("{} (imputed)", s.method);
            s
        }));
    }
    let mut balance_csv = Vec::new();
    write_balance_csv(&balance_rows, &mut balance_csv).stage("output")?;
    let cates_svg = est
        .forest
        .as_ref()
        .map(|m| cate_histogram_svg(&m.oob_cate, cfg.cate_bins));
    let report = Report {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        input: d.provenance.clone(),
        config: cfg.clone(),
        sample: SampleAccounting::new(&d),
        descriptives,
        propensity: PropensityReport::from(&logit),
        overlap: overlap_rep.clone(),
        estimates: est.estimates,
        bootstrap: est.bootstrap,
        forest: est.forest.as_ref().map(ForestReport::new),
        balance: balance_rows,
        stability: stability_rep,
        imputation: imputation_rep,
        impact: impact_rep,
    };
    Ok(Artifacts {
        report,
        balance_csv,
        overlap_svg: overlap_svg(&overlap_rep),
        cates_svg,
    })
}

pub fn run_pipeline(opts: &RunOptions) -> StageResult<Report> {
    let artifacts = build_artifacts(&opts.input, &opts.config)?;
    artifacts.write(&opts.out)?;
    Ok(artifacts.report)
}
