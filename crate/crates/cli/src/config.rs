//! Flat key-value pipeline configuration (TOML syntax).

use serde::{Deserialize, Serialize};
use std::path::Path;

use modeshift::data::{MissingPolicy, Region};
use modeshift::forest::{ForestConfig, TargetSample};
use modeshift::impact::ImpactConfig;
use modeshift::impute::ImputeOptions;
use modeshift::{Error, Field, FilterConfig, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Psm,
    Forest,
    Both,
}

impl Method {
    pub fn psm(self) -> bool {
        matches!(self, Method::Psm | Method::Both)
    }

    pub fn forest(self) -> bool {
        matches!(self, Method::Forest | Method::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    All,
    Overlap,
}

impl From<Target> for TargetSample {
    fn from(t: Target) -> Self {
        match t {
            Target::All => TargetSample::All,
            Target::Overlap => TargetSample::Overlap,
        }
    }
}

/// Every key is optional; missing keys take the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub method: Method,
    /// Forest target samples to report; empty means both.
    pub targets: Vec<Target>,
    /// Adds a propensity-matching variant on the common-support sample.
    pub trim: bool,
    /// Adds the multiple-imputation branch.
    pub impute: bool,

    pub max_distance_km: f64,
    pub require_not_aware_at_booking: bool,
    pub drop_ga: bool,
    pub drop_adjusted_stay: bool,
    pub min_nights: u32,
    pub missing_policy: MissingPolicy,
    pub control_region: Option<Region>,

    pub covariates: Vec<Field>,
    pub bootstrap_replications: usize,

    pub num_trees: usize,
    pub subsample_fraction: f64,
    pub honesty_fraction: f64,
    pub min_leaf_size: usize,
    pub mtry: Option<usize>,
    pub nuisance_trees: Option<usize>,

    pub overlap_bins: usize,
    pub cate_bins: usize,

    pub stability: bool,
    /// Random subgroup share for the stability check.
    pub stability_fraction: f64,
    /// Binary field whose 1-records form the stability subgroup instead.
    pub stability_field: Option<Field>,

    pub imputation_m: usize,
    pub imputation_donors: usize,
    pub imputation_burn_in: usize,

    pub ef_car_g_per_pkm: f64,
    pub ef_pt_g_per_pkm: f64,
    pub dist_car_km: f64,
    pub dist_pt_km: f64,
    pub per_capita_transport_kg: f64,
    pub uptake_share: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = FilterConfig::default();
        let fc = ForestConfig::default();
        let im = ImputeOptions::default();
        let ic = ImpactConfig::default();
        PipelineConfig {
            seed: 0,
            method: Method::Both,
            targets: Vec::new(),
            trim: false,
            impute: false,
            max_distance_km: f.max_distance_km,
            require_not_aware_at_booking: f.require_not_aware_at_booking,
            drop_ga: f.drop_ga,
            drop_adjusted_stay: f.drop_adjusted_stay,
            min_nights: f.min_nights,
            missing_policy: f.missing_policy,
            control_region: f.control_region,
            covariates: Field::COVARIATES.to_vec(),
            bootstrap_replications: 999,
            num_trees: fc.num_trees,
            subsample_fraction: fc.subsample_fraction,
            honesty_fraction: fc.honesty_fraction,
            min_leaf_size: fc.min_leaf_size,
            mtry: fc.mtry,
            nuisance_trees: fc.nuisance_trees,
            overlap_bins: 20,
            cate_bins: 30,
            stability: true,
            stability_fraction: 0.7,
            stability_field: None,
            imputation_m: im.m,
            imputation_donors: im.donors,
            imputation_burn_in: im.burn_in,
            ef_car_g_per_pkm: ic.ef_car_g_per_pkm,
            ef_pt_g_per_pkm: ic.ef_pt_g_per_pkm,
            dist_car_km: ic.dist_car_km,
            dist_pt_km: ic.dist_pt_km,
            per_capita_transport_kg: ic.per_capita_transport_kg,
            uptake_share: ic.uptake_share,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter().validate()?;
        self.forest().validate()?;
        if self.covariates.is_empty() {
            return Err(Error::Config("covariates must not be empty".into()));
        }
        if self.bootstrap_replications < 2 {
            return Err(Error::Config("bootstrap_replications must be at least 2".into()));
        }
        if self.overlap_bins == 0 || self.cate_bins == 0 {
            return Err(Error::Config("histogram bin counts must be positive".into()));
        }
        if !(self.stability_fraction > 0.0 && self.stability_fraction <= 1.0) {
            return Err(Error::Config("stability_fraction must lie in (0,1]".into()));
        }
        if let Some(f) = self.stability_field {
            if !f.is_binary() {
                return Err(Error::Config(format!("stability_field `{f}` is not binary")));
            }
        }
        if self.impute && self.imputation_m < 2 {
            return Err(Error::Config("imputation_m must be at least 2 to pool".into()));
        }
        Ok(())
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            max_distance_km: self.max_distance_km,
            require_not_aware_at_booking: self.require_not_aware_at_booking,
            drop_ga: self.drop_ga,
            drop_adjusted_stay: self.drop_adjusted_stay,
            min_nights: self.min_nights,
            missing_policy: self.missing_policy,
            control_region: self.control_region,
        }
    }

    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            num_trees: self.num_trees,
            subsample_fraction: self.subsample_fraction,
            honesty_fraction: self.honesty_fraction,
            min_leaf_size: self.min_leaf_size,
            mtry: self.mtry,
            seed: self.seed,
            nuisance_trees: self.nuisance_trees,
            known_propensity: None,
            covariates: self.covariates.clone(),
        }
    }

    pub fn impute_options(&self) -> ImputeOptions {
        ImputeOptions {
            m: self.imputation_m,
            donors: self.imputation_donors,
            burn_in: self.imputation_burn_in,
            seed: self.seed,
        }
    }

    pub fn impact(&self) -> ImpactConfig {
        ImpactConfig {
            ef_car_g_per_pkm: self.ef_car_g_per_pkm,
            ef_pt_g_per_pkm: self.ef_pt_g_per_pkm,
            dist_car_km: self.dist_car_km,
            dist_pt_km: self.dist_pt_km,
            per_capita_transport_kg: self.per_capita_transport_kg,
            uptake_share: self.uptake_share,
        }
    }

    pub fn target_samples(&self) -> Vec<TargetSample> {
        if self.targets.is_empty() {
            vec![TargetSample::All, TargetSample::Overlap]
        } else {
            let mut t: Vec<TargetSample> = self.targets.iter().map(|&t| t.into()).collect();
            t.dedup();
            t
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("num_tress = 10").is_err());
    }

    #[test]
    fn keys_parse() {
        let c = PipelineConfig::from_toml(
            "seed = 4\nmethod = \"psm\"\nnum_trees = 50\ncontrol_region = \"ausserrhoden_toggenburg\"\ncovariates = [\"age\", \"half_fare\"]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.method, Method::Psm);
        assert_eq!(c.forest().num_trees, 50);
        assert_eq!(c.covariates, vec![Field::Age, Field::HalfFare]);
        assert_eq!(c.control_region, Some(Region::AusserrhodenToggenburg));
    }
}
