use serde::{Deserialize, Serialize};

use super::record::{GuestRecord, Region};
use super::{Dataset, DropRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    CompleteCase,
    PassThrough,
}

/// Identification restrictions applied before estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Longer arrival journeys (by car) compete with air travel.
    pub max_distance_km: f64,
    /// Guests who already knew about the offer when booking.
    pub require_not_aware_at_booking: bool,
    /// GA holders travel free anyway.
    pub drop_ga: bool,
    /// Guests who extended their stay because of the offer.
    pub drop_adjusted_stay: bool,
    pub min_nights: u32,
    pub missing_policy: MissingPolicy,
    /// When set, treated guests must stay in Appenzell Innerrhoden and
    /// controls in this region.
    pub control_region: Option<Region>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_distance_km: 400.0,
            require_not_aware_at_booking: true,
            drop_ga: true,
            drop_adjusted_stay: true,
            min_nights: 3,
            missing_policy: MissingPolicy::CompleteCase,
            control_region: None,
        }
    }
}

impl FilterConfig {
    /// Every rule switched off.
    pub fn permissive() -> Self {
        FilterConfig {
            max_distance_km: f64::INFINITY,
            require_not_aware_at_booking: false,
            drop_ga: false,
            drop_adjusted_stay: false,
            min_nights: 1,
            missing_policy: MissingPolicy::PassThrough,
            control_region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_distance_km.is_nan() || self.max_distance_km <= 0.0 {
            return Err(Error::Config("max_distance_km must be positive".into()));
        }
        if self.min_nights < 1 {
            return Err(Error::Config("min_nights must be at least 1".into()));
        }
        Ok(())
    }

    /// First rule (in application order) that drops `r`, if any.
    pub fn first_violation(&self, r: &GuestRecord) -> Option<DropRule> {
        if r.length_of_stay < self.min_nights {
            return Some(DropRule::MinNights);
        }
        if self.require_not_aware_at_booking && r.aware_at_booking {
            return Some(DropRule::AwareAtBooking);
        }
        if self.drop_ga && r.ga_travelcard {
            return Some(DropRule::GaTravelcard);
        }
        if r.distance_car_km > self.max_distance_km {
            return Some(DropRule::MaxDistance);
        }
        if self.drop_adjusted_stay && r.adjusted_stay {
            return Some(DropRule::AdjustedStay);
        }
        if let Some(control) = self.control_region {
            let wanted = if r.informed {
                Region::AppenzellInnerrhoden
            } else {
                control
            };
            if r.region != wanted {
                return Some(DropRule::ControlRegion);
            }
        }
        if self.missing_policy == MissingPolicy::CompleteCase && !r.is_complete() {
            return Some(DropRule::MissingValues);
        }
        None
    }
}

const RULE_ORDER: [DropRule; 7] = [
    DropRule::MinNights,
    DropRule::AwareAtBooking,
    DropRule::GaTravelcard,
    DropRule::MaxDistance,
    DropRule::AdjustedStay,
    DropRule::ControlRegion,
    DropRule::MissingValues,
];

/// Applies the eligibility rules in fixed order. A record matching several
/// rules is attributed to the first one. Counts for every rule (including
/// zero) are appended to the dataset's filter log.
pub fn apply_eligibility_filters(d: &Dataset, cfg: &FilterConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut by_rule: Vec<Vec<String>> = vec![Vec::new(); RULE_ORDER.len()];
    let mut kept = Vec::with_capacity(d.len());
    for r in d.records() {
        match cfg.first_violation(r) {
            Some(rule) => {
                let k = RULE_ORDER.iter().position(|x| *x == rule).unwrap();
                by_rule[k].push(r.id.clone());
            }
            None => kept.push(r.clone()),
        }
    }
    let mut log = d.filter_log.clone();
    for (rule, ids) in RULE_ORDER.iter().zip(by_rule) {
        let active = match rule {
            DropRule::ControlRegion => cfg.control_region.is_some(),
            _ => true,
        };
        if active || !ids.is_empty() {
            log.record_rule(*rule, ids);
        }
    }
    Ok(d.derived(kept, log))
}
