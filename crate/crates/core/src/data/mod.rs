//! Survey records, CSV ingestion, eligibility filtering and descriptives.

mod enrich;
mod filter;
mod io;
mod record;
mod summary;

pub use enrich::{enrich_routes, read_trips, Route, RouteProvider, TableRouteProvider, Trip};
pub use filter::{apply_eligibility_filters, FilterConfig, MissingPolicy};
pub use io::{parse_dataset, parse_dataset_with, write_dataset, ParseOptions, SCHEMA};
pub use record::{Field, GuestRecord, Region};
pub use summary::{summarize_by_treatment, FieldSummary, GroupStat, TreatmentSummary};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Reason a record left the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropRule {
    MinNights,
    AwareAtBooking,
    GaTravelcard,
    MaxDistance,
    AdjustedStay,
    ControlRegion,
    MissingValues,
    CommonSupport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub id: String,
    pub rule: DropRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCount {
    pub rule: DropRule,
    pub dropped: usize,
}

/// Cumulative record of everything removed since ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLog {
    pub input_count: usize,
    pub counts: Vec<RuleCount>,
    pub dropped: Vec<DroppedRecord>,
}

impl FilterLog {
    pub fn new(input_count: usize) -> Self {
        FilterLog {
            input_count,
            counts: Vec::new(),
            dropped: Vec::new(),
        }
    }

    pub(crate) fn record_rule(&mut self, rule: DropRule, ids: Vec<String>) {
        match self.counts.iter_mut().find(|c| c.rule == rule) {
            Some(c) => c.dropped += ids.len(),
            None => self.counts.push(RuleCount {
                rule,
                dropped: ids.len(),
            }),
        }
        self.dropped
            .extend(ids.into_iter().map(|id| DroppedRecord { id, rule }));
    }

    pub fn dropped_by(&self, rule: DropRule) -> usize {
        self.counts
            .iter()
            .find(|c| c.rule == rule)
            .map_or(0, |c| c.dropped)
    }

    pub fn total_dropped(&self) -> usize {
        self.counts.iter().map(|c| c.dropped).sum()
    }
}

/// An ordered, id-unique collection of guest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<GuestRecord>,
    pub provenance: String,
    pub filter_log: FilterLog,
}

impl Dataset {
    pub fn new(records: Vec<GuestRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate(i + 1)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        let n = records.len();
        Ok(Dataset {
            records,
            provenance: provenance.into(),
            filter_log: FilterLog::new(n),
        })
    }

    /// Builds a dataset that keeps `log` from a parent dataset.
    pub(crate) fn derived(&self, records: Vec<GuestRecord>, log: FilterLog) -> Dataset {
        Dataset {
            records,
            provenance: self.provenance.clone(),
            filter_log: log,
        }
    }

    pub fn records(&self) -> &[GuestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn treatment(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.informed).collect()
    }

    pub fn outcome(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| if r.used_pt { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn group_counts(&self) -> (usize, usize) {
        let t = self.records.iter().filter(|r| r.informed).count();
        (t, self.records.len() - t)
    }

    /// Covariate matrix, one row per record. Fails on the first missing cell.
    pub fn covariate_matrix(&self, fields: &[Field]) -> Result<Vec<Vec<f64>>> {
        self.records
            .iter()
            .map(|r| {
                fields
                    .iter()
                    .map(|f| {
                        f.value(r).ok_or_else(|| Error::MissingValue {
                            field: f.name().to_string(),
                            id: r.id.clone(),
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Record indices ordered by id; estimators iterate in this order so that
    /// results do not depend on input row order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.sort_by(|&a, &b| self.records[a].id.cmp(&self.records[b].id));
        idx
    }

    /// Keeps the records whose flag is set; everything else is logged under
    /// `rule`.
    pub fn retain_flagged(&self, keep: &[bool], rule: DropRule) -> Dataset {
        let mut log = self.filter_log.clone();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (r, &k) in self.records.iter().zip(keep) {
            if k {
                kept.push(r.clone());
            } else {
                dropped.push(r.id.clone());
            }
        }
        log.record_rule(rule, dropped);
        self.derived(kept, log)
    }

    /// A sub-dataset without logging; used for subgroups and resamples.
    pub fn subset(&self, keep: &[bool]) -> Dataset {
        let records = self
            .records
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect::<Vec<_>>();
        let n = records.len();
        self.derived(records, FilterLog::new(n))
    }

    pub(crate) fn with_records(&self, records: Vec<GuestRecord>) -> Dataset {
        self.derived(records, self.filter_log.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_ids_rejected() {
        let err = Dataset::new(vec![GuestRecord::new("a"), GuestRecord::new("a")], "t").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn covariate_matrix_reports_missing_cell() {
        let mut r = GuestRecord::new("x");
        r.age = None;
        let d = Dataset::new(vec![r], "t").unwrap();
        let err = d.covariate_matrix(&Field::COVARIATES).unwrap_err();
        assert!(matches!(err, Error::MissingValue { field, .. } if field == "age"));
    }

    #[test]
    fn canonical_order_sorts_by_id() {
        let d = Dataset::new(
            vec![GuestRecord::new("c"), GuestRecord::new("a"), GuestRecord::new("b")],
            "t",
        )
        .unwrap();
        assert_eq!(d.canonical_order(), vec![1, 2, 0]);
    }
}
