use serde::{Deserialize, Serialize};

use super::record::Field;
use super::Dataset;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    /// `None` when the field is missing for the whole group.
    pub mean: Option<f64>,
    /// n-1 standard deviation; `None` below two observed values.
    pub sd: Option<f64>,
    pub n_observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub field: Field,
    pub treated: GroupStat,
    pub control: GroupStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSummary {
    pub n_treated: usize,
    pub n_control: usize,
    pub fields: Vec<FieldSummary>,
}

impl TreatmentSummary {
    pub fn get(&self, field: Field) -> Option<&FieldSummary> {
        self.fields.iter().find(|f| f.field == field)
    }
}

fn stat(values: &[f64]) -> GroupStat {
    GroupStat {
        mean: (!values.is_empty()).then(|| mean(values)),
        sd: sample_sd(values),
        n_observed: values.len(),
    }
}

/// Per-field mean and standard deviation for informed and uninformed guests.
/// Missing cells are skipped field by field.
pub fn summarize_by_treatment(d: &Dataset) -> Result<TreatmentSummary> {
    let (n_treated, n_control) = d.group_counts();
    if n_treated == 0 {
        return Err(Error::EmptyGroup("treated (informed = 1)".into()));
    }
    if n_control == 0 {
        return Err(Error::EmptyGroup("control (informed = 0)".into()));
    }
    let fields = Field::ALL
        .iter()
        .filter(|f| **f != Field::Informed)
        .map(|&field| {
            let (mut t, mut c) = (Vec::new(), Vec::new());
            for r in d.records() {
                if let Some(v) = field.value(r) {
                    if r.informed { t.push(v) } else { c.push(v) }
                }
            }
            FieldSummary {
                field,
                treated: stat(&t),
                control: stat(&c),
            }
        })
        .collect();
    Ok(TreatmentSummary {
        n_treated,
        n_control,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GuestRecord;

    #[test]
    fn four_record_fixture() {
        // ages: treated 40, 60 -> mean 50, sd sqrt(200); control 30, 33 -> mean 31.5, sd sqrt(4.5)
        let mut recs = Vec::new();
        for (id, informed, age, pt) in [("a", true, 40.0, true), ("b", true, 60.0, false), ("c", false, 30.0, false), ("d", false, 33.0, false)] {
            let mut r = GuestRecord::new(id);
            r.informed = informed;
            r.age = Some(age);
            r.used_pt = pt;
            recs.push(r);
        }
        let s = summarize_by_treatment(&Dataset::new(recs, "t").unwrap()).unwrap();
        assert_eq!((s.n_treated, s.n_control), (2, 2));
        let age = s.get(Field::Age).unwrap();
        assert_eq!(age.treated.mean, Some(50.0));
        assert!((age.treated.sd.unwrap() - 200f64.sqrt()).abs() < 1e-12);
        assert_eq!(age.control.mean, Some(31.5));
        assert!((age.control.sd.unwrap() - 4.5f64.sqrt()).abs() < 1e-12);
        let pt = s.get(Field::UsedPt).unwrap();
        assert_eq!(pt.treated.mean, Some(0.5));
        assert!((pt.treated.sd.unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(pt.control.sd, Some(0.0));
    }

    #[test]
    fn constant_column_has_zero_sd() {
        let mut recs = Vec::new();
        for (i, t) in [true, true, false, false].iter().enumerate() {
            let mut r = GuestRecord::new(format!("r{i}"));
            r.informed = *t;
            r.half_fare = true;
            recs.push(r);
        }
        let s = summarize_by_treatment(&Dataset::new(recs, "t").unwrap()).unwrap();
        let hf = s.get(Field::HalfFare).unwrap();
        assert_eq!((hf.treated.mean, hf.treated.sd), (Some(1.0), Some(0.0)));
        assert_eq!((hf.control.mean, hf.control.sd), (Some(1.0), Some(0.0)));
    }

    #[test]
    fn empty_group_is_named() {
        let d = Dataset::new(vec![GuestRecord::new("a")], "t").unwrap();
        let err = summarize_by_treatment(&d).unwrap_err();
        assert!(err.to_string().contains("treated"));
    }
}
