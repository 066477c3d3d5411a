use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    /// Average treatment effect over the sample.
    #[serde(rename = "ATE")]
    Ate,
    /// Average treatment effect for the overlap population.
    #[serde(rename = "ATO")]
    Ato,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ate => "ATE",
            Estimand::Ato => "ATO",
        })
    }
}

/// A treatment-effect estimate on the probability scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub standard_error: Option<f64>,
    pub p_value: Option<f64>,
    pub estimand: Estimand,
    pub method: String,
    pub n_used: usize,
    pub seed: Option<u64>,
}

impl EffectEstimate {
    pub fn new(estimate: f64, estimand: Estimand, method: impl Into<String>, n_used: usize) -> Self {
        EffectEstimate {
            estimate,
            standard_error: None,
            p_value: None,
            estimand,
            method: method.into(),
            n_used,
            seed: None,
        }
    }

    /// Normal-approximation confidence interval at the given level.
    pub fn confidence_interval(&self, level: f64) -> Option<(f64, f64)> {
        let se = self.standard_error?;
        let z = crate::stats::normal_quantile(0.5 + level / 2.0);
        Some((self.estimate - z * se, self.estimate + z * se))
    }

    pub fn covers(&self, truth: f64, level: f64) -> bool {
        self.confidence_interval(level)
            .is_some_and(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

impl fmt::Display for EffectEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {:.4}", self.method, self.estimand, self.estimate)?;
        if let Some(se) = self.standard_error {
            write!(f, " (se {se:.4}")?;
            if let Some(p) = self.p_value {
                write!(f, ", p {p:.4}")?;
            }
            write!(f, ")")?;
        }
        write!(f, ", n = {}", self.n_used)
    }
}
