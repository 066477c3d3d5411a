//! Policy quantities derived from an effect estimate: the share of offer
//! users attributable to the offer, and CO2 saved per switching guest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kilograms of CO2 saved by one round trip made by public transport instead
/// of car. Distances in km, emission factors in g per passenger-km. Negative
/// when the public-transport leg emits more.
pub fn co2_savings_per_switcher(dist_car_km: f64, dist_pt_km: f64, ef_car_g_per_pkm: f64, ef_pt_g_per_pkm: f64) -> Result<f64> {
    for (name, v) in [
        ("dist_car_km", dist_car_km),
        ("dist_pt_km", dist_pt_km),
        ("ef_car_g_per_pkm", ef_car_g_per_pkm),
        ("ef_pt_g_per_pkm", ef_pt_g_per_pkm),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    Ok(2.0 * (dist_car_km * ef_car_g_per_pkm - dist_pt_km * ef_pt_g_per_pkm) / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Fraction of offer users who would not have used public transport
    /// without the offer.
    pub attributed_share: f64,
    /// Savings relative to annual per-capita transport emissions. Empty when
    /// no savings figure is given.
    pub national_share: Option<f64>,
}

pub fn attribution_summary(ate: f64, uptake_share: f64, savings_kg: Option<f64>, per_capita_transport_kg: f64) -> Result<Attribution> {
    if !(uptake_share > 0.0 && uptake_share <= 1.0) {
        return Err(Error::Config(format!("uptake_share must lie in (0,1], got {uptake_share}")));
    }
    if per_capita_transport_kg.is_nan() || per_capita_transport_kg <= 0.0 {
        return Err(Error::Config("per_capita_transport_kg must be positive".into()));
    }
    Ok(Attribution {
        attributed_share: ate / uptake_share,
        national_share: savings_kg.map(|s| s / per_capita_transport_kg),
    })
}

/// Constants for the impact stage. Defaults: mobitool factors for a
/// mid-size car and the Swiss rail mix, mean one-way distances of the
/// sample, annual per-capita transport emissions, and the observed offer
/// uptake among informed guests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactConfig {
    pub ef_car_g_per_pkm: f64,
    pub ef_pt_g_per_pkm: f64,
    pub dist_car_km: f64,
    pub dist_pt_km: f64,
    pub per_capita_transport_kg: f64,
    pub uptake_share: f64,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        ImpactConfig {
            ef_car_g_per_pkm: 186.4,
            ef_pt_g_per_pkm: 12.4,
            dist_car_km: 165.8,
            dist_pt_km: 187.7,
            per_capita_transport_kg: 1620.0,
            uptake_share: 0.413,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSummary {
    pub method: String,
    pub ate: f64,
    pub savings_kg_per_switcher: f64,
    pub attributed_share: f64,
    pub national_share: f64,
}

impl ImpactConfig {
    pub fn summarize(&self, method: &str, ate: f64) -> Result<ImpactSummary> {
        let savings = co2_savings_per_switcher(self.dist_car_km, self.dist_pt_km, self.ef_car_g_per_pkm, self.ef_pt_g_per_pkm)?;
        let a = attribution_summary(ate, self.uptake_share, Some(savings), self.per_capita_transport_kg)?;
        Ok(ImpactSummary {
            method: method.to_string(),
            ate,
            savings_kg_per_switcher: savings,
            attributed_share: a.attributed_share,
            national_share: a.national_share.unwrap_or(f64::NAN),
        })
    }
}
