use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    AppenzellInnerrhoden,
    AusserrhodenToggenburg,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::AppenzellInnerrhoden => "appenzell_innerrhoden",
            Region::AusserrhodenToggenburg => "ausserrhoden_toggenburg",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appenzell_innerrhoden" => Ok(Region::AppenzellInnerrhoden),
            "ausserrhoden_toggenburg" => Ok(Region::AusserrhodenToggenburg),
            other => Err(Error::Config(format!("unknown region `{other}`"))),
        }
    }
}

/// One survey respondent.
///
/// `informed` is the treatment, `used_pt` the outcome. The five optional
/// fields are the only ones the survey leaves unanswered in practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuestRecord {
    pub id: String,
    pub informed: bool,
    pub used_pt: bool,
    pub used_offer: bool,
    pub hotel_ratio_informed: f64,
    pub holiday_flat: bool,
    pub train_access: bool,
    pub alone: bool,
    pub family: bool,
    pub purpose_nature: bool,
    pub length_of_stay: u32,
    pub distance_car_km: f64,
    pub tt_diff_min: Option<f64>,
    pub swiss_residence: bool,
    pub car_owner: Option<bool>,
    pub half_fare: bool,
    pub ga_travelcard: bool,
    pub age: Option<f64>,
    pub woman: Option<bool>,
    pub high_income: Option<bool>,
    pub aware_at_booking: bool,
    pub adjusted_stay: bool,
    pub region: Region,
}

impl GuestRecord {
    /// A record with neutral defaults; handy for fixtures.
    pub fn new(id: impl Into<String>) -> Self {
        GuestRecord {
            id: id.into(),
            informed: false,
            used_pt: false,
            used_offer: false,
            hotel_ratio_informed: 0.5,
            holiday_flat: false,
            train_access: true,
            alone: false,
            family: false,
            purpose_nature: true,
            length_of_stay: 4,
            distance_car_km: 150.0,
            tt_diff_min: Some(90.0),
            swiss_residence: true,
            car_owner: Some(true),
            half_fare: true,
            ga_travelcard: false,
            age: Some(55.0),
            woman: Some(false),
            high_income: Some(false),
            aware_at_booking: false,
            adjusted_stay: false,
            region: Region::AppenzellInnerrhoden,
        }
    }

    pub fn missing_fields(&self) -> Vec<Field> {
        Field::NULLABLE
            .iter()
            .copied()
            .filter(|f| f.value(self).is_none())
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        Field::NULLABLE.iter().all(|f| f.value(self).is_some())
    }

    /// Checks the per-record invariants. `row` is used for error reporting.
    pub fn validate(&self, row: usize) -> Result<()> {
        let range = |field: Field, message: String| Error::OutOfRange {
            row,
            field: field.name().to_string(),
            message,
        };
        if self.id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "empty id".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.hotel_ratio_informed) {
            return Err(range(
                Field::HotelRatioInformed,
                format!("{} not in [0,1]", self.hotel_ratio_informed),
            ));
        }
        if !(self.distance_car_km >= 0.0 && self.distance_car_km.is_finite()) {
            return Err(range(
                Field::DistanceCarKm,
                format!("{} is negative or not finite", self.distance_car_km),
            ));
        }
        if self.length_of_stay < 1 {
            return Err(range(Field::LengthOfStay, "must be at least 1".into()));
        }
        if let Some(t) = self.tt_diff_min {
            if !t.is_finite() {
                return Err(range(Field::TtDiffMin, "not finite".into()));
            }
        }
        if let Some(a) = self.age {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(range(Field::Age, format!("{a} is negative or not finite")));
            }
        }
        if self.used_offer && !(self.informed || self.aware_at_booking) {
            return Err(range(
                Field::UsedOffer,
                "offer used by a guest neither informed nor aware at booking".into(),
            ));
        }
        Ok(())
    }
}

/// Numeric and binary columns of the survey schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Informed,
    UsedPt,
    UsedOffer,
    HotelRatioInformed,
    HolidayFlat,
    TrainAccess,
    Alone,
    Family,
    PurposeNature,
    LengthOfStay,
    DistanceCarKm,
    TtDiffMin,
    SwissResidence,
    CarOwner,
    HalfFare,
    GaTravelcard,
    Age,
    Woman,
    HighIncome,
    AwareAtBooking,
    AdjustedStay,
}

impl Field {
    pub const ALL: [Field; 21] = [
        Field::Informed,
        Field::UsedPt,
        Field::UsedOffer,
        Field::HotelRatioInformed,
        Field::HolidayFlat,
        Field::TrainAccess,
        Field::Alone,
        Field::Family,
        Field::PurposeNature,
        Field::LengthOfStay,
        Field::DistanceCarKm,
        Field::TtDiffMin,
        Field::SwissResidence,
        Field::CarOwner,
        Field::HalfFare,
        Field::GaTravelcard,
        Field::Age,
        Field::Woman,
        Field::HighIncome,
        Field::AwareAtBooking,
        Field::AdjustedStay,
    ];

    /// Fields that may be left blank.
    pub const NULLABLE: [Field; 5] = [
        Field::Age,
        Field::Woman,
        Field::HighIncome,
        Field::CarOwner,
        Field::TtDiffMin,
    ];

    /// Matching covariates: accommodation, trip, mobility-tool and
    /// socio-demographic characteristics. The GA travelcard is excluded
    /// because holders are filtered out of the estimation sample.
    pub const COVARIATES: [Field; 15] = [
        Field::HotelRatioInformed,
        Field::HolidayFlat,
        Field::TrainAccess,
        Field::Alone,
        Field::Family,
        Field::PurposeNature,
        Field::LengthOfStay,
        Field::DistanceCarKm,
        Field::TtDiffMin,
        Field::SwissResidence,
        Field::CarOwner,
        Field::HalfFare,
        Field::Age,
        Field::Woman,
        Field::HighIncome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Informed => "informed",
            Field::UsedPt => "used_pt",
            Field::UsedOffer => "used_offer",
            Field::HotelRatioInformed => "hotel_ratio_informed",
            Field::HolidayFlat => "holiday_flat",
            Field::TrainAccess => "train_access",
            Field::Alone => "alone",
            Field::Family => "family",
            Field::PurposeNature => "purpose_nature",
            Field::LengthOfStay => "length_of_stay",
            Field::DistanceCarKm => "distance_car_km",
            Field::TtDiffMin => "tt_diff_min",
            Field::SwissResidence => "swiss_residence",
            Field::CarOwner => "car_owner",
            Field::HalfFare => "half_fare",
            Field::GaTravelcard => "ga_travelcard",
            Field::Age => "age",
            Field::Woman => "woman",
            Field::HighIncome => "high_income",
            Field::AwareAtBooking => "aware_at_booking",
            Field::AdjustedStay => "adjusted_stay",
        }
    }

    pub fn from_name(name: &str) -> Option<Field> {
        Field::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn is_binary(self) -> bool {
        !matches!(
            self,
            Field::HotelRatioInformed
                | Field::LengthOfStay
                | Field::DistanceCarKm
                | Field::TtDiffMin
                | Field::Age
        )
    }

    pub fn is_nullable(self) -> bool {
        Field::NULLABLE.contains(&self)
    }

    pub fn value(self, r: &GuestRecord) -> Option<f64> {
        let b = |v: bool| Some(if v { 1.0 } else { 0.0 });
        let ob = |v: Option<bool>| v.map(|x| if x { 1.0 } else { 0.0 });
        match self {
            Field::Informed => b(r.informed),
            Field::UsedPt => b(r.used_pt),
            Field::UsedOffer => b(r.used_offer),
            Field::HotelRatioInformed => Some(r.hotel_ratio_informed),
            Field::HolidayFlat => b(r.holiday_flat),
            Field::TrainAccess => b(r.train_access),
            Field::Alone => b(r.alone),
            Field::Family => b(r.family),
            Field::PurposeNature => b(r.purpose_nature),
            Field::LengthOfStay => Some(r.length_of_stay as f64),
            Field::DistanceCarKm => Some(r.distance_car_km),
            Field::TtDiffMin => r.tt_diff_min,
            Field::SwissResidence => b(r.swiss_residence),
            Field::CarOwner => ob(r.car_owner),
            Field::HalfFare => b(r.half_fare),
            Field::GaTravelcard => b(r.ga_travelcard),
            Field::Age => r.age,
            Field::Woman => ob(r.woman),
            Field::HighIncome => ob(r.high_income),
            Field::AwareAtBooking => b(r.aware_at_booking),
            Field::AdjustedStay => b(r.adjusted_stay),
        }
    }

    /// Writes a value back into the record. Binary fields take 0/1.
    pub(crate) fn set(self, r: &mut GuestRecord, v: Option<f64>) {
        let to_bool = |x: f64| x >= 0.5;
        let req = |v: Option<f64>| v.expect("non-nullable field cannot be cleared");
        match self {
            Field::Informed => r.informed = to_bool(req(v)),
            Field::UsedPt => r.used_pt = to_bool(req(v)),
            Field::UsedOffer => r.used_offer = to_bool(req(v)),
            Field::HotelRatioInformed => r.hotel_ratio_informed = req(v),
            Field::HolidayFlat => r.holiday_flat = to_bool(req(v)),
            Field::TrainAccess => r.train_access = to_bool(req(v)),
            Field::Alone => r.alone = to_bool(req(v)),
            Field::Family => r.family = to_bool(req(v)),
            Field::PurposeNature => r.purpose_nature = to_bool(req(v)),
            Field::LengthOfStay => r.length_of_stay = req(v).round().max(1.0) as u32,
            Field::DistanceCarKm => r.distance_car_km = req(v),
            Field::TtDiffMin => r.tt_diff_min = v,
            Field::SwissResidence => r.swiss_residence = to_bool(req(v)),
            Field::CarOwner => r.car_owner = v.map(to_bool),
            Field::HalfFare => r.half_fare = to_bool(req(v)),
            Field::GaTravelcard => r.ga_travelcard = to_bool(req(v)),
            Field::Age => r.age = v,
            Field::Woman => r.woman = v.map(to_bool),
            Field::HighIncome => r.high_income = v.map(to_bool),
            Field::AwareAtBooking => r.aware_at_booking = to_bool(req(v)),
            Field::AdjustedStay => r.adjusted_stay = to_bool(req(v)),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Field::from_name(s).ok_or_else(|| Error::Config(format!("unknown field `{s}`")))
    }
}
