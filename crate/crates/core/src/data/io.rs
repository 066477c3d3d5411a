use std::collections::HashMap;
use std::io::{Read, Write};

use super::record::{GuestRecord, Region};
use super::Dataset;
use crate::error::{Error, Result};

/// Column names in canonical order.
pub const SCHEMA: [&str; 23] = [
    "id",
    "informed",
    "used_pt",
    "used_offer",
    "hotel_ratio_informed",
    "holiday_flat",
    "train_access",
    "alone",
    "family",
    "purpose_nature",
    "length_of_stay",
    "distance_car_km",
    "tt_diff_min",
    "swiss_residence",
    "car_owner",
    "half_fare",
    "ga_travelcard",
    "age",
    "woman",
    "high_income",
    "aware_at_booking",
    "adjusted_stay",
    "region",
];

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Ignore columns outside the schema instead of rejecting the header.
    pub allow_extra: bool,
    pub provenance: Option<String>,
}

pub fn parse_dataset<R: Read>(source: R) -> Result<Dataset> {
    parse_dataset_with(source, &ParseOptions::default())
}

pub fn parse_dataset_with<R: Read>(source: R, opts: &ParseOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if SCHEMA.contains(&h) {
            if pos.insert(SCHEMA[SCHEMA.iter().position(|s| *s == h).unwrap()], i).is_some() {
                return Err(Error::Schema(format!("duplicate column `{h}`")));
            }
        } else if !opts.allow_extra {
            return Err(Error::Schema(format!("unknown column `{h}`")));
        }
    }
    if let Some(missing) = SCHEMA.iter().find(|c| !pos.contains_key(*c)) {
        return Err(Error::Schema(format!("missing column `{missing}`")));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            message: e.to_string(),
        })?;
        let cells = RowCells {
            row: &row,
            pos: &pos,
            row_no,
        };
        let rec = cells.to_record()?;
        rec.validate(row_no)?;
        records.push(rec);
    }
    let provenance = opts.provenance.clone().unwrap_or_else(|| "csv".to_string());
    Dataset::new(records, provenance)
}

struct RowCells<'a> {
    row: &'a csv::StringRecord,
    pos: &'a HashMap<&'static str, usize>,
    row_no: usize,
}

impl RowCells<'_> {
    fn cell(&self, name: &str) -> &str {
        self.row.get(self.pos[name]).unwrap_or("")
    }

    fn required(&self, name: &str) -> Result<&str> {
        let c = self.cell(name);
        if c.is_empty() {
            return Err(Error::MalformedRow {
                row: self.row_no,
                message: format!("empty cell in non-nullable column `{name}`"),
            });
        }
        Ok(c)
    }

    fn parse_bool(&self, name: &str, c: &str) -> Result<bool> {
        match c {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::OutOfRange {
                row: self.row_no,
                field: name.to_string(),
                message: format!("`{other}` is not 0 or 1"),
            }),
        }
    }

    fn parse_f64(&self, name: &str, c: &str) -> Result<f64> {
        c.parse::<f64>().map_err(|_| Error::MalformedRow {
            row: self.row_no,
            message: format!("`{c}` in column `{name}` is not a number"),
        })
    }

    fn bool(&self, name: &str) -> Result<bool> {
        let c = self.required(name)?;
        self.parse_bool(name, c)
    }

    fn opt_bool(&self, name: &str) -> Result<Option<bool>> {
        match self.cell(name) {
            "" => Ok(None),
            c => self.parse_bool(name, c).map(Some),
        }
    }

    fn num(&self, name: &str) -> Result<f64> {
        let c = self.required(name)?;
        self.parse_f64(name, c)
    }

    fn opt_num(&self, name: &str) -> Result<Option<f64>> {
        match self.cell(name) {
            "" => Ok(None),
            c => self.parse_f64(name, c).map(Some),
        }
    }

    fn to_record(&self) -> Result<GuestRecord> {
        let nights = self.required("length_of_stay")?;
        let length_of_stay = nights.parse::<u32>().map_err(|_| Error::OutOfRange {
            row: self.row_no,
            field: "length_of_stay".into(),
            message: format!("`{nights}` is not a positive integer"),
        })?;
        let region: Region = self.required("region")?.parse().map_err(|_| Error::OutOfRange {
            row: self.row_no,
            field: "region".into(),
            message: format!("unknown region `{}`", self.cell("region")),
        })?;
        Ok(GuestRecord {
            id: self.required("id")?.to_string(),
            informed: self.bool("informed")?,
            used_pt: self.bool("used_pt")?,
            used_offer: self.bool("used_offer")?,
            hotel_ratio_informed: self.num("hotel_ratio_informed")?,
            holiday_flat: self.bool("holiday_flat")?,
            train_access: self.bool("train_access")?,
            alone: self.bool("alone")?,
            family: self.bool("family")?,
            purpose_nature: self.bool("purpose_nature")?,
            length_of_stay,
            distance_car_km: self.num("distance_car_km")?,
            tt_diff_min: self.opt_num("tt_diff_min")?,
            swiss_residence: self.bool("swiss_residence")?,
            car_owner: self.opt_bool("car_owner")?,
            half_fare: self.bool("half_fare")?,
            ga_travelcard: self.bool("ga_travelcard")?,
            age: self.opt_num("age")?,
            woman: self.opt_bool("woman")?,
            high_income: self.opt_bool("high_income")?,
            aware_at_booking: self.bool("aware_at_booking")?,
            adjusted_stay: self.bool("adjusted_stay")?,
            region,
        })
    }
}

fn b(v: bool) -> String {
    if v { "1" } else { "0" }.to_string()
}

fn ob(v: Option<bool>) -> String {
    v.map(b).unwrap_or_default()
}

fn of(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the canonical column order. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_dataset<W: Write>(d: &Dataset, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SCHEMA)?;
    for r in d.records() {
        w.write_record([
            r.id.clone(),
            b(r.informed),
            b(r.used_pt),
            b(r.used_offer),
            r.hotel_ratio_informed.to_string(),
            b(r.holiday_flat),
            b(r.train_access),
            b(r.alone),
            b(r.family),
            b(r.purpose_nature),
            r.length_of_stay.to_string(),
            r.distance_car_km.to_string(),
            of(r.tt_diff_min),
            b(r.swiss_residence),
            ob(r.car_owner),
            b(r.half_fare),
            b(r.ga_travelcard),
            of(r.age),
            ob(r.woman),
            ob(r.high_income),
            b(r.aware_at_booking),
            b(r.adjusted_stay),
            r.region.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        SCHEMA.join(",")
    }

    const ROW: &str = "g1,1,1,1,0.6,0,1,0,0,1,4,120.5,80,1,1,1,0,61,1,0,0,0,appenzell_innerrhoden";

    #[test]
    fn header_only_gives_empty_dataset() {
        let d = parse_dataset(format!("{}\n", header()).as_bytes()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.filter_log.input_count, 0);
    }

    #[test]
    fn unknown_column_rejected_unless_allowed() {
        let src = format!("{},extra\n{},x\n", header(), ROW);
        let err = parse_dataset(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let opts = ParseOptions {
            allow_extra: true,
            ..Default::default()
        };
        let d = parse_dataset_with(src.as_bytes(), &opts).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn missing_column_rejected() {
        let h = SCHEMA[..22].join(",");
        let err = parse_dataset(format!("{h}\n").as_bytes()).unwrap_err();
        assert!(err.to_string().contains("region"));
    }

    #[test]
    fn columns_may_come_in_any_order() {
        let mut cols: Vec<&str> = SCHEMA.to_vec();
        let vals: Vec<&str> = ROW.split(',').collect();
        let mut pairs: Vec<(&str, &str)> = cols.drain(..).zip(vals).collect();
        pairs.reverse();
        let h: Vec<&str> = pairs.iter().map(|p| p.0).collect();
        let v: Vec<&str> = pairs.iter().map(|p| p.1).collect();
        let d = parse_dataset(format!("{}\n{}\n", h.join(","), v.join(",")).as_bytes()).unwrap();
        assert_eq!(d.records()[0].age, Some(61.0));
        assert_eq!(d.records()[0].distance_car_km, 120.5);
    }

    #[test]
    fn blank_nullable_cell_is_missing() {
        let row = ROW.replace(",61,", ",,");
        let d = parse_dataset(format!("{}\n{}\n", header(), row).as_bytes()).unwrap();
        assert_eq!(d.records()[0].age, None);
    }

    #[test]
    fn blank_required_cell_is_error_with_row() {
        let row = ROW.replace(",120.5,", ",,");
        let src = format!("{}\n{}\n{}\n", header(), ROW.replace("g1", "g0"), row);
        let err = parse_dataset(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err}");
        assert!(err.to_string().contains("distance_car_km"));
    }

    #[test]
    fn ratio_above_one_is_range_error() {
        let row = ROW.replace(",0.6,", ",1.3,");
        let err = parse_dataset(format!("{}\n{}\n", header(), row).as_bytes()).unwrap_err();
        match err {
            Error::OutOfRange { field, row, .. } => {
                assert_eq!(field, "hotel_ratio_informed");
                assert_eq!(row, 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_binary_flag_is_range_error() {
        let row = ROW.replacen("g1,1,", "g1,2,", 1);
        let err = parse_dataset(format!("{}\n{}\n", header(), row).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { ref field, .. } if field == "informed"));
    }

    #[test]
    fn short_row_is_malformed() {
        let src = format!("{}\ng1,1,1\n", header());
        let err = parse_dataset(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let src = format!("{}\n{}\n{}\n", header(), ROW, ROW);
        assert!(matches!(parse_dataset(src.as_bytes()), Err(Error::DuplicateId(_))));
    }
}
