//! Route enrichment: fills car distance and the public-transport travel-time
//! penalty from an origin/destination lookup. Only a file-backed table ships.

use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct Route {
    pub distance_car_km: f64,
    pub tt_diff_min: f64,
}

pub trait RouteProvider {
    fn route(&self, origin: &str, destination: &str) -> Option<Route>;
}

#[derive(Debug, Clone, Default)]
pub struct TableRouteProvider {
    table: HashMap<(String, String), Route>,
}

#[derive(Deserialize)]
struct RouteRow {
    origin: String,
    destination: String,
    distance_car_km: f64,
    tt_diff_min: f64,
}

impl TableRouteProvider {
    /// Reads `origin,destination,distance_car_km,tt_diff_min` rows.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut table = HashMap::new();
        for row in rdr.deserialize::<RouteRow>() {
            let row = row?;
            table.insert(
                (row.origin, row.destination),
                Route {
                    distance_car_km: row.distance_car_km,
                    tt_diff_min: row.tt_diff_min,
                },
            );
        }
        Ok(TableRouteProvider { table })
    }

    pub fn insert(&mut self, origin: &str, destination: &str, route: Route) {
        self.table
            .insert((origin.to_string(), destination.to_string()), route);
    }
}

impl RouteProvider for TableRouteProvider {
    fn route(&self, origin: &str, destination: &str) -> Option<Route> {
        self.table
            .get(&(origin.to_string(), destination.to_string()))
            .copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Trip {
    pub id: String,
    pub origin: String,
    pub destination: String,
}

/// Reads `id,origin,destination` rows (postal codes).
pub fn read_trips<R: Read>(source: R) -> Result<Vec<Trip>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Overwrites `distance_car_km` and `tt_diff_min` for every record that has a
/// trip entry. A trip without a known route is an error.
pub fn enrich_routes(d: &Dataset, trips: &[Trip], provider: &dyn RouteProvider) -> Result<Dataset> {
    let by_id: HashMap<&str, &Trip> = trips.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut records = d.records().to_vec();
    for (i, r) in records.iter_mut().enumerate() {
        if let Some(t) = by_id.get(r.id.as_str()) {
            let route = provider.route(&t.origin, &t.destination).ok_or_else(|| {
                Error::Config(format!("no route from {} to {} for `{}`", t.origin, t.destination, r.id))
            })?;
            r.distance_car_km = route.distance_car_km;
            r.tt_diff_min = Some(route.tt_diff_min);
            r.validate(i + 1)?;
        }
    }
    Ok(d.with_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GuestRecord;

    #[test]
    fn table_lookup_fills_fields() {
        let p = TableRouteProvider::from_csv(
            "origin,destination,distance_car_km,tt_diff_min\n8001,9050,92.4,41\n".as_bytes(),
        )
        .unwrap();
        let trips = read_trips("id,origin,destination\na,8001,9050\n".as_bytes()).unwrap();
        let mut r = GuestRecord::new("a");
        r.tt_diff_min = None;
        let d = Dataset::new(vec![r, GuestRecord::new("b")], "t").unwrap();
        let out = enrich_routes(&d, &trips, &p).unwrap();
        assert_eq!(out.records()[0].distance_car_km, 92.4);
        assert_eq!(out.records()[0].tt_diff_min, Some(41.0));
        assert_eq!(out.records()[1], d.records()[1]);
    }

    #[test]
    fn unknown_route_is_error() {
        let p = TableRouteProvider::default();
        let trips = vec![Trip {
            id: "a".into(),
            origin: "1".into(),
            destination: "2".into(),
        }];
        let d = Dataset::new(vec![GuestRecord::new("a")], "t").unwrap();
        assert!(enrich_routes(&d, &trips, &p).is_err());
    }
}
