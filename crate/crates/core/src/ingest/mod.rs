//! Raw event records to per-interval risk maps, flows and feature rows.

mod dataset;
mod synthetic;

pub use dataset::{risk_level_histogram, split_dataset, Dataset, PoiRecord, RawCity, RoadRecord, RsTiles, Split, WeatherRecord};
pub use synthetic::{generate_raw_city, generate_synthetic_city, SyntheticOptions};

use chrono::NaiveDateTime;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GridSpec, RiskMap, SpatialFeatures, TemporalFeatures, Weather, D_SPATIAL, D_ST, D_TEMPORAL, POI_CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Injured,
    Fatal,
}

impl Severity {
    pub fn risk(self) -> f32 {
        match self {
            Severity::Minor => 1.0,
            Severity::Injured => 2.0,
            Severity::Fatal => 3.0,
        }
    }

    pub fn parse(s: &str) -> Option<Severity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minor" | "1" => Some(Severity::Minor),
            "injured" | "2" => Some(Severity::Injured),
            "fatal" | "3" => Some(Severity::Fatal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccidentRecord {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup_time: NaiveDateTime,
    pub pickup_lat: f64,
    pub pickup_lon: f64,
    pub dropoff_time: NaiveDateTime,
    pub dropoff_lat: f64,
    pub dropoff_lon: f64,
}

/// Sums severity risk per region. Records outside the grid are skipped and
/// reported as the second value.
pub fn build_risk_map<'a>(
    records: impl IntoIterator<Item = &'a AccidentRecord>,
    grid: &GridSpec,
    interval: usize,
) -> (RiskMap, usize) {
    let mut map = RiskMap::zeros(1, interval, grid.num_regions());
    let mut dropped = 0;
    for r in records {
        match grid.locate(r.lat, r.lon) {
            Some(i) => map.values[i] += r.severity.risk(),
            None => dropped += 1,
        }
    }
    (map, dropped)
}

/// Per-region inflow and outflow of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Flows {
    pub inflow: Vec<f32>,
    pub outflow: Vec<f32>,
    pub skipped: usize,
}

/// Pickups inside `interval` count as outflow of their region, drop-offs
/// inside it as inflow. `interval_of` maps a timestamp to its interval.
pub fn build_flows<'a>(
    trips: impl IntoIterator<Item = &'a TripRecord>,
    grid: &GridSpec,
    interval: usize,
    interval_of: impl Fn(&NaiveDateTime) -> Option<usize>,
) -> Flows {
    let n = grid.num_regions();
    let mut f = Flows { inflow: vec![0.0; n], outflow: vec![0.0; n], skipped: 0 };
    for t in trips {
        if interval_of(&t.pickup_time) == Some(interval) {
            match grid.locate(t.pickup_lat, t.pickup_lon) {
                Some(a) => f.outflow[a] += 1.0,
                None => f.skipped += 1,
            }
        }
        if interval_of(&t.dropoff_time) == Some(interval) {
            match grid.locate(t.dropoff_lat, t.dropoff_lon) {
                Some(b) => f.inflow[b] += 1.0,
                None => f.skipped += 1,
            }
        }
    }
    f
}

/// City-wide climate of one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Climate {
    pub temperature: f32,
    pub weather: Weather,
}

/// One row per region: `[temporal | poi | temperature | weather | risk | inflow | outflow]`.
pub fn assemble_st_features(
    risk: &[f32],
    inflow: &[f32],
    outflow: &[f32],
    poi: &Array2<f32>,
    climate: Climate,
    temporal: TemporalFeatures,
) -> Result<Array2<f64>> {
    let n = risk.len();
    if inflow.len() != n || outflow.len() != n || poi.nrows() != n || poi.ncols() != POI_CATEGORIES {
        return Err(Error::Shape(format!(
            "risk {n}, inflow {}, outflow {}, poi {:?}",
            inflow.len(),
            outflow.len(),
            poi.dim()
        )));
    }
    let t = temporal.encode();
    let mut out = Array2::zeros((n, D_ST));
    for i in 0..n {
        let mut poi_row = [0.0f32; POI_CATEGORIES];
        for (k, p) in poi_row.iter_mut().enumerate() {
            *p = poi[[i, k]];
        }
        let s = SpatialFeatures {
            poi: poi_row,
            temperature: climate.temperature,
            weather: climate.weather,
            risk: risk[i],
            inflow: inflow[i],
            outflow: outflow[i],
        }
        .encode();
        let mut row = out.row_mut(i);
        for (k, v) in t.iter().chain(s.iter()).enumerate() {
            row[k] = *v;
        }
    }
    debug_assert_eq!(D_TEMPORAL + D_SPATIAL, D_ST);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::col;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn ts(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    fn accident(grid: &GridSpec, region: usize, severity: Severity) -> AccidentRecord {
        let (lat, lon) = grid.center(region);
        AccidentRecord { timestamp: ts(0, 10), lat, lon, severity }
    }

    #[test]
    fn risk_map_examples() {
        let grid = GridSpec::new(3, 3);
        let (m, d) = build_risk_map(&[], &grid, 0);
        assert_eq!((m.values, d), (vec![0.0; 9], 0));
        let (m, _) = build_risk_map(&[accident(&grid, 5, Severity::Fatal)], &grid, 0);
        assert_eq!(m.values[5], 3.0);
        assert_eq!(m.total(), 3.0);
        let recs = [accident(&grid, 2, Severity::Minor), accident(&grid, 2, Severity::Injured)];
        assert_eq!(build_risk_map(&recs, &grid, 0).0.values[2], 3.0);
        let mut out = accident(&grid, 0, Severity::Minor);
        out.lat += 1.0;
        assert_eq!(build_risk_map(&[out], &grid, 0).1, 1);
    }

    fn trip(grid: &GridSpec, a: usize, b: usize) -> TripRecord {
        let (pa, pb) = (grid.center(a), grid.center(b));
        TripRecord {
            pickup_time: ts(0, 5),
            pickup_lat: pa.0,
            pickup_lon: pa.1,
            dropoff_time: ts(0, 35),
            dropoff_lat: pb.0,
            dropoff_lon: pb.1,
        }
    }

    fn hour_of(t: &NaiveDateTime) -> Option<usize> {
        Some((t.and_utc().timestamp() - ts(0, 0).and_utc().timestamp()).div_euclid(3600) as usize)
    }

    #[test]
    fn flow_examples() {
        let grid = GridSpec::new(2, 2);
        let f = build_flows(&[trip(&grid, 1, 2)], &grid, 0, hour_of);
        assert_eq!((f.outflow[1], f.inflow[2]), (1.0, 1.0));
        let f = build_flows(&[], &grid, 0, hour_of);
        assert_eq!(f.inflow, vec![0.0; 4]);
        let trips = [trip(&grid, 1, 1), trip(&grid, 1, 1)];
        let f = build_flows(&trips, &grid, 0, hour_of);
        assert_eq!((f.inflow[1], f.outflow[1]), (2.0, 2.0));
        // a drop-off in the next hour only counts there
        let mut late = trip(&grid, 0, 3);
        late.dropoff_time = ts(1, 5);
        let f = build_flows(&[late.clone()], &grid, 0, hour_of);
        assert_eq!((f.outflow[0], f.inflow[3]), (1.0, 0.0));
        let f = build_flows(&[late], &grid, 1, hour_of);
        assert_eq!((f.outflow[0], f.inflow[3]), (0.0, 1.0));
    }

    #[test]
    fn assemble_examples() {
        let temporal = TemporalFeatures::new(8, 2, false).unwrap();
        let climate = Climate { temperature: 0.0, weather: Weather::Sunny };
        let poi = Array2::zeros((4, POI_CATEGORIES));
        let z = vec![0.0f32; 4];
        let st = assemble_st_features(&z, &z, &z, &poi, climate, temporal).unwrap();
        assert_eq!(st.dim(), (4, 48));
        let t = temporal.encode();
        for row in st.rows() {
            assert_eq!(&row.as_slice().unwrap()[..D_TEMPORAL], &t[..]);
            assert_eq!(row[col::WEATHER], 1.0);
            assert_eq!(row.iter().skip(D_TEMPORAL).filter(|&&v| v != 0.0).count(), 1);
        }
        assert!(assemble_st_features(&z[..3], &z, &z, &poi, climate, temporal).is_err());
        let mut poi = Array2::zeros((2, POI_CATEGORIES));
        poi[[0, 3]] = 1.0;
        poi[[1, 3]] = 1.0;
        let st = assemble_st_features(&[2.0, 2.0], &[1.0, 1.0], &[4.0, 4.0], &poi, climate, temporal).unwrap();
        assert_eq!(st.row(0), st.row(1));
        assert_eq!((st[[0, col::RISK]], st[[0, col::INFLOW]], st[[0, col::OUTFLOW]]), (2.0, 1.0, 4.0));
    }

    proptest! {
        #[test]
        fn risk_conservation(regions in proptest::collection::vec((0usize..16, 0usize..3), 0..50), outside in 0usize..5) {
            let grid = GridSpec::new(4, 4);
            let sev = [Severity::Minor, Severity::Injured, Severity::Fatal];
            let mut recs: Vec<_> = regions.iter().map(|&(r, s)| accident(&grid, r, sev[s])).collect();
            for _ in 0..outside {
                let mut a = accident(&grid, 0, Severity::Fatal);
                a.lon -= 1.0;
                recs.push(a);
            }
            let (m, dropped) = build_risk_map(&recs, &grid, 0);
            let expected: f32 = regions.iter().map(|&(_, s)| sev[s].risk()).sum();
            prop_assert_eq!(m.total() as f32, expected);
            prop_assert_eq!(dropped, outside);
        }

        #[test]
        fn flow_conservation(pairs in proptest::collection::vec((0usize..9, 0usize..9), 0..40)) {
            let grid = GridSpec::new(3, 3);
            let trips: Vec<_> = pairs.iter().map(|&(a, b)| trip(&grid, a, b)).collect();
            let f = build_flows(&trips, &grid, 0, hour_of);
            prop_assert_eq!(f.inflow.iter().sum::<f32>() as usize, pairs.len());
            prop_assert_eq!(f.outflow.iter().sum::<f32>() as usize, pairs.len());
        }
    }
}
