use std::fs;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{build_flows, build_risk_map, AccidentRecord, Climate, Severity, TripRecord};
use crate::error::{Error, Result};
use crate::storage::{read_tensor, write_atomic, write_tensor};
use crate::types::{first_target, GridSpec, TemporalFeatures, Weather, POI_CATEGORIES, ROAD_TYPES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub lat: f64,
    pub lon: f64,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadRecord {
    pub lat: f64,
    pub lon: f64,
    pub road_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: NaiveDateTime,
    pub temperature: f32,
    pub condition: Weather,
}

/// Remote-sensing tiles, one per region, each `height x width x channels`
/// stored pixel-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct RsTiles {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct RsIndex {
    width: usize,
    height: usize,
    channels: usize,
    /// `(region, offset in f32 elements)`
    tiles: Vec<(usize, usize)>,
}

impl RsTiles {
    pub fn tile_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.tile_len()
    }

    pub fn tile(&self, region: usize) -> &[f32] {
        let l = self.tile_len();
        &self.data[region * l..(region + 1) * l]
    }

    /// Tiles as a `(count*height*width) x channels` matrix.
    pub fn to_matrix(&self, regions: &[usize]) -> Array2<f64> {
        let px = self.width * self.height;
        let mut m = Array2::zeros((regions.len() * px, self.channels));
        for (k, &r) in regions.iter().enumerate() {
            for (p, chunk) in self.tile(r).chunks_exact(self.channels).enumerate() {
                for (c, v) in chunk.iter().enumerate() {
                    m[[k * px + p, c]] = *v as f64;
                }
            }
        }
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(&dir.join("rs_tiles.bin"), &bytes)?;
        let index = RsIndex {
            width: self.width,
            height: self.height,
            channels: self.channels,
            tiles: (0..self.count()).map(|r| (r, r * self.tile_len())).collect(),
        };
        write_atomic(&dir.join("rs_tiles.index.json"), serde_json::to_string(&index)?.as_bytes())
    }

    pub fn load(dir: &Path, regions: usize) -> Result<Option<Self>> {
        let idx_path = dir.join("rs_tiles.index.json");
        if !idx_path.exists() {
            return Ok(None);
        }
        let index: RsIndex = serde_json::from_slice(&fs::read(idx_path)?)?;
        let bytes = fs::read(dir.join("rs_tiles.bin"))?;
        let raw: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let l = index.width * index.height * index.channels;
        let mut data = vec![0.0f32; regions * l];
        let mut seen = vec![false; regions];
        for (region, offset) in index.tiles {
            if region >= regions || offset + l > raw.len() {
                return Err(Error::Format(format!("rs tile {region} at {offset} out of range")));
            }
            data[region * l..(region + 1) * l].copy_from_slice(&raw[offset..offset + l]);
            seen[region] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("no rs tile for region {missing}")));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("rs tile values must lie in [0, 1]".into()));
        }
        Ok(Some(RsTiles { width: index.width, height: index.height, channels: index.channels, data }))
    }
}

/// Unaggregated city data, as read from CSV or produced by the generator.
#[derive(Debug, Clone)]
pub struct RawCity {
    pub grid: GridSpec,
    pub start: NaiveDateTime,
    pub interval_hours: usize,
    pub num_intervals: usize,
    pub accidents: Vec<AccidentRecord>,
    pub trips: Vec<TripRecord>,
    pub pois: Vec<PoiRecord>,
    pub roads: Option<Vec<RoadRecord>>,
    pub weather: Vec<WeatherRecord>,
    pub holidays: Vec<NaiveDate>,
    pub rs: Option<RsTiles>,
}

/// Interval-aligned tensors for one city at the finest granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub start: NaiveDateTime,
    pub interval_hours: usize,
    /// `intervals x N`
    pub risk: Array2<f32>,
    pub inflow: Array2<f32>,
    pub outflow: Array2<f32>,
    /// `N x 7`, rows are distributions or all-zero.
    pub poi: Array2<f32>,
    /// `N x 4`, same convention as `poi`.
    pub road: Option<Array2<f32>>,
    pub weather: Vec<Weather>,
    /// Raw temperature per interval.
    pub temperature: Vec<f32>,
    pub holidays: Vec<NaiveDate>,
    pub rs: Option<RsTiles>,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    version: u32,
    grid: GridSpec,
    start: NaiveDateTime,
    interval_hours: usize,
    num_intervals: usize,
    weather: Vec<Weather>,
    temperature: Vec<f32>,
    holidays: Vec<NaiveDate>,
    has_road: bool,
}

fn normalized_counts(counts: Array2<f32>) -> Array2<f32> {
    let mut out = counts;
    for mut row in out.rows_mut() {
        let s: f32 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
    out
}

impl Dataset {
    pub fn num_intervals(&self) -> usize {
        self.risk.nrows()
    }

    pub fn num_regions(&self) -> usize {
        self.grid.num_regions()
    }

    pub fn timestamp(&self, interval: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours((interval * self.interval_hours) as i64)
    }

    pub fn interval_of(&self, ts: &NaiveDateTime) -> Option<usize> {
        interval_index(self.start, self.interval_hours, self.num_intervals(), ts)
    }

    pub fn temporal(&self, interval: usize) -> TemporalFeatures {
        let ts = self.timestamp(interval);
        TemporalFeatures {
            hour: ts.hour() as u8,
            day_of_week: ts.weekday().num_days_from_monday() as u8,
            holiday: self.holidays.contains(&ts.date()),
        }
    }

    pub fn climate(&self, interval: usize, temp_range: (f32, f32)) -> Climate {
        let (lo, hi) = temp_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        Climate { temperature: (self.temperature[interval] - lo) / span, weather: self.weather[interval] }
    }

    pub fn risk_row(&self, interval: usize) -> &[f32] {
        self.risk.row(interval).to_slice().unwrap()
    }

    pub fn from_raw(raw: RawCity) -> Result<Self> {
        raw.grid.validate()?;
        let (n, t_count) = (raw.grid.num_regions(), raw.num_intervals);
        if t_count == 0 {
            return Err(Error::InvalidInput("city has no intervals".into()));
        }
        let slot = |ts: &NaiveDateTime| interval_index(raw.start, raw.interval_hours, t_count, ts);

        let mut acc_buckets: Vec<Vec<&AccidentRecord>> = vec![Vec::new(); t_count];
        for a in &raw.accidents {
            if let Some(t) = slot(&a.timestamp) {
                acc_buckets[t].push(a);
            }
        }
        let mut trip_buckets: Vec<Vec<&TripRecord>> = vec![Vec::new(); t_count];
        for tr in &raw.trips {
            if tr.dropoff_time < tr.pickup_time {
                return Err(Error::InvalidInput(format!("trip drops off before pickup at {}", tr.pickup_time)));
            }
            let (a, b) = (slot(&tr.pickup_time), slot(&tr.dropoff_time));
            if let Some(a) = a {
                trip_buckets[a].push(tr);
            }
            if let Some(b) = b.filter(|&b| Some(b) != a) {
                trip_buckets[b].push(tr);
            }
        }

        let mut risk = Array2::zeros((t_count, n));
        let mut inflow = Array2::zeros((t_count, n));
        let mut outflow = Array2::zeros((t_count, n));
        let (mut dropped, mut skipped) = (0, 0);
        for t in 0..t_count {
            let (map, d) = build_risk_map(acc_buckets[t].iter().copied(), &raw.grid, t);
            dropped += d;
            risk.row_mut(t).assign(&ndarray::ArrayView1::from(&map.values));
            let f = build_flows(trip_buckets[t].iter().copied(), &raw.grid, t, slot);
            skipped += f.skipped;
            inflow.row_mut(t).assign(&ndarray::ArrayView1::from(&f.inflow));
            outflow.row_mut(t).assign(&ndarray::ArrayView1::from(&f.outflow));
        }
        if dropped > 0 {
            warn!("{dropped} accident record(s) outside the grid were dropped");
        }
        if skipped > 0 {
            warn!("{skipped} trip endpoint(s) outside the grid were skipped");
        }

        let mut poi = Array2::zeros((n, POI_CATEGORIES));
        for p in &raw.pois {
            if p.category >= POI_CATEGORIES {
                return Err(Error::InvalidInput(format!("POI category {} out of range", p.category)));
            }
            if let Some(i) = raw.grid.locate(p.lat, p.lon) {
                poi[[i, p.category]] += 1.0;
            }
        }
        let road = match &raw.roads {
            Some(roads) => {
                let mut m = Array2::zeros((n, ROAD_TYPES));
                for r in roads {
                    if r.road_type >= ROAD_TYPES {
                        return Err(Error::InvalidInput(format!("road type {} out of range", r.road_type)));
                    }
                    if let Some(i) = raw.grid.locate(r.lat, r.lon) {
                        m[[i, r.road_type]] += 1.0;
                    }
                }
                Some(normalized_counts(m))
            }
            None => None,
        };

        let mut weather = vec![Weather::Sunny; t_count];
        let mut temperature = vec![f32::NAN; t_count];
        let mut recs: Vec<&WeatherRecord> = raw.weather.iter().collect();
        recs.sort_by_key(|w| w.timestamp);
        for w in recs {
            if let Some(t) = slot(&w.timestamp) {
                weather[t] = w.condition;
                temperature[t] = w.temperature;
            }
        }
        // Forward fill, then back fill the leading gap.
        let mut last: Option<(Weather, f32)> = None;
        for t in 0..t_count {
            if temperature[t].is_nan() {
                if let Some((w, c)) = last {
                    weather[t] = w;
                    temperature[t] = c;
                }
            } else {
                last = Some((weather[t], temperature[t]));
            }
        }
        if let Some(first) = temperature.iter().position(|v| !v.is_nan()) {
            let (w, c) = (weather[first], temperature[first]);
            for t in 0..first {
                weather[t] = w;
                temperature[t] = c;
            }
        } else {
            temperature.iter_mut().for_each(|v| *v = 0.0);
        }

        if let Some(rs) = &raw.rs {
            if rs.count() != n {
                return Err(Error::InvalidInput(format!("{} rs tiles for {n} regions", rs.count())));
            }
        }

        Ok(Dataset {
            grid: raw.grid,
            start: raw.start,
            interval_hours: raw.interval_hours,
            risk,
            inflow,
            outflow,
            poi: normalized_counts(poi),
            road,
            weather,
            temperature,
            holidays: raw.holidays,
            rs: raw.rs,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (t, n) = self.risk.dim();
        let meta = DatasetMeta {
            version: 1,
            grid: self.grid,
            start: self.start,
            interval_hours: self.interval_hours,
            num_intervals: t,
            weather: self.weather.clone(),
            temperature: self.temperature.clone(),
            holidays: self.holidays.clone(),
            has_road: self.road.is_some(),
        };
        write_atomic(&dir.join("dataset.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
        write_tensor(dir, "risk_g1", &[t, n], self.risk.as_slice().unwrap())?;
        write_tensor(dir, "inflow_g1", &[t, n], self.inflow.as_slice().unwrap())?;
        write_tensor(dir, "outflow_g1", &[t, n], self.outflow.as_slice().unwrap())?;
        write_tensor(dir, "poi_g1", &[n, POI_CATEGORIES], self.poi.as_slice().unwrap())?;
        if let Some(road) = &self.road {
            write_tensor(dir, "road_g1", &[n, ROAD_TYPES], road.as_slice().unwrap())?;
        }
        if let Some(rs) = &self.rs {
            rs.save(dir)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_slice(&fs::read(dir.join("dataset.json"))?)?;
        let n = meta.grid.num_regions();
        let t = meta.num_intervals;
        let load2 = |name: &str, shape: (usize, usize)| -> Result<Array2<f32>> {
            let (s, data) = read_tensor(dir, name)?;
            if s != [shape.0, shape.1] {
                return Err(Error::Format(format!("{name}: shape {s:?}, expected {shape:?}")));
            }
            Ok(Array2::from_shape_vec(shape, data).expect("checked shape"))
        };
        Ok(Dataset {
            grid: meta.grid,
            start: meta.start,
            interval_hours: meta.interval_hours,
            risk: load2("risk_g1", (t, n))?,
            inflow: load2("inflow_g1", (t, n))?,
            outflow: load2("outflow_g1", (t, n))?,
            poi: load2("poi_g1", (n, POI_CATEGORIES))?,
            road: if meta.has_road { Some(load2("road_g1", (n, ROAD_TYPES))?) } else { None },
            weather: meta.weather,
            temperature: meta.temperature,
            holidays: meta.holidays,
            rs: RsTiles::load(dir, n)?,
        })
    }
}

fn interval_index(start: NaiveDateTime, hours: usize, count: usize, ts: &NaiveDateTime) -> Option<usize> {
    let secs = (*ts - start).num_seconds();
    if secs < 0 {
        return None;
    }
    let t = (secs / (3600 * hours as i64)) as usize;
    (t < count).then_some(t)
}

/// Chronological target ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Last interval whose data belongs to the training period.
    pub fn train_end(&self) -> usize {
        self.train.end
    }
}

/// Contiguous 6:2:2 split over target intervals that have a full history
/// window; validation and test take `floor(M/5)` each, train the rest.
pub fn split_dataset(num_intervals: usize, p: usize, q: usize, per_week: usize) -> Result<Split> {
    let first = first_target(p, q, per_week);
    if num_intervals <= first {
        return Err(Error::InsufficientHistory { target: num_intervals, needed: first + 1 });
    }
    let m = num_intervals - first;
    let held = m / 5;
    let train_len = m - 2 * held;
    let a = first + train_len;
    let b = a + held;
    Ok(Split { train: first..a, val: a..b, test: b..num_intervals })
}

// ---------------------------------------------------------------------------
// CSV directory reader.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct CityFile {
    #[serde(flatten)]
    grid: GridSpec,
    start: String,
    intervals: usize,
    #[serde(default = "one")]
    interval_hours: usize,
}

fn one() -> usize {
    1
}

pub(crate) fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::Format(format!("unparseable timestamp {s:?}")))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Deserialize)]
struct AccidentRow {
    timestamp: String,
    lat: f64,
    lon: f64,
    severity: String,
}

#[derive(Deserialize)]
struct TripRow {
    pickup_time: String,
    pickup_lat: f64,
    pickup_lon: f64,
    dropoff_time: String,
    dropoff_lat: f64,
    dropoff_lon: f64,
}

#[derive(Deserialize)]
struct WeatherRow {
    timestamp: String,
    temperature: f32,
    condition: String,
}

#[derive(Deserialize)]
struct HolidayRow {
    date: NaiveDate,
}

impl RawCity {
    /// Reads `city.json`, `accidents.csv`, `trips.csv`, `poi.csv`,
    /// `weather.csv` and the optional `roads.csv`, `holidays.csv` and RS tile
    /// blob from a directory.
    pub fn from_csv_dir(dir: &Path) -> Result<Self> {
        let city: CityFile = serde_json::from_slice(&fs::read(dir.join("city.json"))?)?;
        let accidents = read_rows::<AccidentRow>(&dir.join("accidents.csv"))?
            .into_iter()
            .map(|r| {
                Ok(AccidentRecord {
                    timestamp: parse_timestamp(&r.timestamp)?,
                    lat: r.lat,
                    lon: r.lon,
                    severity: Severity::parse(&r.severity)
                        .ok_or_else(|| Error::Format(format!("unknown severity {:?}", r.severity)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let trips = read_rows::<TripRow>(&dir.join("trips.csv"))?
            .into_iter()
            .map(|r| {
                Ok(TripRecord {
                    pickup_time: parse_timestamp(&r.pickup_time)?,
                    pickup_lat: r.pickup_lat,
                    pickup_lon: r.pickup_lon,
                    dropoff_time: parse_timestamp(&r.dropoff_time)?,
                    dropoff_lat: r.dropoff_lat,
                    dropoff_lon: r.dropoff_lon,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pois = read_rows::<PoiRecord>(&dir.join("poi.csv"))?;
        let weather = read_rows::<WeatherRow>(&dir.join("weather.csv"))?
            .into_iter()
            .map(|r| {
                Ok(WeatherRecord {
                    timestamp: parse_timestamp(&r.timestamp)?,
                    temperature: r.temperature,
                    condition: Weather::parse(&r.condition)
                        .ok_or_else(|| Error::Format(format!("unknown weather {:?}", r.condition)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let roads_path = dir.join("roads.csv");
        let roads = if roads_path.exists() { Some(read_rows::<RoadRecord>(&roads_path)?) } else { None };
        let hol_path = dir.join("holidays.csv");
        let holidays = if hol_path.exists() {
            read_rows::<HolidayRow>(&hol_path)?.into_iter().map(|h| h.date).collect()
        } else {
            Vec::new()
        };
        let rs = RsTiles::load(dir, city.grid.num_regions())?;
        Ok(RawCity {
            grid: city.grid,
            start: parse_timestamp(&city.start)?,
            interval_hours: city.interval_hours,
            num_intervals: city.intervals,
            accidents,
            trips,
            pois,
            roads,
            weather,
            holidays,
            rs,
        })
    }

    /// Writes the CSV directory layout read by [`RawCity::from_csv_dir`].
    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let fmt = |t: &NaiveDateTime| t.format("%Y-%m-%d %H:%M:%S").to_string();
        let city = serde_json::json!({
            "rows": self.grid.rows, "cols": self.grid.cols,
            "cell_width_m": self.grid.cell_width_m, "cell_height_m": self.grid.cell_height_m,
            "origin_lat": self.grid.origin_lat, "origin_lon": self.grid.origin_lon,
            "start": fmt(&self.start), "intervals": self.num_intervals, "interval_hours": self.interval_hours,
        });
        write_atomic(&dir.join("city.json"), serde_json::to_string_pretty(&city)?.as_bytes())?;
        let mut w = csv::Writer::from_path(dir.join("accidents.csv"))?;
        w.write_record(["timestamp", "lat", "lon", "severity"])?;
        for a in &self.accidents {
            let sev = match a.severity {
                Severity::Minor => "minor",
                Severity::Injured => "injured",
                Severity::Fatal => "fatal",
            };
            w.write_record([fmt(&a.timestamp), a.lat.to_string(), a.lon.to_string(), sev.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("trips.csv"))?;
        w.write_record(["pickup_time", "pickup_lat", "pickup_lon", "dropoff_time", "dropoff_lat", "dropoff_lon"])?;
        for t in &self.trips {
            w.write_record([
                fmt(&t.pickup_time),
                t.pickup_lat.to_string(),
                t.pickup_lon.to_string(),
                fmt(&t.dropoff_time),
                t.dropoff_lat.to_string(),
                t.dropoff_lon.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("poi.csv"))?;
        for p in &self.pois {
            w.serialize(p)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("weather.csv"))?;
        w.write_record(["timestamp", "temperature", "condition"])?;
        for r in &self.weather {
            let cond = serde_json::to_value(r.condition)?.as_str().unwrap_or("sunny").to_string();
            w.write_record([fmt(&r.timestamp), r.temperature.to_string(), cond])?;
        }
        w.flush()?;
        if let Some(roads) = &self.roads {
            let mut w = csv::Writer::from_path(dir.join("roads.csv"))?;
            for r in roads {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        let mut w = csv::Writer::from_path(dir.join("holidays.csv"))?;
        w.write_record(["date"])?;
        for d in &self.holidays {
            w.write_record([d.to_string()])?;
        }
        w.flush()?;
        if let Some(rs) = &self.rs {
            rs.save(dir)?;
        }
        Ok(())
    }
}

/// Normalized histogram of each region's risk levels over `intervals`.
pub fn risk_level_histogram(d: &Dataset, intervals: Range<usize>, thresholds: &[f64; 3]) -> Array2<f64> {
    let n = d.num_regions();
    let mut h = Array2::zeros((n, 4));
    let count = intervals.len().max(1) as f64;
    for t in intervals {
        for (i, &v) in d.risk_row(t).iter().enumerate() {
            h[[i, crate::objective::risk_level(v as f64, thresholds)]] += 1.0 / count;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_needs_a_full_window() {
        assert!(split_dataset(1, 1, 0, 168).is_err());
        assert!(split_dataset(672, 3, 4, 168).is_err());
        // first target is 1, leaving 99 targets: 19 held out each side
        let s = split_dataset(100, 1, 0, 168).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (61, 19, 19));
    }

    #[test]
    fn split_counts_targets_only() {
        // 100, 10 and 101 targets after the first full window.
        for (m, expect) in [(100, (60, 20, 20)), (10, (6, 2, 2)), (101, (61, 20, 20))] {
            let s = split_dataset(672 + m, 3, 4, 168).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), expect);
            assert_eq!(s.train.start, 672);
            assert!(s.train.end == s.val.start && s.val.end == s.test.start && s.test.end == 672 + m);
        }
    }

    #[test]
    fn timestamps_parse() {
        assert!(parse_timestamp("2024-01-01 07:30:00").is_ok());
        assert!(parse_timestamp("2024-01-01T07:30:00").is_ok());
        assert!(parse_timestamp("yesterday").is_err());
    }
}
