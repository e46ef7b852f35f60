//! Seeded synthetic city: hotspot-driven activity, rush-hour peaks,
//! zero-inflated accidents, trips, weather, POIs, roads and RS tiles.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::dataset::{PoiRecord, RawCity, RoadRecord, RsTiles, WeatherRecord};
use super::{AccidentRecord, Dataset, Severity, TripRecord};
use crate::error::{Error, Result};
use crate::types::{GridSpec, Weather, POI_CATEGORIES, ROAD_TYPES};

#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub tile_size: usize,
    /// Scales every accident rate.
    pub accident_rate: f64,
    /// Mean pickups per region-hour at full activity.
    pub trip_rate: f64,
    /// Day offsets (from the start) flagged as holidays.
    pub holiday_days: Vec<usize>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions { tile_size: 32, accident_rate: 0.55, trip_rate: 2.0, holiday_days: vec![17, 45] }
    }
}

/// Relative traffic intensity by hour, with weekday rush peaks at 7-9 and 16-19.
pub fn hour_profile(hour: u32, workday: bool) -> f64 {
    if workday {
        match hour {
            0..=4 => 0.15,
            5 | 6 => 0.5,
            7 | 8 => 2.6,
            9 => 1.2,
            10..=15 => 0.9,
            16..=18 => 3.0,
            19 | 20 => 0.9,
            _ => 0.4,
        }
    } else {
        match hour {
            0..=5 => 0.25,
            6..=9 => 0.5,
            10..=19 => 0.9,
            _ => 0.5,
        }
    }
}

fn weather_factor(w: Weather) -> f64 {
    match w {
        Weather::Sunny => 1.0,
        Weather::Cloudy => 1.05,
        Weather::Rainy => 1.5,
        Weather::Snowy => 1.8,
        Weather::Foggy => 1.35,
    }
}

struct Region {
    activity: f64,
    highway: f64,
    poi_weights: [f64; POI_CATEGORIES],
    road_weights: [f64; ROAD_TYPES],
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn point_in(rng: &mut ChaCha8Rng, grid: &GridSpec, region: usize) -> (f64, f64) {
    let (lat, lon) = grid.center(region);
    (
        lat + (rng.random::<f64>() - 0.5) * 0.9 * grid.lat_step(),
        lon + (rng.random::<f64>() - 0.5) * 0.9 * grid.lon_step(),
    )
}

fn layout(rng: &mut ChaCha8Rng, grid: &GridSpec) -> Vec<Region> {
    let n = grid.num_regions();
    let scale = grid.rows.max(grid.cols) as f64;
    let hotspots: Vec<(f64, f64, f64, f64, usize)> = (0..2 + n / 64)
        .map(|_| {
            (
                rng.random::<f64>() * grid.rows as f64,
                rng.random::<f64>() * grid.cols as f64,
                (0.1 + 0.08 * rng.random::<f64>()) * scale,
                0.5 + 0.5 * rng.random::<f64>(),
                rng.random_range(0..POI_CATEGORIES),
            )
        })
        .collect();
    let hw_row = rng.random_range(0..grid.rows);
    let hw_col = rng.random_range(0..grid.cols);
    let mut raw = vec![0.0; n];
    let mut poi = vec![[0.0; POI_CATEGORIES]; n];
    for i in 0..n {
        let (r, c) = grid.row_col(i);
        let (r, c) = (r as f64 + 0.5, c as f64 + 0.5);
        for &(hr, hc, sigma, amp, cat) in &hotspots {
            let k = amp * (-((r - hr).powi(2) + (c - hc).powi(2)) / (2.0 * sigma * sigma)).exp();
            raw[i] += k;
            poi[i][cat] += 3.0 * k;
        }
    }
    let peak = raw.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    (0..n)
        .map(|i| {
            let activity = 0.85 * raw[i] / peak + 0.15 * rng.random::<f64>();
            let (r, c) = grid.row_col(i);
            let highway = if r == hw_row || c == hw_col { 0.6 } else { 0.05 * rng.random::<f64>() };
            let mut poi_weights = poi[i];
            for w in poi_weights.iter_mut() {
                *w += 0.3 * rng.random::<f64>();
            }
            let road_weights = [0.1 + highway, 0.05 + 0.4 * activity, 0.4, 0.1 + 0.5 * (1.0 - activity)];
            Region { activity, highway, poi_weights, road_weights }
        })
        .collect()
}

fn render_tile(rng: &mut ChaCha8Rng, region: &Region, size: usize) -> Vec<f32> {
    let a = region.activity;
    let green = [0.25, 0.45, 0.2];
    let gray = [0.55, 0.55, 0.55];
    let bg: Vec<f64> = (0..3).map(|c| green[c] * (1.0 - a) + gray[c] * a).collect();
    let mut px = vec![0.0f64; size * size * 3];
    for p in 0..size * size {
        px[p * 3..p * 3 + 3].copy_from_slice(&bg);
    }
    let paint = |px: &mut Vec<f64>, r0: usize, c0: usize, h: usize, w: usize, col: [f64; 3]| {
        for r in r0..(r0 + h).min(size) {
            for c in c0..(c0 + w).min(size) {
                px[(r * size + c) * 3..(r * size + c) * 3 + 3].copy_from_slice(&col);
            }
        }
    };
    let buildings = (2.0 + 25.0 * a).round() as usize;
    for _ in 0..buildings {
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let (r0, c0) = (rng.random_range(0..size), rng.random_range(0..size));
        let shade = 0.75 + 0.15 * rng.random::<f64>();
        paint(&mut px, r0, c0, h, w, [shade, shade, shade * 0.97]);
    }
    let streets = (1.0 + 3.0 * a).round() as usize;
    for _ in 0..streets {
        let at = rng.random_range(0..size);
        if rng.random::<bool>() {
            paint(&mut px, at, 0, 1, size, [0.3, 0.3, 0.3]);
        } else {
            paint(&mut px, 0, at, size, 1, [0.3, 0.3, 0.3]);
        }
    }
    if region.highway > 0.3 {
        paint(&mut px, size / 2 - 1, 0, 3, size, [0.15, 0.15, 0.17]);
    }
    px.iter().map(|v| (v + 0.06 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0) as f32).collect()
}

/// Unaggregated records of a synthetic city over `weeks` weeks of hourly
/// intervals starting Monday 2024-01-01.
pub fn generate_raw_city(seed: u64, grid: GridSpec, weeks: usize, opts: &SyntheticOptions) -> Result<RawCity> {
    grid.validate()?;
    if weeks == 0 {
        return Err(Error::InvalidInput("synthetic city needs at least one week".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.num_regions();
    let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let intervals = weeks * 168;
    let regions = layout(&mut rng, &grid);

    let mut pois = Vec::new();
    let mut roads = Vec::new();
    for (i, reg) in regions.iter().enumerate() {
        let count = if reg.activity < 0.12 { 0 } else { Poisson::new(40.0 * reg.activity).unwrap().sample(&mut rng) as usize };
        for _ in 0..count {
            let (lat, lon) = point_in(&mut rng, &grid, i);
            pois.push(PoiRecord { lat, lon, category: sample_index(&mut rng, &reg.poi_weights) });
        }
        let count = 10 + Poisson::new(20.0 * reg.activity + 1.0).unwrap().sample(&mut rng) as usize;
        for _ in 0..count {
            let (lat, lon) = point_in(&mut rng, &grid, i);
            roads.push(RoadRecord { lat, lon, road_type: sample_index(&mut rng, &reg.road_weights) });
        }
    }
    let tiles: Vec<f32> = regions.iter().flat_map(|r| render_tile(&mut rng, r, opts.tile_size)).collect();

    let holidays: Vec<NaiveDate> =
        opts.holiday_days.iter().filter(|&&d| d < weeks * 7).map(|&d| start.date() + Duration::days(d as i64)).collect();

    let base_weather = [0.45, 0.15, 0.3, 0.05, 0.05];
    let mut weather_state = Weather::Sunny;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rho: f64 = 0.85;
    let latent_sd = 0.5;
    let mut latent = vec![0.0f64; n];
    let dest_weights: Vec<f64> = regions.iter().map(|r| 0.1 + r.activity).collect();
    let dest_total: f64 = dest_weights.iter().sum();
    let dest_cdf: Vec<f64> = dest_weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / dest_total;
            Some(*acc)
        })
        .collect();

    let mut accidents = Vec::new();
    let mut trips = Vec::new();
    let mut weather = Vec::with_capacity(intervals);
    for t in 0..intervals {
        let ts: NaiveDateTime = start + Duration::hours(t as i64);
        let hour = (t % 24) as u32;
        let day = ts.date();
        let workday = day.weekday().num_days_from_monday() < 5 && !holidays.contains(&day);
        if rng.random::<f64>() > 0.93 {
            weather_state = Weather::ALL[sample_index(&mut rng, &base_weather)];
        }
        let day_of_year = day.ordinal() as f64;
        let temperature = 2.0
            + 10.0 * (2.0 * std::f64::consts::PI * (day_of_year - 100.0) / 365.0).sin()
            + 4.0 * (2.0 * std::f64::consts::PI * (hour as f64 - 9.0) / 24.0).sin()
            + normal.sample(&mut rng);
        weather.push(WeatherRecord { timestamp: ts, temperature: temperature as f32, condition: weather_state });

        let profile = hour_profile(hour, workday);
        let wf = weather_factor(weather_state);
        for (i, reg) in regions.iter().enumerate() {
            latent[i] = rho * latent[i] + (1.0 - rho * rho).sqrt() * latent_sd * normal.sample(&mut rng);
            let surge = (latent[i] - 0.5 * latent_sd * latent_sd).exp();
            let lambda = opts.accident_rate * reg.activity.powf(1.3) * (1.0 + 0.8 * reg.highway) * profile * wf * surge;
            let k = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(&mut rng) as usize } else { 0 };
            for _ in 0..k {
                let u = rng.random::<f64>();
                let severity = if u < 0.6 {
                    Severity::Minor
                } else if u < 0.9 {
                    Severity::Injured
                } else {
                    Severity::Fatal
                };
                let (lat, lon) = point_in(&mut rng, &grid, i);
                let timestamp = ts + Duration::seconds(rng.random_range(0..3600));
                accidents.push(AccidentRecord { timestamp, lat, lon, severity });
            }
            let mu = opts.trip_rate * (0.2 + reg.activity) * profile * surge;
            let k = Poisson::new(mu).unwrap().sample(&mut rng) as usize;
            for _ in 0..k {
                let u = rng.random::<f64>();
                let dest = dest_cdf.partition_point(|&c| c < u).min(n - 1);
                let (plat, plon) = point_in(&mut rng, &grid, i);
                let (dlat, dlon) = point_in(&mut rng, &grid, dest);
                let pickup_time = ts + Duration::seconds(rng.random_range(0..3600));
                let dropoff_time = pickup_time + Duration::seconds(rng.random_range(300..2700));
                trips.push(TripRecord {
                    pickup_time,
                    pickup_lat: plat,
                    pickup_lon: plon,
                    dropoff_time,
                    dropoff_lat: dlat,
                    dropoff_lon: dlon,
                });
            }
        }
    }

    Ok(RawCity {
        grid,
        start,
        interval_hours: 1,
        num_intervals: intervals,
        accidents,
        trips,
        pois,
        roads: Some(roads),
        weather,
        holidays,
        rs: Some(RsTiles { width: opts.tile_size, height: opts.tile_size, channels: 3, data: tiles }),
    })
}

pub fn generate_synthetic_city(seed: u64, grid: GridSpec, weeks: usize) -> Result<Dataset> {
    Dataset::from_raw(generate_raw_city(seed, grid, weeks, &SyntheticOptions::default())?)
}
