//! Shared data model: grid geometry, risk maps, feature layouts, history
//! windows and the granularity hierarchy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hours in a day, one-hot block width.
pub const HOURS: usize = 24;
/// Days in a week, one-hot block width.
pub const DAYS: usize = 7;
/// Width of the temporal block: hour one-hot, day-of-week one-hot, holiday flag.
pub const D_TEMPORAL: usize = HOURS + DAYS + 1;
/// POI categories in the spatial block.
pub const POI_CATEGORIES: usize = 7;
/// Weather kinds in the spatial block.
pub const WEATHER_KINDS: usize = 5;
/// Width of the spatial block: POI, temperature, weather, risk, inflow, outflow.
pub const D_SPATIAL: usize = POI_CATEGORIES + 1 + WEATHER_KINDS + 3;
/// Width of an unenhanced spatio-temporal feature row.
pub const D_ST: usize = D_TEMPORAL + D_SPATIAL;
/// Node features of the similarity graphs: risk, inflow, outflow.
pub const D_NODE: usize = 3;
/// Road-type categories used by the road view.
pub const ROAD_TYPES: usize = 4;

/// Column offsets inside an ST row.
pub mod col {
    use super::*;
    pub const HOUR: usize = 0;
    pub const DOW: usize = HOURS;
    pub const HOLIDAY: usize = HOURS + DAYS;
    pub const POI: usize = D_TEMPORAL;
    pub const TEMPERATURE: usize = POI + POI_CATEGORIES;
    pub const WEATHER: usize = TEMPERATURE + 1;
    pub const RISK: usize = WEATHER + WEATHER_KINDS;
    pub const INFLOW: usize = RISK + 1;
    pub const OUTFLOW: usize = RISK + 2;
}

const METERS_PER_DEGREE: f64 = 111_320.0;

/// Regular lat/lon grid. Region `i` sits at row `i / cols`, column `i % cols`;
/// row 0 is the northern edge, starting at `origin` (the north-west corner).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_width_m: f64,
    pub cell_height_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridSpec {
            rows,
            cols,
            cell_width_m: 1982.5,
            cell_height_m: 2776.5,
            origin_lat: 40.92,
            origin_lon: -74.26,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("grid rows and cols must be positive".into()));
        }
        if !(self.cell_width_m > 0.0 && self.cell_height_m > 0.0) {
            return Err(Error::Config("grid cell extent must be positive".into()));
        }
        Ok(())
    }

    pub fn num_regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn region(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn row_col(&self, region: usize) -> (usize, usize) {
        (region / self.cols, region % self.cols)
    }

    pub fn lat_step(&self) -> f64 {
        self.cell_height_m / METERS_PER_DEGREE
    }

    pub fn lon_step(&self) -> f64 {
        self.cell_width_m / (METERS_PER_DEGREE * self.origin_lat.to_radians().cos())
    }

    /// Region containing the point, or `None` outside the bounding box.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<usize> {
        let r = (self.origin_lat - lat) / self.lat_step();
        let c = (lon - self.origin_lon) / self.lon_step();
        if !(r >= 0.0 && c >= 0.0) {
            return None;
        }
        let (r, c) = (r.floor() as usize, c.floor() as usize);
        (r < self.rows && c < self.cols).then(|| self.region(r, c))
    }

    /// Centre coordinate of a region.
    pub fn center(&self, region: usize) -> (f64, f64) {
        let (r, c) = self.row_col(region);
        (
            self.origin_lat - (r as f64 + 0.5) * self.lat_step(),
            self.origin_lon + (c as f64 + 0.5) * self.lon_step(),
        )
    }

    /// 4-neighbourhood edges `(a, b)` with `a < b`.
    pub fn neighbor_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = self.region(r, c);
                if c + 1 < self.cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < self.rows {
                    edges.push((i, i + self.cols));
                }
            }
        }
        edges
    }
}

/// Per-granularity accident risk for one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMap {
    /// Granularity level, 1-based.
    pub level: usize,
    pub interval: usize,
    pub values: Vec<f32>,
}

impl RiskMap {
    pub fn new(level: usize, interval: usize, values: Vec<f32>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("risk value {v} is not a non-negative finite number")));
        }
        Ok(RiskMap { level, interval, values })
    }

    pub fn zeros(level: usize, interval: usize, n: usize) -> Self {
        RiskMap { level, interval, values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Rainy,
    Cloudy,
    Snowy,
    Foggy,
}

impl Weather {
    pub const ALL: [Weather; WEATHER_KINDS] =
        [Weather::Sunny, Weather::Rainy, Weather::Cloudy, Weather::Snowy, Weather::Foggy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Weather> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sunny" | "clear" => Some(Weather::Sunny),
            "rainy" | "rain" => Some(Weather::Rainy),
            "cloudy" | "clouds" => Some(Weather::Cloudy),
            "snowy" | "snow" => Some(Weather::Snowy),
            "foggy" | "fog" => Some(Weather::Foggy),
            _ => None,
        }
    }
}

/// Calendar features of one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    pub hour: u8,
    /// 0 = Monday.
    pub day_of_week: u8,
    pub holiday: bool,
}

impl TemporalFeatures {
    pub fn new(hour: u8, day_of_week: u8, holiday: bool) -> Result<Self> {
        if hour as usize >= HOURS || day_of_week as usize >= DAYS {
            return Err(Error::InvalidInput(format!("hour {hour} / weekday {day_of_week} out of range")));
        }
        Ok(TemporalFeatures { hour, day_of_week, holiday })
    }

    pub fn encode(&self) -> [f64; D_TEMPORAL] {
        let mut out = [0.0; D_TEMPORAL];
        out[col::HOUR + self.hour as usize] = 1.0;
        out[col::DOW + self.day_of_week as usize] = 1.0;
        out[col::HOLIDAY] = if self.holiday { 1.0 } else { 0.0 };
        out
    }
}

/// Per-region spatial inputs for one interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeatures {
    pub poi: [f32; POI_CATEGORIES],
    /// Normalized temperature.
    pub temperature: f32,
    pub weather: Weather,
    pub risk: f32,
    pub inflow: f32,
    pub outflow: f32,
}

impl SpatialFeatures {
    pub fn validate(&self) -> Result<()> {
        let s: f32 = self.poi.iter().sum();
        if self.poi.iter().any(|&p| p < 0.0) || !(s == 0.0 || (s - 1.0).abs() < 1e-4) {
            return Err(Error::InvalidInput("POI block must be a distribution or all-zero".into()));
        }
        if self.inflow < 0.0 || self.outflow < 0.0 || self.risk < 0.0 {
            return Err(Error::InvalidInput("risk and flows must be non-negative".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> [f64; D_SPATIAL] {
        let mut out = [0.0; D_SPATIAL];
        for (o, &p) in out.iter_mut().zip(&self.poi) {
            *o = p as f64;
        }
        let base = POI_CATEGORIES;
        out[base] = self.temperature as f64;
        out[base + 1 + self.weather.index()] = 1.0;
        out[base + 1 + WEATHER_KINDS] = self.risk as f64;
        out[base + 2 + WEATHER_KINDS] = self.inflow as f64;
        out[base + 3 + WEATHER_KINDS] = self.outflow as f64;
        out
    }
}

/// Short- and long-term history for one target interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoricalWindow {
    pub target: usize,
    /// `[t*-1, ..., t*-p]`
    pub short: Vec<usize>,
    /// `[t*-w, ..., t*-q*w]`
    pub long: Vec<usize>,
}

impl HistoricalWindow {
    pub fn len(&self) -> usize {
        self.short.len() + self.long.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence order fed to the encoders: long-term oldest first, then
    /// short-term oldest first. The last element is always `t* - 1`.
    pub fn sequence(&self) -> Vec<usize> {
        self.long.iter().rev().chain(self.short.iter().rev()).copied().collect()
    }
}

/// Smallest target interval with a full history window.
pub fn first_target(p: usize, q: usize, per_week: usize) -> usize {
    p.max(q * per_week)
}

pub fn build_window(target: usize, p: usize, q: usize, per_week: usize) -> Result<HistoricalWindow> {
    let needed = first_target(p, q, per_week);
    if target < needed || p + q == 0 {
        return Err(Error::InsufficientHistory { target, needed });
    }
    Ok(HistoricalWindow {
        target,
        short: (1..=p).map(|k| target - k).collect(),
        long: (1..=q).map(|k| target - k * per_week).collect(),
    })
}

/// Binary fine-to-coarse membership matrix, stored by row as the column index
/// of its single 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformMatrix {
    coarse: usize,
    membership: Vec<usize>,
}

impl TransformMatrix {
    pub fn from_partition(membership: &[usize], coarse: usize) -> Result<Self> {
        let mut sizes = vec![0usize; coarse];
        for &c in membership {
            if c >= coarse {
                return Err(Error::InvalidInput(format!("coarse index {c} out of range {coarse}")));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(empty));
        }
        Ok(TransformMatrix { coarse, membership: membership.to_vec() })
    }

    pub fn fine(&self) -> usize {
        self.membership.len()
    }

    pub fn coarse(&self) -> usize {
        self.coarse
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        (self.membership[i] == j) as u8
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.membership
            .iter()
            .map(|&c| (0..self.coarse).map(|j| (j == c) as u8).collect())
            .collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.coarse];
        for &c in &self.membership {
            sums[c] += 1;
        }
        sums
    }

    /// `Mᵀ x`: sums fine values into their coarse parent.
    pub fn aggregate(&self, fine: &[f64]) -> Vec<f64> {
        assert_eq!(fine.len(), self.fine(), "fine vector length");
        let mut out = vec![0.0; self.coarse];
        for (&c, &v) in self.membership.iter().zip(fine) {
            out[c] += v;
        }
        out
    }

    /// `M y`: copies each coarse value to its fine members.
    pub fn broadcast(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.coarse, "coarse vector length");
        self.membership.iter().map(|&c| coarse[c]).collect()
    }
}

/// The aggregation relation across `n` levels: `partitions[i]` maps level
/// `i + 1` nodes onto level `i + 2` nodes (levels are 1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityHierarchy {
    pub level_sizes: Vec<usize>,
    pub partitions: Vec<Vec<usize>>,
}

impl GranularityHierarchy {
    pub fn new(level_sizes: Vec<usize>, partitions: Vec<Vec<usize>>) -> Result<Self> {
        let h = GranularityHierarchy { level_sizes, partitions };
        h.validate()?;
        Ok(h)
    }

    /// A single-level hierarchy over `n` regions.
    pub fn flat(n: usize) -> Self {
        GranularityHierarchy { level_sizes: vec![n], partitions: Vec::new() }
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_sizes.is_empty() {
            return Err(Error::InvalidInput("hierarchy has no levels".into()));
        }
        if self.partitions.len() + 1 != self.level_sizes.len() {
            return Err(Error::InvalidInput("need one partition per adjacent level pair".into()));
        }
        for (i, part) in self.partitions.iter().enumerate() {
            let (fine, coarse) = (self.level_sizes[i], self.level_sizes[i + 1]);
            if coarse >= fine {
                return Err(Error::InvalidInput(format!(
                    "level {} has {coarse} nodes, not fewer than level {} ({fine})",
                    i + 2,
                    i + 1
                )));
            }
            if part.len() != fine {
                return Err(Error::InvalidInput(format!("partition {} covers {} of {fine} nodes", i + 1, part.len())));
            }
            TransformMatrix::from_partition(part, coarse)?;
        }
        Ok(())
    }

    pub fn transform(&self, pair: usize) -> TransformMatrix {
        TransformMatrix::from_partition(&self.partitions[pair], self.level_sizes[pair + 1])
            .expect("validated hierarchy")
    }

    pub fn transforms(&self) -> Vec<TransformMatrix> {
        (0..self.partitions.len()).map(|i| self.transform(i)).collect()
    }

    /// Maps every level-1 node to its ancestor at `level` (1-based).
    pub fn ancestor_map(&self, level: usize) -> Vec<usize> {
        let mut map: Vec<usize> = (0..self.level_sizes[0]).collect();
        for part in &self.partitions[..level - 1] {
            for m in map.iter_mut() {
                *m = part[*m];
            }
        }
        map
    }
}
