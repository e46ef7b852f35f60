use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use super::data::PreparedData;
use crate::error::{Error, Result};
use crate::model::{Model, ModelContext};
use crate::types::{GridSpec, RiskMap};

/// Risk maps of every level for one target interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub target: usize,
    pub maps: Vec<RiskMap>,
    /// Per level accident-occurrence probabilities.
    pub occurrence: Vec<Vec<f64>>,
}

/// Emitted risk is clamped at zero.
pub fn forecast(data: &PreparedData, model: &Model, ctx: &ModelContext, target: usize) -> Result<Forecast> {
    let p = model.predict(ctx, &data.sample(target)?)?;
    let maps = p
        .risk
        .iter()
        .enumerate()
        .map(|(g, r)| RiskMap::new(g + 1, target, r.iter().map(|&v| v.max(0.0) as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forecast { target, maps, occurrence: p.occurrence })
}

/// Renders a level-1 map as an image with one pixel per cell (width = columns,
/// height = rows), black for zero risk through red to yellow at the maximum.
pub fn write_heatmap(path: &Path, grid: &GridSpec, values: &[f32]) -> Result<()> {
    if values.len() != grid.num_regions() {
        return Err(Error::Shape(format!("{} values for a {}x{} grid", values.len(), grid.rows, grid.cols)));
    }
    let max = values.iter().copied().fold(0.0f32, f32::max);
    let img = ImageBuffer::from_fn(grid.cols as u32, grid.rows as u32, |x, y| {
        let v = values[grid.region(y as usize, x as usize)];
        let s = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
        let red = (s * 2.0).min(1.0);
        let green = (s * 2.0 - 1.0).max(0.0);
        Rgb([(red * 255.0).round() as u8, (green * 255.0).round() as u8, 0u8])
    });
    img.save(path)?;
    Ok(())
}
