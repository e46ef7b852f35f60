use std::ops::Range;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::objective::MetricReport;
use crate::types::build_window;

/// Mean of the window observations of one region.
pub fn window_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Per-region mean of the `p` short-term and `q` weekly observations before
/// `target`.
pub fn historical_average(d: &Dataset, target: usize, p: usize, q: usize, per_week: usize) -> Result<Vec<f64>> {
    if target >= d.num_intervals() {
        return Err(Error::InvalidInput(format!("target {target} beyond {}", d.num_intervals())));
    }
    let window = build_window(target, p, q, per_week)?.sequence();
    Ok((0..d.num_regions())
        .map(|r| window_mean(&window.iter().map(|&t| d.risk[[t, r]] as f64).collect::<Vec<_>>()))
        .collect())
}

/// Historical-average predictions scored on `targets`.
pub fn historical_average_report(
    d: &Dataset,
    targets: Range<usize>,
    p: usize,
    q: usize,
    per_week: usize,
) -> Result<MetricReport> {
    if targets.is_empty() {
        return Err(Error::EmptySplit(format!("no targets in {targets:?}")));
    }
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut hours = Vec::new();
    for t in targets {
        preds.push(historical_average(d, t, p, q, per_week)?);
        truths.push(d.risk_row(t).iter().map(|&v| v as f64).collect());
        hours.push(d.temporal(t).hour);
    }
    MetricReport::compute(&preds, &truths, &hours)
}
