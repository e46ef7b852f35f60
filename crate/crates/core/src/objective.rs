//! Hierarchical loss terms and the ranking/regression metric suite.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::types::TransformMatrix;

/// Default probability clamp for the occurrence head.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub wmse: Vec<f64>,
    pub bce: Vec<f64>,
    pub hc: f64,
    pub risk_levels: [f64; 4],
    pub thresholds: [f64; 3],
}

impl LossWeights {
    pub fn from_config(h: &HyperParams) -> Self {
        LossWeights {
            wmse: h.loss_wmse.clone(),
            bce: h.loss_bce.clone(),
            hc: h.loss_hc,
            risk_levels: h.risk_level_weights,
            thresholds: h.risk_thresholds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.wmse.iter().chain(&self.bce).chain(&self.risk_levels).chain([&self.hc]);
        if all.into_iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("risk thresholds must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Per-region weights of the weighted MSE, chosen from the truth's level.
    pub fn region_weights(&self, truth: &[f64]) -> Vec<f64> {
        truth.iter().map(|&t| self.risk_levels[risk_level(t, &self.thresholds)]).collect()
    }
}

/// Level index 0..4: `0` for `t <= th[0]`, then `(th[0], th[1]]`,
/// `(th[1], th[2]]`, and `> th[2]`.
pub fn risk_level(t: f64, th: &[f64; 3]) -> usize {
    th.iter().take_while(|&&b| t > b).count()
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

pub fn wmse(pred: &[f64], truth: &[f64], levels: &[f64; 4], thresholds: &[f64; 3]) -> Result<f64> {
    same_len(pred.len(), truth.len(), "wmse")?;
    let n = truth.len() as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| levels[risk_level(*t, thresholds)] * (t - p) * (t - p))
        .sum::<f64>()
        / n)
}

/// Mean binary cross entropy against `truth > 0`, probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn bce(probs: &[f64], truth: &[f64], eps: f64) -> f64 {
    let n = probs.len() as f64;
    -probs
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            if t > 0.0 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Squared residual between coarse truth and aggregated fine predictions.
pub fn hierarchical_constraint(pred_fine: &[f64], truth_coarse: &[f64], m: &TransformMatrix) -> Result<f64> {
    same_len(pred_fine.len(), m.fine(), "hc prediction")?;
    same_len(truth_coarse.len(), m.coarse(), "hc truth")?;
    let agg = m.aggregate(pred_fine);
    Ok(truth_coarse.iter().zip(&agg).map(|(t, a)| (t - a) * (t - a)).sum::<f64>() / truth_coarse.len() as f64)
}

/// Loss inputs for one granularity level.
pub struct LevelTerms<'a> {
    pub pred: &'a [f64],
    pub truth: &'a [f64],
    pub probs: &'a [f64],
}

/// `Σ_g (λ_w^g wmse_g + λ_b^g bce_g) + λ_hc hc(g1, g2)`.
pub fn total_loss(levels: &[LevelTerms<'_>], m12: Option<&TransformMatrix>, w: &LossWeights) -> Result<f64> {
    if levels.len() != w.wmse.len() || levels.len() != w.bce.len() {
        return Err(Error::Shape(format!("{} levels but {} loss weights", levels.len(), w.wmse.len())));
    }
    let mut total = 0.0;
    for (g, lt) in levels.iter().enumerate() {
        total += w.wmse[g] * wmse(lt.pred, lt.truth, &w.risk_levels, &w.thresholds)?;
        total += w.bce[g] * bce(lt.probs, lt.truth, BCE_EPS);
    }
    if let (Some(m), true) = (m12, levels.len() >= 2) {
        total += w.hc * hierarchical_constraint(levels[0].pred, levels[1].truth, m)?;
    }
    Ok(total)
}

/// Root of the mean over intervals of the per-interval mean squared error.
pub fn rmse(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptySplit("rmse over no intervals".into()));
    }
    same_len(preds.len(), truths.len(), "rmse intervals")?;
    let mut acc = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        same_len(p.len(), t.len(), "rmse regions")?;
        acc += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    }
    Ok((acc / preds.len() as f64).sqrt())
}

/// Region indices sorted by predicted risk, descending; ties by lower index.
pub fn rank_regions(pred: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]).then(a.cmp(&b)));
    idx
}

/// Per-interval Recall and MAP terms; `None` for intervals without accidents.
pub fn ranking_terms(pred: &[f64], truth: &[f64]) -> Option<(f64, f64)> {
    let relevant = truth.iter().filter(|&&t| t > 0.0).count();
    if relevant == 0 {
        return None;
    }
    let ranked = rank_regions(pred);
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (j, &r) in ranked.iter().take(relevant).enumerate() {
        if truth[r] > 0.0 {
            hits += 1;
            ap += hits as f64 / (j + 1) as f64;
        }
    }
    Some((hits as f64 / relevant as f64, ap / relevant as f64))
}

fn mean_ranking(preds: &[Vec<f64>], truths: &[Vec<f64>], pick: impl Fn((f64, f64)) -> f64) -> Result<f64> {
    same_len(preds.len(), truths.len(), "ranking intervals")?;
    let terms: Vec<f64> = preds
        .iter()
        .zip(truths)
        .filter_map(|(p, t)| ranking_terms(p, t))
        .map(pick)
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptySplit("no interval has any accident".into()));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn recall(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    mean_ranking(preds, truths, |(r, _)| r)
}

/// Mean average precision with the rank list cut at `|R_t|`.
pub fn map(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    mean_ranking(preds, truths, |(_, m)| m)
}

/// Rush hours by starting hour: `[7, 9)` and `[16, 19)`.
pub fn is_rush_hour(hour: u8) -> bool {
    matches!(hour, 7 | 8 | 16 | 17 | 18)
}

/// Keeps the positions whose interval starts in a rush hour.
pub fn rush_hour_filter(hours: &[u8]) -> Vec<usize> {
    hours.iter().enumerate().filter(|(_, &h)| is_rush_hour(h)).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub recall: f64,
    pub map: f64,
    pub rush_rmse: Option<f64>,
    pub rush_recall: Option<f64>,
    pub rush_map: Option<f64>,
    pub intervals: usize,
    pub rush_intervals: usize,
}

impl MetricReport {
    /// Scores aligned per-interval predictions; `hours` gives each interval's
    /// local starting hour.
    pub fn compute(preds: &[Vec<f64>], truths: &[Vec<f64>], hours: &[u8]) -> Result<Self> {
        same_len(preds.len(), hours.len(), "interval hours")?;
        let rush = rush_hour_filter(hours);
        let rp: Vec<Vec<f64>> = rush.iter().map(|&i| preds[i].clone()).collect();
        let rt: Vec<Vec<f64>> = rush.iter().map(|&i| truths[i].clone()).collect();
        Ok(MetricReport {
            rmse: rmse(preds, truths)?,
            recall: recall(preds, truths)?,
            map: map(preds, truths)?,
            rush_rmse: rmse(&rp, &rt).ok(),
            rush_recall: recall(&rp, &rt).ok(),
            rush_map: map(&rp, &rt).ok(),
            intervals: preds.len(),
            rush_intervals: rush.len(),
        })
    }

    /// One CSV line per interval: rmse contribution, recall, map.
    pub fn interval_terms_csv(preds: &[Vec<f64>], truths: &[Vec<f64>], targets: &[usize]) -> String {
        let mut out = String::from("interval,mse,recall,map\n");
        for ((p, t), target) in preds.iter().zip(truths).zip(targets) {
            let mse = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
            match ranking_terms(p, t) {
                Some((r, m)) => out.push_str(&format!("{target},{mse},{r},{m}\n")),
                None => out.push_str(&format!("{target},{mse},,\n")),
            }
        }
        out
    }
}

fn opt(v: Option<f64>, pct: bool) -> String {
    match v {
        Some(v) if pct => format!("{:.2}%", v * 100.0),
        Some(v) => format!("{v:.4}"),
        None => "-".into(),
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells = [
            ("RMSE", opt(Some(self.rmse), false)),
            ("Recall", opt(Some(self.recall), true)),
            ("MAP", opt(Some(self.map), false)),
            ("RMSE*", opt(self.rush_rmse, false)),
            ("Recall*", opt(self.rush_recall, true)),
            ("MAP*", opt(self.rush_map, false)),
        ];
        let header: Vec<String> = cells.iter().map(|(h, _)| format!("{h:>10}")).collect();
        let row: Vec<String> = cells.iter().map(|(_, v)| format!("{v:>10}")).collect();
        writeln!(f, "{}", header.join(" "))?;
        write!(f, "{}", row.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LV: [f64; 4] = [0.05, 0.2, 0.25, 0.5];
    const TH: [f64; 3] = [0.0, 2.0, 4.0];

    #[test]
    fn wmse_examples() {
        assert_eq!(wmse(&[1.0, 2.0], &[1.0, 2.0], &LV, &TH).unwrap(), 0.0);
        assert!((wmse(&[1.0, 5.0], &[0.0, 5.0], &LV, &TH).unwrap() - 0.025).abs() < 1e-12);
        assert!(wmse(&[1.0], &[0.0, 5.0], &LV, &TH).is_err());
    }

    #[test]
    fn risk_levels_follow_thresholds() {
        assert_eq!(risk_level(0.0, &TH), 0);
        assert_eq!(risk_level(1.0, &TH), 1);
        assert_eq!(risk_level(2.0, &TH), 1);
        assert_eq!(risk_level(3.0, &TH), 2);
        assert_eq!(risk_level(4.0, &TH), 2);
        assert_eq!(risk_level(4.5, &TH), 3);
    }

    #[test]
    fn bce_examples() {
        assert!(bce(&[1.0, 0.0], &[2.0, 0.0], 1e-7) <= 1e-6);
        assert!((bce(&[0.5, 0.5], &[1.0, 0.0], 1e-7) - 2f64.ln()).abs() < 1e-12);
        let expected = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((bce(&[0.9, 0.2], &[1.0, 0.0], 1e-7) - expected).abs() < 1e-12);
        assert!((expected - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn hc_examples() {
        let m = TransformMatrix::from_partition(&[0, 0, 1], 2).unwrap();
        assert_eq!(hierarchical_constraint(&[1.0, 1.0, 2.0], &[2.0, 2.0], &m).unwrap(), 0.0);
        assert_eq!(hierarchical_constraint(&[1.0, 1.0, 2.0], &[3.0, 2.0], &m).unwrap(), 0.5);
    }

    #[test]
    fn total_loss_zero_weights() {
        let w = LossWeights { wmse: vec![0.0], bce: vec![0.0], hc: 0.0, risk_levels: LV, thresholds: TH };
        let lt = LevelTerms { pred: &[3.0], truth: &[0.0], probs: &[0.9] };
        assert_eq!(total_loss(&[lt], None, &w).unwrap(), 0.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
        assert!((rmse(&[vec![1.5, 2.5], vec![3.5, 0.5]], &[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap() - 0.5).abs() < 1e-12);
        assert!((rmse(&[vec![1.0, 3.0]], &[vec![0.0, 0.0]]).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn recall_and_map_examples() {
        let truth = vec![vec![0.0, 1.0, 0.0, 2.0]];
        assert_eq!(recall(&[vec![0.0, 0.9, 0.1, 0.8]], &truth).unwrap(), 1.0);
        assert_eq!(map(&[vec![0.0, 0.9, 0.1, 0.8]], &truth).unwrap(), 1.0);
        assert_eq!(recall(&[vec![0.0, 0.9, 0.8, 0.1]], &truth).unwrap(), 0.5);
        // hit, miss, hit with |R|=2: only the first rank counts.
        assert_eq!(map(&[vec![0.0, 0.9, 0.8, 0.7]], &truth).unwrap(), 0.5);
        // both hits ranked below |R|.
        assert_eq!(map(&[vec![0.9, 0.1, 0.8, 0.2]], &truth).unwrap(), 0.0);
        // empty intervals are skipped
        let truths = vec![truth[0].clone(), vec![0.0; 4]];
        assert_eq!(recall(&[vec![0.0, 0.9, 0.1, 0.8], vec![1.0; 4]], &truths).unwrap(), 1.0);
        assert!(recall(&[vec![1.0; 4]], &[vec![0.0; 4]]).is_err());
    }

    #[test]
    fn ties_break_on_lower_index() {
        assert_eq!(rank_regions(&[1.0, 2.0, 2.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn rush_hours_half_open() {
        assert!(is_rush_hour(8));
        assert!(!is_rush_hour(9));
        assert!(!is_rush_hour(12));
        assert!(is_rush_hour(18));
        assert!(!is_rush_hour(19));
        assert_eq!(rush_hour_filter(&[6, 7, 9, 16]), vec![1, 3]);
    }
}
