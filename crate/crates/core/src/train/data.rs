//! Turns a dataset plus a hierarchy into model samples.

use std::ops::Range;

use log::info;
use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::hierarchy::{
    aggregate_region_features, default_policies, hierarchical_graph_clustering, hierarchy_from_partitions, lift_graph,
    pretrain_autoencoder, AggPolicy, ConvAutoencoder, PretrainLog,
};
use crate::ingest::{assemble_st_features, risk_level_histogram, split_dataset, Dataset, Split};
use crate::model::{ModelContext, ModelSpec, Sample};
use crate::similarity::{build_view_adjacency, compose_graph_signal, View, ViewAdjacency, ViewDescriptors};
use crate::types::{build_window, col, GranularityHierarchy, D_NODE, D_ST, ROAD_TYPES};

/// Input normalization fitted on the training period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub risk: f32,
    pub inflow: f32,
    pub outflow: f32,
    pub temp_range: (f32, f32),
}

impl FeatureScaler {
    /// Maxima of risk and flows and the temperature range over `intervals`.
    pub fn fit(d: &Dataset, intervals: Range<usize>) -> Self {
        let max = |a: &Array2<f32>| {
            let m = a.slice(s![intervals.clone(), ..]).fold(0.0f32, |m, &v| m.max(v));
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let temps = &d.temperature[intervals.clone()];
        let lo = temps.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = temps.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        FeatureScaler {
            risk: max(&d.risk),
            inflow: max(&d.inflow),
            outflow: max(&d.outflow),
            temp_range: if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) },
        }
    }
}

/// Region descriptors of the three views. Regions without road data get an
/// all-zero road descriptor.
pub fn view_descriptors(d: &Dataset, history: Range<usize>, thresholds: &[f64; 3]) -> ViewDescriptors {
    let n = d.num_regions();
    ViewDescriptors {
        road: d.road.as_ref().map_or_else(|| Array2::zeros((n, ROAD_TYPES)), |r| r.mapv(f64::from)),
        risk: risk_level_histogram(d, history, thresholds),
        poi: d.poi.mapv(f64::from),
    }
}

/// Clustering input when RS enhancement is off: the concatenated view
/// descriptors.
pub fn descriptor_embedding(desc: &ViewDescriptors) -> Mat {
    concatenate(Axis(1), &[desc.road.view(), desc.risk.view(), desc.poi.view()]).expect("same row count")
}

pub fn pretrain_rs_encoder(d: &Dataset, h: &HyperParams) -> Result<(ConvAutoencoder, PretrainLog)> {
    let tiles = d.rs.as_ref().ok_or_else(|| Error::InvalidInput("dataset has no remote-sensing tiles".into()))?;
    let mut ae = ConvAutoencoder::new(tiles.channels, &h.ae_channels, tiles.height, tiles.width, h.seed)?;
    let log = pretrain_autoencoder(&mut ae, tiles, h.ae_epochs, h.ae_learning_rate)?;
    info!("autoencoder loss {:.5} -> {:.5}", log.losses[0], log.losses.last().unwrap());
    Ok((ae, log))
}

/// Clusters regions into `h.levels` granularities from an embedding.
pub fn build_hierarchy(d: &Dataset, embedding: &Mat, h: &HyperParams) -> Result<GranularityHierarchy> {
    let n = d.num_regions();
    if embedding.nrows() != n {
        return Err(Error::Shape(format!("{} embedding rows for {n} regions", embedding.nrows())));
    }
    if h.levels == 1 {
        return Ok(GranularityHierarchy::flat(n));
    }
    let parts = h.part_numbers_for(n);
    if parts.len() + 1 != h.levels {
        return Err(Error::Config(format!("{} part numbers for {} levels", parts.len(), h.levels)));
    }
    let partitions = hierarchical_graph_clustering(embedding, &d.grid, &parts, h.partition_tolerance, h.seed)?;
    hierarchy_from_partitions(n, partitions)
}

/// A dataset bound to a hierarchy and configuration, producing samples.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub hierarchy: GranularityHierarchy,
    pub split: Split,
    pub scaler: FeatureScaler,
    /// `views[level][view]`; masked views are `None`.
    pub views: Vec<Vec<Option<ViewAdjacency>>>,
    /// Pooled encoder features of the finest regions when enhancement is on.
    pub rs_embedding: Option<Mat>,
    short_term: usize,
    long_term: usize,
    per_week: usize,
    policies: Vec<AggPolicy>,
}

impl PreparedData {
    pub fn new(
        dataset: Dataset,
        hierarchy: GranularityHierarchy,
        h: &HyperParams,
        rs_embedding: Option<Mat>,
    ) -> Result<Self> {
        hierarchy.validate()?;
        let n = dataset.num_regions();
        if hierarchy.level_sizes[0] != n {
            return Err(Error::Shape(format!("hierarchy over {} regions, dataset {n}", hierarchy.level_sizes[0])));
        }
        if hierarchy.levels() != h.levels {
            return Err(Error::Config(format!("hierarchy has {} levels, config {}", hierarchy.levels(), h.levels)));
        }
        if dataset.interval_hours != h.interval_hours {
            return Err(Error::Config(format!(
                "dataset interval {}h, config {}h",
                dataset.interval_hours, h.interval_hours
            )));
        }
        let rs_embedding = if h.rs_enabled {
            let e = rs_embedding.ok_or_else(|| Error::InvalidInput("RS enhancement needs encoder features".into()))?;
            if e.nrows() != n {
                return Err(Error::Shape(format!("{} RS rows for {n} regions", e.nrows())));
            }
            Some(e)
        } else {
            None
        };
        let per_week = h.per_week();
        let split = split_dataset(dataset.num_intervals(), h.short_term, h.long_term, per_week)?;
        let history = 0..split.train_end();
        let scaler = FeatureScaler::fit(&dataset, history.clone());
        let desc = view_descriptors(&dataset, history, &h.risk_thresholds);

        let mut views: Vec<Vec<Option<ViewAdjacency>>> = Vec::new();
        let finest = View::ALL
            .iter()
            .zip(h.view_mask)
            .map(|(&v, on)| on.then(|| build_view_adjacency(v, desc.get(v), h.top_k)).transpose())
            .collect::<Result<Vec<_>>>()?;
        views.push(finest);
        for (i, p) in hierarchy.partitions.iter().enumerate() {
            let coarse = hierarchy.level_sizes[i + 1];
            let lifted = views[i].iter().map(|a| a.as_ref().map(|a| lift_graph(a, p, coarse, h.top_k))).collect();
            views.push(lifted);
        }
        Ok(PreparedData {
            dataset,
            hierarchy,
            split,
            scaler,
            views,
            rs_embedding,
            short_term: h.short_term,
            long_term: h.long_term,
            per_week,
            policies: default_policies(D_ST),
        })
    }

    pub fn window_len(&self) -> usize {
        self.short_term + self.long_term
    }

    pub fn model_spec(&self, h: &HyperParams) -> ModelSpec {
        let grid = (self.dataset.grid.rows, self.dataset.grid.cols);
        let dim = self.rs_embedding.as_ref().map(|e| e.ncols());
        ModelSpec::from_config(h, self.hierarchy.level_sizes.clone(), grid, D_ST, dim)
    }

    pub fn context(&self, spec: &ModelSpec) -> Result<ModelContext> {
        ModelContext::new(spec, &self.hierarchy, self.rs_embedding.clone())
    }

    /// Scaled spatio-temporal features of one interval at every level.
    pub fn level_features(&self, t: usize) -> Result<Vec<Mat>> {
        let d = &self.dataset;
        if t >= d.num_intervals() {
            return Err(Error::InvalidInput(format!("interval {t} beyond {}", d.num_intervals())));
        }
        let sc = &self.scaler;
        let scaled = |a: &Array2<f32>, m: f32| a.row(t).mapv(|v| v / m).to_vec();
        let st = assemble_st_features(
            &scaled(&d.risk, sc.risk),
            &scaled(&d.inflow, sc.inflow),
            &scaled(&d.outflow, sc.outflow),
            &d.poi,
            d.climate(t, sc.temp_range),
            d.temporal(t),
        )?;
        let mut out = vec![st];
        for (i, p) in self.hierarchy.partitions.iter().enumerate() {
            let coarse = aggregate_region_features(&out[i], p, self.hierarchy.level_sizes[i + 1], &self.policies)?;
            out.push(coarse);
        }
        Ok(out)
    }

    /// Concatenated per-view signals `M_A [risk, inflow, outflow]`.
    fn graph_signal(&self, level: usize, feats: &Mat) -> Result<Mat> {
        let nodes = feats.slice(s![.., col::RISK..col::RISK + D_NODE]).to_owned();
        let parts = self.views[level]
            .iter()
            .map(|v| match v {
                Some(adj) => compose_graph_signal(adj, &nodes),
                None => Ok(Array2::zeros(nodes.dim())),
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(concatenate(Axis(1), &views).expect("same row count"))
    }

    /// Raw risk of interval `t` at every level.
    pub fn truth(&self, t: usize) -> Vec<Vec<f64>> {
        let mut out = vec![self.dataset.risk_row(t).iter().map(|&v| v as f64).collect::<Vec<_>>()];
        for (i, p) in self.hierarchy.partitions.iter().enumerate() {
            let mut coarse = vec![0.0; self.hierarchy.level_sizes[i + 1]];
            for (r, &c) in p.iter().enumerate() {
                coarse[c] += out[i][r];
            }
            out.push(coarse);
        }
        out
    }

    /// Window intervals, oldest long-term first.
    pub fn window(&self, target: usize) -> Result<Vec<usize>> {
        if target >= self.dataset.num_intervals() {
            return Err(Error::InvalidInput(format!("target {target} beyond {}", self.dataset.num_intervals())));
        }
        Ok(build_window(target, self.short_term, self.long_term, self.per_week)?.sequence())
    }

    pub fn sample(&self, target: usize) -> Result<Sample> {
        let window = self.window(target)?;
        let levels = self.hierarchy.levels();
        let mut frames: Vec<Vec<Mat>> = vec![Vec::new(); levels];
        let mut graphs: Vec<Vec<Mat>> = vec![Vec::new(); levels];
        for &t in &window {
            for (g, f) in self.level_features(t)?.into_iter().enumerate() {
                graphs[g].push(self.graph_signal(g, &f)?);
                frames[g].push(f);
            }
        }
        let stack = |ms: &[Mat]| {
            let views: Vec<_> = ms.iter().map(|m| m.view()).collect();
            concatenate(Axis(0), &views).expect("same width")
        };
        let tt = self.dataset.temporal(target).encode();
        Ok(Sample {
            target,
            features: frames.iter().map(|f| stack(f)).collect(),
            graphs: graphs.iter().map(|g| stack(g)).collect(),
            target_temporal: Array2::from_shape_vec((1, tt.len()), tt.to_vec()).expect("1 x 32"),
            truth: self.truth(target),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::generate_synthetic_city;
    use crate::types::{GridSpec, D_TEMPORAL};

    fn config() -> HyperParams {
        HyperParams { levels: 2, part_numbers: Some(vec![4]), rs_enabled: false, short_term: 2, long_term: 1, ..HyperParams::default() }
    }

    fn prepared() -> PreparedData {
        let d = generate_synthetic_city(3, GridSpec::new(4, 4), 2).unwrap();
        let h = config();
        let desc = view_descriptors(&d, 0..d.num_intervals(), &h.risk_thresholds);
        let hier = build_hierarchy(&d, &descriptor_embedding(&desc), &h).unwrap();
        PreparedData::new(d, hier, &h, None).unwrap()
    }

    #[test]
    fn sample_shapes_and_truth() {
        let p = prepared();
        let target = p.split.test.start;
        let s = p.sample(target).unwrap();
        assert_eq!(s.features[0].dim(), (3 * 16, D_ST));
        assert_eq!(s.features[1].dim(), (3 * 4, D_ST));
        assert_eq!(s.graphs[1].dim(), (3 * 4, 3 * D_NODE));
        assert_eq!(s.target_temporal.dim(), (1, D_TEMPORAL));
        let total: f64 = s.truth[0].iter().sum();
        assert!((s.truth[1].iter().sum::<f64>() - total).abs() < 1e-9);
        // the last short-term frame is interval target - 1
        let last = p.level_features(target - 1).unwrap();
        assert_eq!(s.features[0].slice(s![32.., ..]), last[0]);
    }

    #[test]
    fn scaled_inputs_stay_in_unit_range_on_train() {
        let p = prepared();
        for t in 0..p.split.train_end() {
            let f = &p.level_features(t).unwrap()[0];
            for c in [col::RISK, col::INFLOW, col::OUTFLOW, col::TEMPERATURE] {
                assert!(f.column(c).iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)), "col {c} at {t}");
            }
        }
    }

    #[test]
    fn masked_view_is_zero() {
        let d = generate_synthetic_city(3, GridSpec::new(4, 4), 2).unwrap();
        let h = HyperParams { view_mask: [true, false, true], ..config() };
        let hier = GranularityHierarchy::new(vec![16, 4], vec![(0..16).map(|i| i / 4).collect()]).unwrap();
        let p = PreparedData::new(d, hier, &h, None).unwrap();
        let s = p.sample(p.split.val.start).unwrap();
        assert!(s.graphs[0].slice(s![.., D_NODE..2 * D_NODE]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn early_targets_lack_history() {
        let p = prepared();
        assert!(matches!(p.sample(0), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn rs_requires_embedding() {
        let d = generate_synthetic_city(3, GridSpec::new(4, 4), 2).unwrap();
        let h = HyperParams { rs_enabled: true, ..config() };
        let hier = GranularityHierarchy::new(vec![16, 4], vec![(0..16).map(|i| i / 4).collect()]).unwrap();
        assert!(PreparedData::new(d, hier, &h, None).is_err());
    }
}
