//! Remote-sensing encoders, similarity-driven clustering into a granularity
//! hierarchy, feature aggregation and graph lifting.

mod aggregate;
mod clustering;
mod lift;
mod partition;
mod rs;

pub use aggregate::{aggregate_region_features, column_policy, default_policies, enhance_features, AggPolicy};
pub use clustering::{
    average_aggregate, build_rs_similarity_graph, cosine, hierarchical_graph_clustering, hierarchy_from_partitions,
    lift_pairs, RsSimilarityGraph,
};
pub use lift::{lift_graph, lift_graph_unpruned};
pub use partition::{balance_bounds, balanced_partition, brute_force_bisection, PartitionResult, WeightedGraph};
pub use rs::{encode_rs_features, pixel_loss, pretrain_autoencoder, ConvAutoencoder, PretrainLog};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::storage::write_atomic;
use crate::types::{GranularityHierarchy, TransformMatrix};

/// On-disk hierarchy: the partitions plus every transformation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub hierarchy: GranularityHierarchy,
    pub transforms: Vec<TransformMatrix>,
}

pub fn save_hierarchy(h: &GranularityHierarchy, path: &Path) -> Result<()> {
    let doc = HierarchyFile { hierarchy: h.clone(), transforms: h.transforms() };
    write_atomic(path, serde_json::to_string_pretty(&doc)?.as_bytes())
}

pub fn load_hierarchy(path: &Path) -> Result<GranularityHierarchy> {
    let doc: HierarchyFile = serde_json::from_slice(&std::fs::read(path)?)?;
    doc.hierarchy.validate()?;
    Ok(doc.hierarchy)
}
