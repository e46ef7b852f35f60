//! Embedding-similarity graphs over adjacent regions and the level-by-level
//! clustering that produces the aggregation relation.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::partition::{balanced_partition, WeightedGraph};
use crate::error::{Error, Result};
use crate::types::{GranularityHierarchy, GridSpec};

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Edges between spatially adjacent nodes weighted by embedding cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsSimilarityGraph {
    pub n: usize,
    /// `(a, b, cos)` with `a < b`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl RsSimilarityGraph {
    pub fn from_adjacency(emb: &Array2<f64>, pairs: &[(usize, usize)]) -> Self {
        let edges = pairs.iter().map(|&(a, b)| (a, b, cosine(emb.row(a), emb.row(b)))).collect();
        RsSimilarityGraph { n: emb.nrows(), edges }
    }

    /// Partition input: negative similarities clamp to 0.
    pub fn to_weighted(&self) -> WeightedGraph {
        let e: Vec<_> = self.edges.iter().map(|&(a, b, w)| (a, b, w.max(0.0))).collect();
        WeightedGraph::from_edges(self.n, &e).expect("cosine weights are finite")
    }
}

pub fn build_rs_similarity_graph(emb: &Array2<f64>, grid: &GridSpec) -> Result<RsSimilarityGraph> {
    if emb.nrows() != grid.num_regions() {
        return Err(Error::Shape(format!("{} embedding rows for {} regions", emb.nrows(), grid.num_regions())));
    }
    Ok(RsSimilarityGraph::from_adjacency(emb, &grid.neighbor_edges()))
}

/// Row means of `x` grouped by `membership`.
pub fn average_aggregate(x: &Array2<f64>, membership: &[usize], k: usize) -> Array2<f64> {
    let mut out = Array2::zeros((k, x.ncols()));
    let mut count = vec![0usize; k];
    for (i, &c) in membership.iter().enumerate() {
        out.row_mut(c).scaled_add(1.0, &x.row(i));
        count[c] += 1;
    }
    for (c, &m) in count.iter().enumerate() {
        if m > 0 {
            out.row_mut(c).mapv_inplace(|v| v / m as f64);
        }
    }
    out
}

/// Cluster pairs joined by at least one fine edge.
pub fn lift_pairs(pairs: &[(usize, usize)], membership: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(a, b)| (membership[a], membership[b]))
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Partitions the level-1 similarity graph into `part_numbers[0]` parts, then
/// each coarser graph in turn, returning one partition per step.
pub fn hierarchical_graph_clustering(
    emb: &Array2<f64>,
    grid: &GridSpec,
    part_numbers: &[usize],
    tolerance: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = grid.num_regions();
    if emb.nrows() != n {
        return Err(Error::Shape(format!("{} embedding rows for {n} regions", emb.nrows())));
    }
    let mut prev = n;
    for (i, &k) in part_numbers.iter().enumerate() {
        let ok = if i == 0 { k >= 1 && k <= prev } else { k >= 1 && k < prev };
        if !ok {
            return Err(Error::Config(format!("part numbers {part_numbers:?} must decrease from {n}")));
        }
        prev = k;
    }
    let mut x = emb.clone();
    let mut pairs = grid.neighbor_edges();
    let mut partitions = Vec::new();
    for (level, &k) in part_numbers.iter().enumerate() {
        let graph = RsSimilarityGraph::from_adjacency(&x, &pairs);
        let p = balanced_partition(&graph.to_weighted(), k, tolerance, seed.wrapping_add(level as u64))?;
        x = average_aggregate(&x, &p.membership, k);
        pairs = lift_pairs(&pairs, &p.membership);
        partitions.push(p.membership);
    }
    Ok(partitions)
}

/// Hierarchy over `n` regions from clustering output.
pub fn hierarchy_from_partitions(n: usize, partitions: Vec<Vec<usize>>) -> Result<GranularityHierarchy> {
    let mut sizes = vec![n];
    for p in &partitions {
        sizes.push(p.iter().max().map_or(0, |m| m + 1));
    }
    GranularityHierarchy::new(sizes, partitions)
}
