//! Lifting similarity graphs onto a coarser level: clusters become nodes, a
//! coarse edge keeps the heaviest fine edge between its clusters, and each
//! node keeps its top-K edges.

use std::collections::BTreeMap;

use crate::similarity::{top_k, ViewAdjacency};

/// Coarse graph before top-K pruning.
pub fn lift_graph_unpruned(fine: &ViewAdjacency, membership: &[usize], coarse: usize) -> ViewAdjacency {
    assert_eq!(membership.len(), fine.n, "partition must cover the fine graph");
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); coarse];
    for (i, row) in fine.rows.iter().enumerate() {
        let a = membership[i];
        for &(j, w) in row {
            let b = membership[j];
            if a != b {
                let e = acc[a].entry(b).or_insert(w);
                *e = e.max(w);
            }
        }
    }
    let rows = acc.into_iter().map(|m| top_k(m.into_iter().collect(), usize::MAX)).collect();
    ViewAdjacency { view: fine.view, n: coarse, rows }
}

pub fn lift_graph(fine: &ViewAdjacency, membership: &[usize], coarse: usize, k: usize) -> ViewAdjacency {
    let mut g = lift_graph_unpruned(fine, membership, coarse);
    for row in g.rows.iter_mut() {
        row.truncate(k);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::View;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> ViewAdjacency {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            rows[i].push((j, w));
        }
        ViewAdjacency { view: View::Poi, n, rows: rows.into_iter().map(|r| top_k(r, usize::MAX)).collect() }
    }

    #[test]
    fn singleton_partition_is_identity() {
        let g = graph(3, &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.25), (2, 0, 0.9)]);
        assert_eq!(lift_graph_unpruned(&g, &[0, 1, 2], 3), g);
    }

    #[test]
    fn max_rule_and_top_k() {
        // {a, b} -> A, {c} -> B
        let g = graph(3, &[(0, 2, 0.3), (1, 2, 0.7), (2, 0, 0.3), (2, 1, 0.7), (0, 1, 0.99)]);
        let c = lift_graph(&g, &[0, 0, 1], 2, 8);
        assert_eq!(c.weight(0, 1), 0.7);
        assert_eq!(c.weight(1, 0), 0.7);
        assert_eq!(c.weight(0, 0), 0.0);

        let g = graph(4, &[(0, 1, 0.9), (0, 2, 0.4), (0, 3, 0.1)]);
        let c = lift_graph(&g, &[0, 1, 2, 3], 4, 1);
        assert_eq!(c.rows[0], vec![(1, 0.9)]);
    }
}
