//! Multi-view semantic similarity graphs.
//!
//! Each view keeps, for every region, the `K` most similar other regions with
//! similarity `1 - JSD` as edge weight. The views are not symmetrized.

use std::io::{BufRead, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Road,
    Risk,
    Poi,
}

impl View {
    pub const ALL: [View; 3] = [View::Road, View::Risk, View::Poi];

    pub fn tag(self) -> &'static str {
        match self {
            View::Road => "road",
            View::Risk => "risk",
            View::Poi => "poi",
        }
    }

    pub fn from_tag(s: &str) -> Option<View> {
        View::ALL.into_iter().find(|v| v.tag() == s)
    }
}

/// Jensen-Shannon divergence with base-2 logarithms, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("distribution entries must be finite and non-negative".into()));
    }
    // Each term is evaluated symmetrically so that jsd(p, q) == jsd(q, p)
    // bit for bit.
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == b {
            continue;
        }
        let m = 0.5 * (a + b);
        let ta = if a > 0.0 { a * (a / m).log2() } else { 0.0 };
        let tb = if b > 0.0 { b * (b / m).log2() } else { 0.0 };
        acc += if a < b { ta + tb } else { tb + ta };
    }
    Ok((0.5 * acc).clamp(0.0, 1.0))
}

/// `1 - jsd`, or 0 when either descriptor is all-zero.
pub fn similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.iter().all(|&v| v == 0.0) || q.iter().all(|&v| v == 0.0) {
        if p.len() != q.len() {
            return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
        }
        return Ok(0.0);
    }
    Ok(1.0 - jsd(p, q)?)
}

/// Per-view region descriptors (rows are distributions or all-zero).
#[derive(Debug, Clone)]
pub struct ViewDescriptors {
    pub road: Array2<f64>,
    pub risk: Array2<f64>,
    pub poi: Array2<f64>,
}

impl ViewDescriptors {
    pub fn get(&self, view: View) -> &Array2<f64> {
        match view {
            View::Road => &self.road,
            View::Risk => &self.risk,
            View::Poi => &self.poi,
        }
    }
}

pub fn view_similarity(desc: &ViewDescriptors, view: View, i: usize, j: usize) -> Result<f64> {
    let d = desc.get(view);
    similarity(d.row(i).as_slice().unwrap(), d.row(j).as_slice().unwrap())
}

/// Sparse directed adjacency with one neighbour list per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewAdjacency {
    pub view: View,
    pub n: usize,
    /// `rows[i]` holds `(j, weight)` sorted by descending weight, then index.
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Keeps the `k` best `(j, w)` pairs by weight, ties to the smaller index.
pub fn top_k(mut candidates: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    candidates
}

impl ViewAdjacency {
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i].iter().find(|(c, _)| *c == j).map_or(0.0, |(_, w)| *w)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[[i, j]] = w;
            }
        }
        m
    }

    /// Coordinate-list text form: a `view <tag> <n>` header, then `i j w`.
    pub fn write_coo(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "view {} {}", self.view.tag(), self.n)?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_coo(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty adjacency file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (view, n) = match parts.as_slice() {
            ["view", tag, n] => (
                View::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown view {tag}")))?,
                n.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?,
            ),
            _ => return Err(Error::Format(format!("bad adjacency header {header:?}"))),
        };
        let mut rows = vec![Vec::new(); n];
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("bad adjacency line {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            let i: usize = f[0].parse().map_err(|_| bad())?;
            let j: usize = f[1].parse().map_err(|_| bad())?;
            let v: f64 = f[2].parse().map_err(|_| bad())?;
            if i >= n || j >= n {
                return Err(bad());
            }
            rows[i].push((j, v));
        }
        Ok(ViewAdjacency { view, n, rows })
    }
}

pub fn build_view_adjacency(view: View, descriptors: &Array2<f64>, k: usize) -> Result<ViewAdjacency> {
    let n = descriptors.nrows();
    if n < 2 || k == 0 {
        return Err(Error::InvalidInput(format!("need N >= 2 and K >= 1, got N={n}, K={k}")));
    }
    let rows: Vec<&[f64]> = descriptors.rows().into_iter().map(|r| r.to_slice().unwrap()).collect();
    let mut sims = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let s = similarity(rows[i], rows[j])?;
            sims[[i, j]] = s;
            sims[[j, i]] = s;
        }
    }
    let adj_rows = (0..n)
        .map(|i| top_k((0..n).filter(|&j| j != i).map(|j| (j, sims[[i, j]])).collect(), k))
        .collect();
    Ok(ViewAdjacency { view, n, rows: adj_rows })
}

/// `M_A · M_n` for one view.
pub fn compose_graph_signal(adj: &ViewAdjacency, node_feats: &Array2<f64>) -> Result<Array2<f64>> {
    if node_feats.nrows() != adj.n {
        return Err(Error::Shape(format!("{} node rows for a {}-node graph", node_feats.nrows(), adj.n)));
    }
    let mut out = Array2::zeros(node_feats.dim());
    for (i, row) in adj.rows.iter().enumerate() {
        for &(j, w) in row {
            out.row_mut(i).scaled_add(w, &node_feats.row(j));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.311278).abs() < 1e-6);
        assert!(jsd(&[0.5, 0.5], &[1.0]).is_err());
        assert!(jsd(&[-0.5, 1.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((similarity(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.688722).abs() < 1e-6);
        assert_eq!(similarity(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn adjacency_examples() {
        let d = array![[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]];
        let a = build_view_adjacency(View::Poi, &d, 1).unwrap();
        assert_eq!(a.rows[0], vec![(1, 1.0)]);
        assert_eq!(a.rows[1], vec![(0, 1.0)]);
        let full = build_view_adjacency(View::Poi, &d, 5).unwrap();
        assert!(full.rows.iter().all(|r| r.len() == 2));
        let two = build_view_adjacency(View::Road, &array![[1.0, 0.0], [0.0, 1.0]], 1).unwrap();
        assert!(two.rows.iter().all(|r| r.len() == 1));
    }

    #[test]
    fn compose_examples() {
        let adj = ViewAdjacency { view: View::Risk, n: 2, rows: vec![vec![(1, 0.5)], vec![(0, 1.0)]] };
        let x = array![[1.0, 0.0, 2.0], [3.0, 1.0, 0.0]];
        assert_eq!(compose_graph_signal(&adj, &x).unwrap(), array![[1.5, 0.5, 0.0], [1.0, 0.0, 2.0]]);
        let id = ViewAdjacency { view: View::Risk, n: 2, rows: vec![vec![(0, 1.0)], vec![(1, 1.0)]] };
        assert_eq!(compose_graph_signal(&id, &x).unwrap(), x);
        assert_eq!(compose_graph_signal(&adj, &Array2::zeros((2, 3))).unwrap(), Array2::<f64>::zeros((2, 3)));
        assert!(compose_graph_signal(&adj, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn coo_round_trip() {
        let d = array![[0.2, 0.8], [0.5, 0.5], [1.0, 0.0], [0.1, 0.9]];
        let a = build_view_adjacency(View::Road, &d, 2).unwrap();
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let b = ViewAdjacency::read_coo(buf.as_slice()).unwrap();
        assert_eq!(a, b);
    }

    fn dist(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, len).prop_filter_map("non-zero", |v| {
            let s: f64 = v.iter().sum();
            (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn top_k_keeps_best(rows in proptest::collection::vec(dist(4), 2..12), k in 1usize..6) {
            let n = rows.len();
            let d = Array2::from_shape_fn((n, 4), |(i, j)| rows[i][j]);
            let a = build_view_adjacency(View::Poi, &d, k).unwrap();
            for i in 0..n {
                prop_assert_eq!(a.rows[i].len(), k.min(n - 1));
                let kept_min = a.rows[i].iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
                for j in (0..n).filter(|&j| j != i && a.rows[i].iter().all(|x| x.0 != j)) {
                    prop_assert!(similarity(&rows[i], &rows[j]).unwrap() <= kept_min);
                }
                prop_assert!(a.rows[i].iter().all(|&(j, w)| j != i && (0.0..=1.0).contains(&w)));
            }
        }

        #[test]
        fn compose_is_linear(x in proptest::collection::vec(-5.0f64..5.0, 9), y in proptest::collection::vec(-5.0f64..5.0, 9)) {
            let adj = ViewAdjacency { view: View::Risk, n: 3, rows: vec![vec![(1, 0.5), (2, 0.25)], vec![(0, 1.0)], vec![(1, 0.75)]] };
            let xm = Array2::from_shape_vec((3, 3), x).unwrap();
            let ym = Array2::from_shape_vec((3, 3), y).unwrap();
            let lhs = compose_graph_signal(&adj, &(&xm + &ym)).unwrap();
            let rhs = compose_graph_signal(&adj, &xm).unwrap() + compose_graph_signal(&adj, &ym).unwrap();
            prop_assert!(lhs.iter().zip(rhs.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
