//! Balanced k-way min-cut partitioning.
//!
//! Recursive bisection; each bisection is a multilevel cycle: heavy-edge
//! matching down to a small graph, greedy graph growing from a few seeded
//! starts, then Fiduccia-Mattheyses refinement while projecting back up.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COARSEST: usize = 24;
const TRIES: usize = 4;
const FM_PASSES: usize = 8;

/// Undirected graph with non-negative edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    /// Parallel edges are summed; self-loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) outside a {n}-node graph")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) has weight {w}")));
            }
            if a != b {
                *acc[a].entry(b).or_default() += w;
                *acc[b].entry(a).or_default() += w;
            }
        }
        Ok(WeightedGraph { adj: acc.into_iter().map(|m| m.into_iter().collect()).collect() })
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    /// Total weight of edges whose endpoints lie in different parts.
    pub fn cut_weight(&self, membership: &[usize]) -> f64 {
        let mut cut = 0.0;
        for (a, row) in self.adj.iter().enumerate() {
            for &(b, w) in row {
                if a < b && membership[a] != membership[b] {
                    cut += w;
                }
            }
        }
        cut
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub k: usize,
    pub membership: Vec<usize>,
}

impl PartitionResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &p in &self.membership {
            s[p] += 1;
        }
        s
    }
}

/// Allowed part sizes `⌈n/k⌉ ± tolerance`.
pub fn balance_bounds(n: usize, k: usize, tolerance: usize) -> (usize, usize) {
    let ceil = n.div_ceil(k);
    (ceil.saturating_sub(tolerance).max(1), ceil + tolerance)
}

pub fn balanced_partition(g: &WeightedGraph, k: usize, tolerance: usize, seed: u64) -> Result<PartitionResult> {
    let n = g.len();
    if k == 0 || k > n {
        return Err(Error::InfeasibleBalance(format!("{k} parts over {n} nodes")));
    }
    let (lo, hi) = balance_bounds(n, k, tolerance);
    if k * lo > n || k * hi < n {
        return Err(Error::InfeasibleBalance(format!("{n} nodes cannot form {k} parts of size {lo}..={hi}")));
    }
    let sizes: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership = vec![0; n];
    let level = Level { adj: g.adj.clone(), vwgt: vec![1; n] };
    split(&level, (0..n).collect(), &sizes, (lo, hi), 0, &mut membership, &mut rng);
    let result = PartitionResult { k, membership };
    if let Some(s) = result.sizes().iter().find(|&&s| s < lo || s > hi) {
        return Err(Error::InfeasibleBalance(format!("part of size {s} outside {lo}..={hi}")));
    }
    Ok(result)
}

/// Exact minimum cut over all bisections with both sides inside the balance
/// bounds. Exponential; meant as a reference for graphs of at most 20 nodes.
pub fn brute_force_bisection(g: &WeightedGraph, tolerance: usize) -> (f64, Vec<usize>) {
    let n = g.len();
    assert!((2..=20).contains(&n), "brute force needs 2..=20 nodes");
    let (lo, hi) = balance_bounds(n, 2, tolerance);
    let mut best = (f64::INFINITY, vec![0; n]);
    // node 0 stays on side 0 to skip mirrored assignments
    for mask in 0u32..(1 << (n - 1)) {
        let ones = mask.count_ones() as usize;
        if ones < lo || ones > hi || n - ones < lo || n - ones > hi {
            continue;
        }
        let m: Vec<usize> = (0..n).map(|v| if v == 0 { 0 } else { ((mask >> (v - 1)) & 1) as usize }).collect();
        let cut = g.cut_weight(&m);
        if cut < best.0 {
            best = (cut, m);
        }
    }
    best
}

struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    vwgt: Vec<usize>,
}

impl Level {
    fn len(&self) -> usize {
        self.adj.len()
    }

    fn total(&self) -> usize {
        self.vwgt.iter().sum()
    }

    fn max_weight(&self) -> usize {
        self.vwgt.iter().copied().max().unwrap_or(1)
    }

    fn induced(&self, nodes: &[usize]) -> Level {
        let mut local = vec![usize::MAX; self.len()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let adj = nodes
            .iter()
            .map(|&v| {
                self.adj[v].iter().filter(|(u, _)| local[*u] != usize::MAX).map(|&(u, w)| (local[u], w)).collect()
            })
            .collect();
        Level { adj, vwgt: nodes.iter().map(|&v| self.vwgt[v]).collect() }
    }

    fn cut(&self, side: &[u8]) -> f64 {
        let mut cut = 0.0;
        for (a, row) in self.adj.iter().enumerate() {
            for &(b, w) in row {
                if a < b && side[a] != side[b] {
                    cut += w;
                }
            }
        }
        cut
    }

    fn side_weight(&self, side: &[u8]) -> usize {
        side.iter().zip(&self.vwgt).filter(|(s, _)| **s == 0).map(|(_, w)| w).sum()
    }

    /// Moving `v` to the other side lowers the cut by this much.
    fn gains(&self, side: &[u8]) -> Vec<f64> {
        (0..self.len())
            .map(|v| {
                self.adj[v].iter().map(|&(u, w)| if side[u] == side[v] { -w } else { w }).sum()
            })
            .collect()
    }
}

fn split(
    level: &Level,
    nodes: Vec<usize>,
    sizes: &[usize],
    leaf: (usize, usize),
    first: usize,
    out: &mut [usize],
    rng: &mut ChaCha8Rng,
) {
    if sizes.len() == 1 {
        for v in nodes {
            out[v] = first;
        }
        return;
    }
    let n = nodes.len();
    let k1 = sizes.len() / 2;
    let range = if sizes.len() == 2 {
        (leaf.0.max(n.saturating_sub(leaf.1)), leaf.1.min(n - leaf.0.min(n)))
    } else {
        let t: usize = sizes[..k1].iter().sum();
        (t, t)
    };
    let sub = level.induced(&nodes);
    let side = bisect(&sub, range, rng);
    let (a, b): (Vec<_>, Vec<_>) = nodes.iter().zip(&side).partition(|(_, s)| **s == 0);
    split(level, a.into_iter().map(|(v, _)| *v).collect(), &sizes[..k1], leaf, first, out, rng);
    split(level, b.into_iter().map(|(v, _)| *v).collect(), &sizes[k1..], leaf, first + k1, out, rng);
}

/// Two-way split with side-0 weight in `range`.
fn bisect(fine: &Level, range: (usize, usize), rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut levels = vec![];
    let mut maps: Vec<Vec<usize>> = vec![];
    {
        let mut cur = Level { adj: fine.adj.clone(), vwgt: fine.vwgt.clone() };
        let cap = (fine.total() / COARSEST).max(2);
        while cur.len() > COARSEST {
            let (coarse, map) = coarsen(&cur, cap, rng);
            if coarse.len() * 10 > cur.len() * 9 {
                break;
            }
            levels.push(cur);
            maps.push(map);
            cur = coarse;
        }
        levels.push(cur);
    }

    let mut best: Option<(f64, Vec<u8>)> = None;
    for _ in 0..TRIES {
        let coarsest = levels.last().unwrap();
        let mut side = grow(coarsest, range, rng);
        for depth in (0..levels.len()).rev() {
            if depth + 1 < levels.len() {
                side = maps[depth].iter().map(|&c| side[c]).collect();
            }
            let lv = &levels[depth];
            let slack = if depth == 0 { 0 } else { lv.max_weight() };
            let accept = (range.0.saturating_sub(slack), range.1 + slack);
            rebalance(lv, &mut side, accept);
            refine(lv, &mut side, accept);
        }
        let cut = levels[0].cut(&side);
        if best.as_ref().is_none_or(|(c, _)| cut < *c) {
            best = Some((cut, side));
        }
    }
    best.unwrap().1
}

fn coarsen(level: &Level, cap: usize, rng: &mut ChaCha8Rng) -> (Level, Vec<usize>) {
    let n = level.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mate = vec![usize::MAX; n];
    for &v in &order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut pick = v;
        let mut best = f64::NEG_INFINITY;
        for &(u, w) in &level.adj[v] {
            if mate[u] == usize::MAX && u != v && level.vwgt[u] + level.vwgt[v] <= cap && w > best {
                best = w;
                pick = u;
            }
        }
        mate[v] = pick;
        mate[pick] = v;
    }
    let mut map = vec![usize::MAX; n];
    let mut count = 0;
    for v in 0..n {
        if map[v] == usize::MAX {
            map[v] = count;
            map[mate[v]] = count;
            count += 1;
        }
    }
    let mut vwgt = vec![0; count];
    let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
    for v in 0..n {
        vwgt[map[v]] += level.vwgt[v];
        for &(u, w) in &level.adj[v] {
            if map[u] != map[v] {
                *acc[map[v]].entry(map[u]).or_default() += w;
            }
        }
    }
    let adj = acc.into_iter().map(|m| m.into_iter().collect()).collect();
    (Level { adj, vwgt }, map)
}

/// Greedy graph growing from a random seed node until side 0 reaches the
/// middle of `range`.
fn grow(level: &Level, range: (usize, usize), rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = level.len();
    let target = (range.0 + range.1).div_ceil(2);
    let mut side = vec![1u8; n];
    let mut weight = 0;
    let mut conn = vec![0.0f64; n];
    let deg: Vec<f64> = level.adj.iter().map(|r| r.iter().map(|e| e.1).sum()).collect();
    let mut next = Some(rng.random_range(0..n));
    while let Some(v) = next {
        if weight + level.vwgt[v] > range.1 && weight >= range.0 {
            break;
        }
        side[v] = 0;
        weight += level.vwgt[v];
        for &(u, w) in &level.adj[v] {
            conn[u] += w;
        }
        if weight >= target {
            break;
        }
        // prefer the frontier; fall back to any remaining node for
        // disconnected graphs
        next = (0..n)
            .filter(|&u| side[u] == 1)
            .map(|u| (u, conn[u] > 0.0, 2.0 * conn[u] - deg[u]))
            .max_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)).then(b.0.cmp(&a.0)))
            .map(|(u, _, _)| u);
    }
    side
}

/// Moves the cheapest nodes off the heavy side until side-0 weight is in range.
fn rebalance(level: &Level, side: &mut [u8], range: (usize, usize)) {
    loop {
        let w0 = level.side_weight(side);
        let from = if w0 < range.0 {
            1
        } else if w0 > range.1 {
            0
        } else {
            return;
        };
        let gains = level.gains(side);
        let pick = (0..level.len())
            .filter(|&v| side[v] == from)
            .max_by(|&a, &b| gains[a].total_cmp(&gains[b]).then(b.cmp(&a)));
        match pick {
            Some(v) => side[v] = 1 - from,
            None => return,
        }
    }
}

/// Fiduccia-Mattheyses passes. Moves may step one node weight outside
/// `accept`; only in-range prefixes are kept.
fn refine(level: &Level, side: &mut [u8], accept: (usize, usize)) {
    let n = level.len();
    let slack = level.max_weight();
    let (move_lo, move_hi) = (accept.0.saturating_sub(slack), accept.1 + slack);
    for _ in 0..FM_PASSES {
        let mut gains = level.gains(side);
        let mut locked = vec![false; n];
        let mut w0 = level.side_weight(side);
        let start_cut = level.cut(side);
        let mut cut = start_cut;
        let balanced = |w: usize| w >= accept.0 && w <= accept.1;
        let mut best = if balanced(w0) { (cut, 0) } else { (f64::INFINITY, 0) };
        let mut moves = Vec::new();
        loop {
            let mut pick: Option<usize> = None;
            for v in 0..n {
                if locked[v] {
                    continue;
                }
                let nw = if side[v] == 0 { w0 - level.vwgt[v] } else { w0 + level.vwgt[v] };
                if nw < move_lo || nw > move_hi {
                    continue;
                }
                if pick.is_none_or(|p| gains[v] > gains[p]) {
                    pick = Some(v);
                }
            }
            let Some(v) = pick else { break };
            cut -= gains[v];
            w0 = if side[v] == 0 { w0 - level.vwgt[v] } else { w0 + level.vwgt[v] };
            side[v] = 1 - side[v];
            locked[v] = true;
            gains[v] = -gains[v];
            for &(u, w) in &level.adj[v] {
                if side[u] == side[v] {
                    gains[u] -= 2.0 * w;
                } else {
                    gains[u] += 2.0 * w;
                }
            }
            moves.push(v);
            if balanced(w0) && cut < best.0 - 1e-12 {
                best = (cut, moves.len());
            }
        }
        for &v in &moves[best.1..] {
            side[v] = 1 - side[v];
        }
        if !(best.0 < start_cut - 1e-12) {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> WeightedGraph {
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b, rng.random::<f64>()));
                }
            }
        }
        WeightedGraph::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn one_part_cuts_nothing() {
        let g = WeightedGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 2.0)]).unwrap();
        let p = balanced_partition(&g, 1, 1, 0).unwrap();
        assert_eq!(p.membership, vec![0; 4]);
        assert_eq!(g.cut_weight(&p.membership), 0.0);
    }

    #[test]
    fn disconnected_halves_are_separated() {
        let g = WeightedGraph::from_edges(6, &[(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (0, 2, 0.5)]).unwrap();
        let p = balanced_partition(&g, 2, 1, 7).unwrap();
        assert_eq!(g.cut_weight(&p.membership), 0.0);
    }

    #[test]
    fn near_optimal_on_small_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..30 {
            let n = rng.random_range(4..=12);
            let g = random_graph(&mut rng, n, 0.5);
            let p = balanced_partition(&g, 2, 1, trial).unwrap();
            let (opt, _) = brute_force_bisection(&g, 1);
            assert!(g.cut_weight(&p.membership) <= 1.5 * opt + 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn k_way_sizes_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 256, 0.03);
        for k in [2, 3, 4, 7, 16, 64] {
            let p = balanced_partition(&g, k, 1, 1).unwrap();
            let (lo, hi) = balance_bounds(256, k, 1);
            assert!(p.sizes().iter().all(|&s| s >= lo && s <= hi), "k={k}: {:?}", p.sizes());
        }
    }

    #[test]
    fn grid_bisection_finds_a_straight_cut() {
        let (r, c) = (8, 8);
        let mut edges = Vec::new();
        for i in 0..r {
            for j in 0..c {
                if j + 1 < c {
                    edges.push((i * c + j, i * c + j + 1, 1.0));
                }
                if i + 1 < r {
                    edges.push((i * c + j, (i + 1) * c + j, 1.0));
                }
            }
        }
        let g = WeightedGraph::from_edges(64, &edges).unwrap();
        let p = balanced_partition(&g, 2, 0, 0).unwrap();
        assert_eq!(p.sizes(), vec![32, 32]);
        assert!(g.cut_weight(&p.membership) <= 10.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_graph(&mut rng, 60, 0.1);
        assert_eq!(balanced_partition(&g, 4, 1, 11).unwrap(), balanced_partition(&g, 4, 1, 11).unwrap());
    }

    #[test]
    fn infeasible_requests_fail() {
        let g = WeightedGraph::from_edges(5, &[]).unwrap();
        assert!(matches!(balanced_partition(&g, 6, 1, 0), Err(Error::InfeasibleBalance(_))));
        assert!(matches!(balanced_partition(&g, 2, 0, 0), Err(Error::InfeasibleBalance(_))));
        assert!(balanced_partition(&g, 5, 0, 0).is_ok());
    }
}
