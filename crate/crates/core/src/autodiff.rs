//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records matrix operations as they are evaluated and replays
//! them backwards. Every op has a hand-written vector-Jacobian product. Frames
//! of a sequence are stacked row-wise: a `T x N x d` tensor is stored as a
//! `(T*N) x d` matrix with frame `t` occupying rows `t*N..(t+1)*N`.

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub struct GridShape {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    Im2col { x: Var, shape: GridShape },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, shape: GridShape },
    Gather { x: Var, index: Arc<Vec<usize>> },
    Scatter { x: Var, index: Arc<Vec<usize>>, weight: Option<Arc<Vec<f64>>> },
    TemporalScores { q: Var, k: Var, steps: usize, scale: f64 },
    TemporalMix { p: Var, v: Var, steps: usize },
    FoldTime { x: Var, steps: usize },
    TemporalPool { alpha: Var, x: Var, steps: usize },
    WeightedSqErr { pred: Var, target: Arc<Vec<f64>>, weight: Arc<Vec<f64>>, denom: f64 },
    MeanSq(Var),
    BceLogits { logits: Var, labels: Arc<Vec<f64>>, eps: f64 },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
    /// Depends on a parameter; gradients are only propagated into such nodes.
    tracked: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::AddScalar(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::SoftmaxRows(a) | Op::MeanSq(a) => vec![*a],
            Op::LayerNorm { x, .. }
            | Op::Im2col { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Upsample { x, .. }
            | Op::Gather { x, .. }
            | Op::Scatter { x, .. }
            | Op::FoldTime { x, .. } => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::TemporalScores { q, k, .. } => vec![*q, *k],
            Op::TemporalMix { p, v, .. } => vec![*p, *v],
            Op::TemporalPool { alpha, x, .. } => vec![*alpha, *x],
            Op::WeightedSqErr { pred, .. } => vec![*pred],
            Op::BceLogits { logits, .. } => vec![*logits],
            Op::WeightedSum(terms) => terms.iter().map(|t| t.0).collect(),
        }
    }
}

/// Gradients with respect to registered parameters, indexed by parameter slot.
pub type ParamGrads = Vec<Option<Mat>>;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn scalar(v: f64) -> Mat {
    Array2::from_elem((1, 1), v)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let tracked = matches!(op, Op::Param(_)) || op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable input whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: Mat) -> Var {
        self.push(value, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// `a + 1 row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a row vector");
        let v = map_rows(self.value(a), &flat(self.value(row)), |x, b| x + b);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a + s` for a `1 x 1` scalar node `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar_value(s);
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::AddScalar(a, s))
    }

    /// `a ⊙ row`, broadcasting a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a row vector");
        let v = map_rows(self.value(a), &flat(self.value(row)), |x, b| x * b);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Per-row standardization without gain or offset.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, c) = xv.dim();
        let d = c as f64;
        let mut data = flat(xv).into_owned();
        let mut inv_std = Vec::with_capacity(rows);
        for row in data.chunks_exact_mut(c.max(1)) {
            let mean = row.iter().sum::<f64>() / d;
            row.iter_mut().for_each(|v| *v -= mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= is);
            inv_std.push(is);
        }
        self.push(from_flat(rows, c, data), Op::LayerNorm { x, inv_std })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// 3x3 zero-padded patches. Input rows are grid cells of stacked frames,
    /// output row `r` holds the 9 neighbouring rows of `r` side by side
    /// (kernel offset major, channel minor).
    pub fn im2col(&mut self, x: Var, shape: GridShape) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        assert_eq!(xv.nrows(), shape.frames * shape.cells(), "im2col row count");
        let mut out = Array2::zeros((xv.nrows(), 9 * c));
        for_each_patch(shape, |dst, k, src| {
            out.slice_mut(s![dst, k * c..(k + 1) * c]).assign(&xv.row(src));
        });
        self.push(out, Op::Im2col { x, shape })
    }

    /// 2x2 max pooling with stride 2; `shape` describes the input grid and must
    /// have even sides.
    pub fn max_pool(&mut self, x: Var, shape: GridShape) -> Var {
        let xv = self.value(x);
        let c = xv.ncols();
        let (ho, wo) = (shape.rows / 2, shape.cols / 2);
        assert!(shape.rows % 2 == 0 && shape.cols % 2 == 0, "max_pool needs even sides");
        let mut out = Array2::zeros((shape.frames * ho * wo, c));
        let mut argmax = vec![0usize; out.len()];
        for f in 0..shape.frames {
            for r in 0..ho {
                for q in 0..wo {
                    let dst = f * ho * wo + r * wo + q;
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = 0;
                        for (dr, dq) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let src = f * shape.cells() + (2 * r + dr) * shape.cols + 2 * q + dq;
                            let v = xv[[src, ch]];
                            if v > best {
                                best = v;
                                arg = src;
                            }
                        }
                        out[[dst, ch]] = best;
                        argmax[dst * c + ch] = arg;
                    }
                }
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Nearest-neighbour 2x upsampling; `shape` describes the input grid.
    pub fn upsample(&mut self, x: Var, shape: GridShape) -> Var {
        let xv = self.value(x);
        let (ho, wo) = (shape.rows * 2, shape.cols * 2);
        let mut out = Array2::zeros((shape.frames * ho * wo, xv.ncols()));
        for f in 0..shape.frames {
            for r in 0..ho {
                for q in 0..wo {
                    let src = f * shape.cells() + (r / 2) * shape.cols + q / 2;
                    out.row_mut(f * ho * wo + r * wo + q).assign(&xv.row(src));
                }
            }
        }
        self.push(out, Op::Upsample { x, shape })
    }

    /// `out[i] = x[index[i]]`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((index.len(), xv.ncols()));
        for (i, &j) in index.iter().enumerate() {
            out.row_mut(i).assign(&xv.row(j));
        }
        self.push(out, Op::Gather { x, index })
    }

    /// `out[index[i]] += weight[i] * x[i]` into `n_out` rows.
    pub fn scatter(&mut self, x: Var, index: Arc<Vec<usize>>, weight: Option<Arc<Vec<f64>>>, n_out: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(index.len(), xv.nrows(), "scatter index length");
        let mut out = Array2::zeros((n_out, xv.ncols()));
        for (i, &j) in index.iter().enumerate() {
            let w = weight.as_ref().map_or(1.0, |w| w[i]);
            out.row_mut(j).scaled_add(w, &xv.row(i));
        }
        self.push(out, Op::Scatter { x, index, weight })
    }

    /// Attention logits across time, independently per region:
    /// `out[(t, r), t'] = scale * <q[(t, r)], k[(t', r)]>`.
    pub fn temporal_scores(&mut self, q: Var, k: Var, steps: usize, scale: f64) -> Var {
        let (rows, d) = self.value(q).dim();
        let (qv, kv) = (flat(self.value(q)), flat(self.value(k)));
        let n = rows / steps;
        let mut out = vec![0.0; rows * steps];
        for i in 0..rows {
            let r = i % n;
            let qi = &qv[i * d..(i + 1) * d];
            for u in 0..steps {
                let j = u * n + r;
                out[i * steps + u] = scale * dot(qi, &kv[j * d..(j + 1) * d]);
            }
        }
        self.push(from_flat(rows, steps, out), Op::TemporalScores { q, k, steps, scale })
    }

    /// `out[(t, r)] = Σ_t' p[(t, r), t'] * v[(t', r)]`.
    pub fn temporal_mix(&mut self, p: Var, v: Var, steps: usize) -> Var {
        let (rows, d) = self.value(v).dim();
        let (pv, vv) = (flat(self.value(p)), flat(self.value(v)));
        let n = rows / steps;
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            let r = i % n;
            let oi = &mut out[i * d..(i + 1) * d];
            for u in 0..steps {
                let j = u * n + r;
                axpy(oi, pv[i * steps + u], &vv[j * d..(j + 1) * d]);
            }
        }
        self.push(from_flat(rows, d, out), Op::TemporalMix { p, v, steps })
    }

    /// Reshapes a stacked `(T*N) x 1` column into `N x T`.
    pub fn fold_time(&mut self, x: Var, steps: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ncols(), 1, "fold_time expects a column");
        let n = xv.nrows() / steps;
        let out = Array2::from_shape_fn((n, steps), |(r, t)| xv[[t * n + r, 0]]);
        self.push(out, Op::FoldTime { x, steps })
    }

    /// `out[r] = Σ_t alpha[r, t] * x[(t, r)]`.
    pub fn temporal_pool(&mut self, alpha: Var, x: Var, steps: usize) -> Var {
        let (rows, d) = self.value(x).dim();
        let (av, xv) = (flat(self.value(alpha)), flat(self.value(x)));
        let n = rows / steps;
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let or = &mut out[r * d..(r + 1) * d];
            for t in 0..steps {
                let j = t * n + r;
                axpy(or, av[r * steps + t], &xv[j * d..(j + 1) * d]);
            }
        }
        self.push(from_flat(n, d, out), Op::TemporalPool { alpha, x, steps })
    }

    /// `Σ_i weight_i (target_i - pred_i)^2 / denom` over a column `pred`.
    pub fn weighted_sq_err(&mut self, pred: Var, target: Arc<Vec<f64>>, weight: Arc<Vec<f64>>, denom: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), target.len(), "weighted_sq_err length");
        let v = pv
            .iter()
            .zip(target.iter())
            .zip(weight.iter())
            .map(|((p, t), w)| w * (t - p) * (t - p))
            .sum::<f64>()
            / denom;
        self.push(scalar(v), Op::WeightedSqErr { pred, target, weight, denom })
    }

    /// Mean of squared entries.
    pub fn mean_sq(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let v = xv.iter().map(|v| v * v).sum::<f64>() / xv.len() as f64;
        self.push(scalar(v), Op::MeanSq(x))
    }

    /// Mean binary cross entropy of `sigmoid(logits)` clamped to `[eps, 1-eps]`;
    /// a label counts as an occurrence when it is positive.
    pub fn bce_logits(&mut self, logits: Var, labels: Arc<Vec<f64>>, eps: f64) -> Var {
        let probs: Vec<f64> = self.value(logits).iter().map(|&z| sigmoid(z)).collect();
        let v = crate::objective::bce(&probs, &labels, eps);
        self.push(scalar(v), Op::BceLogits { logits, labels, eps })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(t, w)| w * self.scalar_value(t)).sum();
        self.push(scalar(v), Op::WeightedSum(terms.to_vec()))
    }

    /// Back-propagates from a scalar `root` and returns gradients of the
    /// parameter slots `0..num_slots`.
    pub fn backward(&self, root: Var, num_slots: usize) -> ParamGrads {
        let mut grads: Vec<Option<Mat>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.dim()));
        let mut out: ParamGrads = (0..num_slots).map(|_| None).collect();

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            let val = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(slot) => accumulate_owned(&mut out[*slot], g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].tracked {
                        accumulate_owned(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[b.0].tracked {
                        accumulate_owned(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate_owned(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate_owned(&mut grads[b.0], -g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate_owned(&mut grads[row.0], gr);
                    accumulate_owned(&mut grads[a.0], g);
                }
                Op::AddScalar(a, s) => {
                    accumulate_owned(&mut grads[s.0], scalar(g.sum()));
                    accumulate_owned(&mut grads[a.0], g);
                }
                Op::MulRow(a, row) => {
                    let rv = flat(self.value(*row));
                    let c = rv.len();
                    if self.nodes[row.0].tracked {
                        let (gs, av) = (flat(&g), flat(self.value(*a)));
                        let mut gr = vec![0.0; c];
                        for (gi, ai) in gs.chunks_exact(c.max(1)).zip(av.chunks_exact(c.max(1))) {
                            for j in 0..c {
                                gr[j] += gi[j] * ai[j];
                            }
                        }
                        accumulate_owned(&mut grads[row.0], from_flat(1, c, gr));
                    }
                    let ga = map_rows(&g, &rv, |x, b| x * b);
                    accumulate_owned(&mut grads[a.0], ga);
                }
                Op::Scale(a, c) => accumulate_owned(&mut grads[a.0], g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate_owned(&mut grads[a.0], ga);
                }
                Op::SoftmaxRows(a) => {
                    let (rows, c) = val.dim();
                    let y = flat(val);
                    let mut ga = flat(&g).into_owned();
                    for (gr, yr) in ga.chunks_exact_mut(c.max(1)).zip(y.chunks_exact(c.max(1))) {
                        let s = dot(gr, yr);
                        gr.iter_mut().zip(yr).for_each(|(g, &y)| *g = y * (*g - s));
                    }
                    accumulate_owned(&mut grads[a.0], from_flat(rows, c, ga));
                }
                Op::LayerNorm { x, inv_std } => {
                    let (rows, c) = val.dim();
                    let d = c as f64;
                    let y = flat(val);
                    let mut gx = flat(&g).into_owned();
                    for ((gr, yr), is) in gx.chunks_exact_mut(c.max(1)).zip(y.chunks_exact(c.max(1))).zip(inv_std) {
                        let mean_g = gr.iter().sum::<f64>() / d;
                        let mean_gy = dot(gr, yr) / d;
                        gr.iter_mut().zip(yr).for_each(|(g, &y)| *g = is * (*g - mean_g - y * mean_gy));
                    }
                    accumulate_owned(&mut grads[x.0], from_flat(rows, c, gx));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate_owned(&mut grads[p.0], g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::Im2col { x, shape } => {
                    let xv = self.value(*x);
                    let c = xv.ncols();
                    let mut gx = Array2::zeros(xv.dim());
                    for_each_patch(*shape, |dst, k, src| {
                        let mut row = gx.row_mut(src);
                        row += &g.slice(s![dst, k * c..(k + 1) * c]);
                    });
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let c = xv.ncols();
                    let mut gx = Array2::zeros(xv.dim());
                    for (idx, gv) in g.iter().enumerate() {
                        gx[[argmax[idx], idx % c]] += gv;
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::Upsample { x, shape } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    let (ho, wo) = (shape.rows * 2, shape.cols * 2);
                    for f in 0..shape.frames {
                        for r in 0..ho {
                            for q in 0..wo {
                                let src = f * shape.cells() + (r / 2) * shape.cols + q / 2;
                                let mut row = gx.row_mut(src);
                                row += &g.row(f * ho * wo + r * wo + q);
                            }
                        }
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::Gather { x, index } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &j) in index.iter().enumerate() {
                        let mut row = gx.row_mut(j);
                        row += &g.row(i);
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::Scatter { x, index, weight } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (i, &j) in index.iter().enumerate() {
                        let w = weight.as_ref().map_or(1.0, |w| w[i]);
                        gx.row_mut(i).scaled_add(w, &g.row(j));
                    }
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::TemporalScores { q, k, steps, scale } => {
                    let (rows, d) = self.value(*q).dim();
                    let (qv, kv, gs) = (flat(self.value(*q)), flat(self.value(*k)), flat(&g));
                    let n = rows / steps;
                    let mut gq = vec![0.0; rows * d];
                    let mut gk = vec![0.0; rows * d];
                    for i in 0..rows {
                        let r = i % n;
                        for u in 0..*steps {
                            let j = u * n + r;
                            let w = scale * gs[i * steps + u];
                            axpy(&mut gq[i * d..(i + 1) * d], w, &kv[j * d..(j + 1) * d]);
                            axpy(&mut gk[j * d..(j + 1) * d], w, &qv[i * d..(i + 1) * d]);
                        }
                    }
                    accumulate_owned(&mut grads[q.0], from_flat(rows, d, gq));
                    accumulate_owned(&mut grads[k.0], from_flat(rows, d, gk));
                }
                Op::TemporalMix { p, v, steps } => {
                    let (rows, d) = self.value(*v).dim();
                    let (pv, vv, gs) = (flat(self.value(*p)), flat(self.value(*v)), flat(&g));
                    let n = rows / steps;
                    let mut gp = vec![0.0; rows * steps];
                    let mut gv = vec![0.0; rows * d];
                    for i in 0..rows {
                        let r = i % n;
                        let gi = &gs[i * d..(i + 1) * d];
                        for u in 0..*steps {
                            let j = u * n + r;
                            gp[i * steps + u] = dot(gi, &vv[j * d..(j + 1) * d]);
                            axpy(&mut gv[j * d..(j + 1) * d], pv[i * steps + u], gi);
                        }
                    }
                    accumulate_owned(&mut grads[p.0], from_flat(rows, *steps, gp));
                    accumulate_owned(&mut grads[v.0], from_flat(rows, d, gv));
                }
                Op::FoldTime { x, steps } => {
                    let n = g.nrows();
                    let gx = Array2::from_shape_fn((n * steps, 1), |(i, _)| g[[i % n, i / n]]);
                    accumulate_owned(&mut grads[x.0], gx);
                }
                Op::TemporalPool { alpha, x, steps } => {
                    let (rows, d) = self.value(*x).dim();
                    let (av, xv, gs) = (flat(self.value(*alpha)), flat(self.value(*x)), flat(&g));
                    let n = rows / steps;
                    let mut ga = vec![0.0; n * steps];
                    let mut gx = vec![0.0; rows * d];
                    for r in 0..n {
                        let gr = &gs[r * d..(r + 1) * d];
                        for t in 0..*steps {
                            let j = t * n + r;
                            ga[r * steps + t] = dot(gr, &xv[j * d..(j + 1) * d]);
                            axpy(&mut gx[j * d..(j + 1) * d], av[r * steps + t], gr);
                        }
                    }
                    accumulate_owned(&mut grads[alpha.0], from_flat(n, *steps, ga));
                    accumulate_owned(&mut grads[x.0], from_flat(rows, d, gx));
                }
                Op::WeightedSqErr { pred, target, weight, denom } => {
                    let s = g[[0, 0]];
                    let pv = self.value(*pred);
                    let mut gp = Array2::zeros(pv.dim());
                    for (i, (gp, p)) in gp.iter_mut().zip(pv.iter()).enumerate() {
                        *gp = s * 2.0 * weight[i] * (p - target[i]) / denom;
                    }
                    accumulate_owned(&mut grads[pred.0], gp);
                }
                Op::MeanSq(x) => {
                    let xv = self.value(*x);
                    let c = 2.0 * g[[0, 0]] / xv.len() as f64;
                    accumulate_owned(&mut grads[x.0], xv * c);
                }
                Op::BceLogits { logits, labels, eps } => {
                    let s = g[[0, 0]];
                    let zv = self.value(*logits);
                    let n = zv.len() as f64;
                    let mut gz = Array2::zeros(zv.dim());
                    for (i, (gz, &z)) in gz.iter_mut().zip(zv.iter()).enumerate() {
                        let p = sigmoid(z);
                        // Zero gradient where the probability is clamped.
                        if p > *eps && p < 1.0 - eps {
                            let y = if labels[i] > 0.0 { 1.0 } else { 0.0 };
                            *gz = s * (p - y) / n;
                        }
                    }
                    accumulate_owned(&mut grads[logits.0], gz);
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        accumulate_owned(&mut grads[t.0], scalar(w * g[[0, 0]]));
                    }
                }
            }
        }
        out
    }
}

fn accumulate(slot: &mut Option<Mat>, g: &Mat) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn for_each_patch(shape: GridShape, mut f: impl FnMut(usize, usize, usize)) {
    let (h, w) = (shape.rows as isize, shape.cols as isize);
    for fr in 0..shape.frames {
        let base = fr * shape.cells();
        for r in 0..h {
            for q in 0..w {
                let dst = base + (r * w + q) as usize;
                let mut k = 0;
                for dr in -1..=1 {
                    for dq in -1..=1 {
                        let (rr, qq) = (r + dr, q + dq);
                        if rr >= 0 && rr < h && qq >= 0 && qq < w {
                            f(dst, k, base + (rr * w + qq) as usize);
                        }
                        k += 1;
                    }
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let (rows, c) = x.dim();
    let mut data = flat(x).into_owned();
    for row in data.chunks_exact_mut(c.max(1)) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    from_flat(rows, c, data)
}

/// Row-major entries of `m`, borrowed when already contiguous.
fn flat(m: &Mat) -> Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(m.iter().copied().collect()),
    }
}

fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
    Array2::from_shape_vec((rows, cols), data).expect("buffer matches shape")
}

/// `f(m[i, j], row[j])` for every entry.
fn map_rows(m: &Mat, row: &[f64], f: impl Fn(f64, f64) -> f64) -> Mat {
    let (rows, c) = m.dim();
    assert_eq!(c, row.len(), "row width");
    let src = flat(m);
    let mut out = Vec::with_capacity(src.len());
    for r in src.chunks_exact(c.max(1)) {
        out.extend(r.iter().zip(row).map(|(&a, &b)| f(a, b)));
    }
    from_flat(rows, c, out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, &x)| *y += a * x);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(root)/d(param) for a graph builder.
    fn check(params: Vec<Mat>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let run = |ps: &[Mat]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| g.param(i, p.clone())).collect();
            let root = build(&mut g, &vars);
            (g.scalar_value(root), g.backward(root, ps.len()))
        };
        let (_, grads) = run(&params);
        let h = 1e-5;
        for (slot, p) in params.iter().enumerate() {
            let analytic = grads[slot].clone().unwrap_or_else(|| Array2::zeros(p.dim())).as_standard_layout().into_owned();
            for idx in 0..p.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[slot].as_slice_mut().unwrap()[idx] += h;
                minus[slot].as_slice_mut().unwrap()[idx] -= h;
                let numeric = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let a = analytic.as_slice().unwrap()[idx];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "slot {slot} idx {idx}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = vec![random(&mut rng, 4, 3), random(&mut rng, 3, 5), random(&mut rng, 1, 5), random(&mut rng, 1, 1)];
        check(ps, |g, v| {
            let m = g.matmul(v[0], v[1]);
            let m = g.add_row(m, v[2]);
            let m = g.add_scalar(m, v[3]);
            let m = g.mul_row(m, v[2]);
            let sm = g.softmax_rows(m);
            let ln = g.layer_norm(m, 1e-6);
            let cat = g.concat_cols(&[sm, ln]);
            let sc = g.scale(cat, 0.7);
            let r = g.relu(sc);
            let d = g.sub(r, sc);
            let l1 = g.mean_sq(d);
            let l2 = g.mean_sq(sm);
            g.weighted_sum(&[(l1, 1.0), (l2, 3.0)])
        });
    }

    #[test]
    fn grid_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = GridShape { frames: 2, rows: 4, cols: 4 };
        let ps = vec![random(&mut rng, 32, 2), random(&mut rng, 18, 3)];
        check(ps, move |g, v| {
            let cols = g.im2col(v[0], shape);
            let conv = g.matmul(cols, v[1]);
            let pooled = g.max_pool(conv, shape);
            let up = g.upsample(pooled, GridShape { frames: 2, rows: 2, cols: 2 });
            let d = g.sub(up, conv);
            g.mean_sq(d)
        });
    }

    #[test]
    fn temporal_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (steps, n, d) = (3, 2, 4);
        let ps = vec![random(&mut rng, steps * n, d), random(&mut rng, steps * n, d), random(&mut rng, steps * n, d)];
        check(ps, move |g, v| {
            let s = g.temporal_scores(v[0], v[1], steps, 0.5);
            let p = g.softmax_rows(s);
            let z = g.temporal_mix(p, v[2], steps);
            let w = g.constant(Array2::from_elem((d, 1), 0.3));
            let logit = g.matmul(z, w);
            let folded = g.fold_time(logit, steps);
            let alpha = g.softmax_rows(folded);
            let pooled = g.temporal_pool(alpha, z, steps);
            let idx = Arc::new(vec![1usize, 0]);
            let gathered = g.gather(pooled, idx.clone());
            let sc = g.scatter(gathered, Arc::new(vec![0, 0]), Some(Arc::new(vec![0.5, 2.0])), 1);
            let col = g.matmul(sc, w);
            let t1 = g.weighted_sq_err(col, Arc::new(vec![0.2]), Arc::new(vec![1.5]), 1.0);
            let t2 = g.bce_logits(logit, Arc::new(vec![2.5, 0.0, 1.0, 0.3, 0.0, 0.0]), 1e-7);
            g.weighted_sum(&[(t1, 1.0), (t2, 0.5)])
        });
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 10, 6) * 30.0;
        for row in softmax_rows(&x).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
