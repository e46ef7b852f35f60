//! Building blocks of the forward pass, expressed on the autodiff tape.
//! Sequences are stacked frame-major: row `t * N + r` is region `r` at step `t`.

use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Graph, GridShape, Mat, Var};

const LN_EPS: f64 = 1e-6;

/// `PE[t, 2k] = sin(t / 10000^(2k/d))`, `PE[t, 2k+1] = cos(...)`.
pub fn positional_encoding(steps: usize, d: usize) -> Mat {
    Array2::from_shape_fn((steps, d), |(t, j)| {
        let k = (j / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * k / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let z = g.matmul(x, w);
    g.add_row(z, b)
}

/// Stacked `ReLU(W * H + b)` layers: 3x3 same-padded convolution when `grid`
/// is given, pointwise otherwise.
pub fn region_encoder(g: &mut Graph, x: Var, layers: &[(Var, Var)], grid: Option<GridShape>) -> Var {
    let mut h = x;
    for &(w, b) in layers {
        let input = match grid {
            Some(shape) => g.im2col(h, shape),
            None => h,
        };
        let z = dense(g, input, w, b);
        h = g.relu(z);
    }
    h
}

/// `ReLU(ReLU(G W0 + b0) W1 + b1)`.
pub fn graph_encoder(g: &mut Graph, x: Var, w0: Var, b0: Var, w1: Var, b1: Var) -> Var {
    let e = dense(g, x, w0, b0);
    let e = g.relu(e);
    let e = dense(g, e, w1, b1);
    g.relu(e)
}

/// Pairwise fusion from fine to coarse. `parents[i]` maps rows of level `i`
/// to rows of level `i + 1`, which has `coarse_rows[i]` rows. Each pair reads
/// the current embeddings and updates both sides:
/// `coarse += λf Mᵀ fine`, `fine += λc M coarse`.
pub fn fuse_embeddings(
    g: &mut Graph,
    emb: &mut [Var],
    parents: &[Arc<Vec<usize>>],
    coarse_rows: &[usize],
    lambda_f: f64,
    lambda_c: f64,
) {
    for i in 0..emb.len().saturating_sub(1) {
        let (fine, coarse) = (emb[i], emb[i + 1]);
        let up = g.scatter(fine, parents[i].clone(), None, coarse_rows[i]);
        let up = g.scale(up, lambda_f);
        let down = g.gather(coarse, parents[i].clone());
        let down = g.scale(down, lambda_c);
        emb[i + 1] = g.add(coarse, up);
        emb[i] = g.add(fine, down);
    }
}

/// Parameters of one self-attention block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wf: Var,
    pub bf: Var,
    pub wo: Var,
    pub bo: Var,
    pub gain1: Var,
    pub bias1: Var,
    pub gain2: Var,
    pub bias2: Var,
}

fn norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
    let n = g.layer_norm(x, LN_EPS);
    let n = g.mul_row(n, gain);
    g.add_row(n, bias)
}

/// Attention over time per region, residual + layer norm, feed-forward,
/// residual + layer norm.
pub fn self_attention_block(g: &mut Graph, x: Var, b: &BlockVars, steps: usize) -> Var {
    let d = g.value(x).ncols();
    let q = g.matmul(x, b.wq);
    let k = g.matmul(x, b.wk);
    let v = g.matmul(x, b.wv);
    let scores = g.temporal_scores(q, k, steps, 1.0 / (d as f64).sqrt());
    let probs = g.softmax_rows(scores);
    let z = g.temporal_mix(probs, v, steps);
    let h = g.add(x, z);
    let h = norm(g, h, b.gain1, b.bias1);
    let f = dense(g, h, b.wf, b.bf);
    let f = g.relu(f);
    let f = dense(g, f, b.wo, b.bo);
    let h2 = g.add(h, f);
    norm(g, h2, b.gain2, b.bias2)
}

/// Adds the positional encoding once, then applies the blocks in order.
pub fn stack_attention(g: &mut Graph, x: Var, blocks: &[BlockVars], steps: usize, frame_of: Arc<Vec<usize>>) -> Var {
    let d = g.value(x).ncols();
    let pe = g.constant(positional_encoding(steps, d));
    let pe = g.gather(pe, frame_of);
    let mut h = g.add(x, pe);
    for b in blocks {
        h = self_attention_block(g, h, b, steps);
    }
    h
}

/// Attention weights `softmax_t(ReLU(x W_H + T W_T + b))` as an `N x T`
/// matrix, and the weighted sum of frames.
pub fn adaptive_temporal_attention(
    g: &mut Graph,
    x: Var,
    target_temporal: Var,
    wh: Var,
    wt: Var,
    b_alpha: Var,
    steps: usize,
) -> (Var, Var) {
    let z = g.matmul(x, wh);
    let t_term = g.matmul(target_temporal, wt);
    let z = g.add_scalar(z, t_term);
    let z = g.add_scalar(z, b_alpha);
    let z = g.relu(z);
    let logits = g.fold_time(z, steps);
    let alpha = g.softmax_rows(logits);
    (alpha, g.temporal_pool(alpha, x, steps))
}

/// `FC(Ĥ W1 + Ê W2)` and the fused representation it reads.
pub fn fusion_head(g: &mut Graph, hh: Var, ee: Var, w1: Var, w2: Var, w_fc: Var, b_fc: Var) -> (Var, Var) {
    let a = g.matmul(hh, w1);
    let b = g.matmul(ee, w2);
    let fz = g.add(a, b);
    (dense(g, fz, w_fc, b_fc), fz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Array2::from_shape_vec((rows, cols), v.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn frames(steps: usize, n: usize) -> Arc<Vec<usize>> {
        Arc::new((0..steps * n).map(|i| i / n).collect())
    }

    #[test]
    fn positional_encoding_examples() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((pe[[1, 0]] - 0.841471).abs() < 1e-6);
        assert!((pe[[1, 2]] - 0.0099998).abs() < 1e-7);
    }

    #[test]
    fn region_encoder_examples() {
        let mut g = Graph::new();
        let x = g.constant(m(4, 2, &[1.0, 2.0, 0.5, 0.0, 3.0, 1.0, 0.0, 4.0]));
        let w = g.constant(Array2::eye(2));
        let b = g.constant(Array2::zeros((1, 2)));
        let y = region_encoder(&mut g, x, &[(w, b)], None);
        assert_eq!(g.value(y), g.value(x));
        let w0 = g.constant(Array2::zeros((18, 2)));
        let shape = GridShape { frames: 1, rows: 2, cols: 2 };
        let y = region_encoder(&mut g, x, &[(w0, b)], Some(shape));
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn graph_encoder_examples() {
        let mut g = Graph::new();
        let c = |g: &mut Graph, v: f64| g.constant(m(1, 1, &[v]));
        let (x, w0, w1, z) = (c(&mut g, 1.0), c(&mut g, 2.0), c(&mut g, 3.0), c(&mut g, 0.0));
        let e = graph_encoder(&mut g, x, w0, z, w1, z);
        assert_eq!(g.scalar_value(e), 6.0);
        let (neg, one, b1) = (c(&mut g, -1.0), c(&mut g, 1.0), c(&mut g, 0.7));
        let e = graph_encoder(&mut g, neg, one, z, one, b1);
        assert_eq!(g.scalar_value(e), 0.7);
        let zeros = g.constant(Array2::zeros((3, 2)));
        let w = g.constant(Array2::ones((2, 4)));
        let bz = g.constant(Array2::zeros((1, 4)));
        let w1 = g.constant(Array2::ones((4, 4)));
        let e = graph_encoder(&mut g, zeros, w, bz, w1, bz);
        assert!(g.value(e).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fusion_examples() {
        let mut g = Graph::new();
        let fine = g.constant(m(2, 1, &[1.0, 3.0]));
        let coarse = g.constant(m(1, 1, &[10.0]));
        let parents = [Arc::new(vec![0, 0])];
        let mut emb = [fine, coarse];
        fuse_embeddings(&mut g, &mut emb, &parents, &[1], 0.8, 0.2);
        assert!((g.scalar_value(emb[1]) - 13.2).abs() < 1e-12);
        assert_eq!(g.value(emb[0]).column(0).to_vec(), vec![3.0, 5.0]);

        let mut emb = [fine, coarse];
        fuse_embeddings(&mut g, &mut emb, &parents, &[1], 0.0, 0.0);
        assert_eq!(g.value(emb[0]), g.value(fine));
        assert_eq!(g.value(emb[1]), g.value(coarse));

        let zero = g.constant(Array2::zeros((2, 1)));
        let mut emb = [zero, coarse];
        fuse_embeddings(&mut g, &mut emb, &parents, &[1], 0.8, 0.2);
        assert_eq!(g.scalar_value(emb[1]), 10.0);
    }

    fn block(g: &mut Graph, rng: &mut ChaCha8Rng, d: usize, ff: usize, first_slot: usize) -> BlockVars {
        let mut slot = first_slot;
        let mut p = |g: &mut Graph, r: usize, c: usize| {
            slot += 1;
            g.param(slot - 1, random(rng, r, c))
        };
        BlockVars {
            wq: p(g, d, d),
            wk: p(g, d, d),
            wv: p(g, d, d),
            wf: p(g, d, ff),
            bf: p(g, 1, ff),
            wo: p(g, ff, d),
            bo: p(g, 1, d),
            gain1: p(g, 1, d),
            bias1: p(g, 1, d),
            gain2: p(g, 1, d),
            bias2: p(g, 1, d),
        }
    }

    #[test]
    fn identical_frames_give_uniform_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (steps, n, d) = (3, 2, 4);
        let frame = random(&mut rng, n, d);
        let x = Array2::from_shape_fn((steps * n, d), |(r, c)| frame[[r % n, c]]);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wq = g.constant(random(&mut rng, d, d));
        let wk = g.constant(random(&mut rng, d, d));
        let q = g.matmul(xv, wq);
        let k = g.matmul(xv, wk);
        let s = g.temporal_scores(q, k, steps, 0.5);
        let p = g.softmax_rows(s);
        assert!(g.value(p).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn stacking_applies_blocks_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (steps, n, d) = (3, 2, 4);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, steps * n, d));
        let b0 = block(&mut g, &mut rng, d, 6, 0);
        let b1 = block(&mut g, &mut rng, d, 6, 11);
        let stacked = stack_attention(&mut g, x, &[b0, b1], steps, frames(steps, n));
        let pe = g.constant(positional_encoding(steps, d));
        let pe = g.gather(pe, frames(steps, n));
        let h = g.add(x, pe);
        let h = self_attention_block(&mut g, h, &b0, steps);
        let manual = self_attention_block(&mut g, h, &b1, steps);
        assert_eq!(g.value(stacked), g.value(manual));
        let pe = g.constant(positional_encoding(steps, d));
        let pe = g.gather(pe, frames(steps, n));
        let h = g.add(x, pe);
        let h = self_attention_block(&mut g, h, &b1, steps);
        let swapped = self_attention_block(&mut g, h, &b0, steps);
        assert_ne!(g.value(stacked), g.value(swapped));
        assert_eq!(g.value(stacked).dim(), (steps * n, d));
    }

    #[test]
    fn temporal_attention_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, d) = (3, 4);
        let mut g = Graph::new();
        let tt = g.constant(random(&mut rng, 1, 32));
        let wh = g.constant(random(&mut rng, d, 1));
        let wt = g.constant(random(&mut rng, 32, 1));
        let b = g.constant(random(&mut rng, 1, 1));
        // single step: the frame itself
        let x1 = g.constant(random(&mut rng, n, d));
        let (alpha, out) = adaptive_temporal_attention(&mut g, x1, tt, wh, wt, b, 1);
        assert!(g.value(alpha).iter().all(|&a| a == 1.0));
        assert_eq!(g.value(out), g.value(x1));
        // two identical frames: output equals the frame
        let frame = random(&mut rng, n, d);
        let x2 = g.constant(ndarray::concatenate(ndarray::Axis(0), &[frame.view(), frame.view()]).unwrap());
        let (alpha, out) = adaptive_temporal_attention(&mut g, x2, tt, wh, wt, b, 2);
        for r in g.value(alpha).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        assert!(g.value(out).iter().zip(frame.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let x5 = g.constant(random(&mut rng, 5 * n, d));
        let (alpha, _) = adaptive_temporal_attention(&mut g, x5, tt, wh, wt, b, 5);
        for r in g.value(alpha).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_head_examples() {
        let mut g = Graph::new();
        let c = |g: &mut Graph, v: f64| g.constant(m(1, 1, &[v]));
        let (h, e, w1, w2, wfc, bfc) =
            (c(&mut g, 2.0), c(&mut g, 4.0), c(&mut g, 1.0), c(&mut g, 0.5), c(&mut g, 1.0), c(&mut g, 0.0));
        let (pred, _) = fusion_head(&mut g, h, e, w1, w2, wfc, bfc);
        assert_eq!(g.scalar_value(pred), 4.0);
        let zeros = g.constant(Array2::zeros((3, 2)));
        let w = g.constant(Array2::ones((2, 2)));
        let wf = g.constant(Array2::ones((2, 1)));
        let (pred, _) = fusion_head(&mut g, zeros, zeros, w, w, wf, bfc);
        assert!(g.value(pred).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_block_gradient_wrt_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (steps, n, d) = (3, 2, 4);
        let x = random(&mut rng, steps * n, d);
        let params: Vec<Mat> = {
            let mut g = Graph::new();
            let b = block(&mut g, &mut rng, d, 5, 0);
            let vars = [b.wq, b.wk, b.wv, b.wf, b.bf, b.wo, b.bo, b.gain1, b.bias1, b.gain2, b.bias2];
            vars.iter().map(|&v| g.value(v).clone()).collect()
        };
        let target = random(&mut rng, steps * n, d);
        let eval = |ps: &[Mat]| {
            let mut g = Graph::new();
            let v: Vec<Var> = ps.iter().enumerate().map(|(i, p)| g.param(i, p.clone())).collect();
            let b = BlockVars {
                wq: v[0],
                wk: v[1],
                wv: v[2],
                wf: v[3],
                bf: v[4],
                wo: v[5],
                bo: v[6],
                gain1: v[7],
                bias1: v[8],
                gain2: v[9],
                bias2: v[10],
            };
            let xv = g.constant(x.clone());
            let y = self_attention_block(&mut g, xv, &b, steps);
            let t = g.constant(target.clone());
            let diff = g.sub(y, t);
            let loss = g.mean_sq(diff);
            (g.scalar_value(loss), g.backward(loss, ps.len()))
        };
        let (_, grads) = eval(&params);
        let analytic = grads[0].clone().unwrap();
        let h = 1e-5;
        let mut max_err: f64 = 0.0;
        let mut scale: f64 = 1e-8;
        for idx in 0..d * d {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[0].as_slice_mut().unwrap()[idx] += h;
            minus[0].as_slice_mut().unwrap()[idx] -= h;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic.as_standard_layout()[[idx / d, idx % d]];
            max_err = max_err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        assert!(max_err / scale < 1e-4, "relative error {}", max_err / scale);
    }
}
