//! Remote-sensing tile encoders: a small convolutional autoencoder trained
//! with a pixel plus feature-map reconstruction loss, and the pooled
//! embeddings derived from its encoder.

use std::path::Path;

use log::debug;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GridShape, Mat, Var};
use crate::error::{Error, Result};
use crate::ingest::RsTiles;
use crate::storage::write_atomic;

/// Tiles per parallel work unit; fixes the gradient reduction order.
const CHUNK: usize = 16;
const ENCODER_FORMAT: u32 = 1;

/// Encoder blocks `conv3x3 -> ReLU -> maxpool`, mirrored by decoder blocks
/// `upsample -> conv3x3 -> ReLU` (the last decoder conv is linear).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvAutoencoder {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    /// Encoder `(W, b)` per block, then decoder `(W, b)` per block.
    pub weights: Vec<Mat>,
}

impl ConvAutoencoder {
    pub fn new(in_channels: usize, channels: &[usize], height: usize, width: usize, seed: u64) -> Result<Self> {
        let blocks = channels.len();
        if blocks == 0 || channels.contains(&0) || in_channels == 0 {
            return Err(Error::Config(format!("autoencoder channels {channels:?} over {in_channels} inputs")));
        }
        let f = 1 << blocks;
        if height % f != 0 || width % f != 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("{height}x{width} tiles are not divisible by {f}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut conv = |c_in: usize, c_out: usize, weights: &mut Vec<Mat>| {
            let bound = (1.0 / (9 * c_in) as f64).sqrt();
            weights.push(Array2::from_shape_fn((9 * c_in, c_out), |_| rng.random_range(-bound..bound)));
            weights.push(Array2::from_shape_fn((1, c_out), |_| rng.random_range(-bound..bound)));
        };
        let mut prev = in_channels;
        for &c in channels {
            conv(prev, c, &mut weights);
            prev = c;
        }
        for b in (0..blocks).rev() {
            let out = if b == 0 { in_channels } else { channels[b - 1] };
            conv(channels[b], out, &mut weights);
        }
        Ok(ConvAutoencoder { in_channels, channels: channels.to_vec(), height, width, weights })
    }

    /// Embedding width: channels of the last encoder block.
    pub fn embedding_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    fn check_tiles(&self, tiles: &RsTiles) -> Result<()> {
        if (tiles.height, tiles.width, tiles.channels) != (self.height, self.width, self.in_channels) {
            return Err(Error::Shape(format!(
                "tiles {}x{}x{} for an encoder over {}x{}x{}",
                tiles.height, tiles.width, tiles.channels, self.height, self.width, self.in_channels
            )));
        }
        Ok(())
    }

    fn params(&self, g: &mut Graph) -> Vec<Var> {
        self.weights.iter().enumerate().map(|(i, w)| g.param(i, w.clone())).collect()
    }

    /// Feature map of the last encoder block, one row per pooled cell.
    fn encode(&self, g: &mut Graph, p: &[Var], x: Var, frames: usize) -> Var {
        let mut shape = GridShape { frames, rows: self.height, cols: self.width };
        let mut h = x;
        for b in 0..self.channels.len() {
            let cols = g.im2col(h, shape);
            let z = g.matmul(cols, p[2 * b]);
            let z = g.add_row(z, p[2 * b + 1]);
            let a = g.relu(z);
            h = g.max_pool(a, shape);
            shape = GridShape { frames, rows: shape.rows / 2, cols: shape.cols / 2 };
        }
        h
    }

    fn decode(&self, g: &mut Graph, p: &[Var], f: Var, frames: usize) -> Var {
        let blocks = self.channels.len();
        let mut shape = GridShape { frames, rows: self.height >> blocks, cols: self.width >> blocks };
        let mut h = f;
        for d in 0..blocks {
            let up = g.upsample(h, shape);
            shape = GridShape { frames, rows: shape.rows * 2, cols: shape.cols * 2 };
            let cols = g.im2col(up, shape);
            let z = g.matmul(cols, p[2 * blocks + 2 * d]);
            let z = g.add_row(z, p[2 * blocks + 2 * d + 1]);
            h = if d + 1 < blocks { g.relu(z) } else { z };
        }
        h
    }

    /// `loss_pp + loss_feat` on one chunk of tiles.
    fn chunk_loss(&self, x: Mat, frames: usize, with_grad: bool) -> (f64, f64, Option<Vec<Option<Mat>>>) {
        let mut g = Graph::new();
        let p = self.params(&mut g);
        let xv = g.constant(x);
        let f = self.encode(&mut g, &p, xv, frames);
        let recon = self.decode(&mut g, &p, f, frames);
        let diff = g.sub(recon, xv);
        let pp = g.mean_sq(diff);
        let f_recon = self.encode(&mut g, &p, recon, frames);
        let fd = g.sub(f_recon, f);
        let feat = g.mean_sq(fd);
        let total = g.weighted_sum(&[(pp, 1.0), (feat, 1.0)]);
        let grads = with_grad.then(|| g.backward(total, self.weights.len()));
        (g.scalar_value(pp), g.scalar_value(feat), grads)
    }

    /// Full-batch `(loss_pp, loss_feat)` and optionally the gradient.
    pub fn loss(&self, tiles: &RsTiles, with_grad: bool) -> Result<(f64, f64, Option<Vec<Mat>>)> {
        self.check_tiles(tiles)?;
        let n = tiles.count();
        if n == 0 {
            return Err(Error::InvalidInput("no tiles to train on".into()));
        }
        let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(CHUNK).map(<[usize]>::to_vec).collect();
        let parts: Vec<_> = chunks
            .par_iter()
            .map(|c| {
                let (pp, feat, grads) = self.chunk_loss(tiles.to_matrix(c), c.len(), with_grad);
                (c.len() as f64 / n as f64, pp, feat, grads)
            })
            .collect();
        let (mut pp, mut feat) = (0.0, 0.0);
        let mut grads: Option<Vec<Mat>> =
            with_grad.then(|| self.weights.iter().map(|w| Array2::zeros(w.dim())).collect());
        for (share, cpp, cfeat, cg) in parts {
            pp += share * cpp;
            feat += share * cfeat;
            if let (Some(acc), Some(cg)) = (grads.as_mut(), cg) {
                for (a, g) in acc.iter_mut().zip(cg) {
                    if let Some(g) = g {
                        a.scaled_add(share, &g);
                    }
                }
            }
        }
        Ok((pp, feat, grads))
    }

    /// Global-average-pooled encoder features, one row per tile.
    pub fn embed(&self, tiles: &RsTiles) -> Result<Array2<f64>> {
        self.check_tiles(tiles)?;
        let n = tiles.count();
        let d = self.embedding_dim();
        let blocks = self.channels.len();
        let cells = (self.height >> blocks) * (self.width >> blocks);
        let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(CHUNK).map(<[usize]>::to_vec).collect();
        let parts: Vec<Mat> = chunks
            .par_iter()
            .map(|c| {
                let mut g = Graph::new();
                let p = self.params(&mut g);
                let x = g.constant(tiles.to_matrix(c));
                let f = self.encode(&mut g, &p, x, c.len());
                let fv = g.value(f);
                Array2::from_shape_fn((c.len(), d), |(t, k)| {
                    (0..cells).map(|q| fv[[t * cells + q, k]]).sum::<f64>() / cells as f64
                })
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = EncoderFile { format: ENCODER_FORMAT, autoencoder: self.clone() };
        write_atomic(path, serde_json::to_string(&doc)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc: EncoderFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if doc.format != ENCODER_FORMAT {
            return Err(Error::Format(format!("encoder format {} (expected {ENCODER_FORMAT})", doc.format)));
        }
        Ok(doc.autoencoder)
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    format: u32,
    autoencoder: ConvAutoencoder,
}

/// Per-epoch record of pre-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    /// `loss_pp + loss_feat` after each epoch, starting with the initial loss.
    pub losses: Vec<f64>,
    pub final_step: f64,
}

/// Full-batch gradient descent; a step that raises the loss is retried at
/// half the step size, so the loss never increases.
pub fn pretrain_autoencoder(ae: &mut ConvAutoencoder, tiles: &RsTiles, epochs: usize, step: f64) -> Result<PretrainLog> {
    let (pp, feat, _) = ae.loss(tiles, false)?;
    let mut current = pp + feat;
    if !current.is_finite() {
        return Err(Error::NonFinite(format!("initial autoencoder loss {current}")));
    }
    let mut log = PretrainLog { losses: vec![current], final_step: step };
    let mut lr = step;
    for epoch in 0..epochs {
        let grads = ae.loss(tiles, true)?.2.expect("gradient requested");
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = ae.clone();
            for (w, g) in trial.weights.iter_mut().zip(&grads) {
                w.scaled_add(-lr, g);
            }
            let (pp, feat, _) = trial.loss(tiles, false)?;
            let l = pp + feat;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            if l <= current {
                *ae = trial;
                current = l;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        debug!("autoencoder epoch {epoch}: loss {current:.6} step {lr:.3e}");
        log.losses.push(current);
        if accepted {
            lr *= 1.25;
        }
    }
    log.final_step = lr;
    Ok(log)
}

/// Mean squared pixel difference.
pub fn pixel_loss(x: &[f64], recon: &[f64]) -> f64 {
    assert_eq!(x.len(), recon.len(), "pixel_loss lengths");
    x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// `F_rs = E W + b`: the fully connected map on pooled encoder features.
pub fn encode_rs_features(ae: &ConvAutoencoder, tiles: &RsTiles, w: &Mat, b: &Mat) -> Result<Array2<f64>> {
    let e = ae.embed(tiles)?;
    if w.nrows() != e.ncols() || b.dim() != (1, w.ncols()) {
        return Err(Error::Shape(format!("FC {:?} + {:?} over {}-wide embeddings", w.dim(), b.dim(), e.ncols())));
    }
    Ok(e.dot(w) + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiles(values: &[f32], size: usize) -> RsTiles {
        let data = values.iter().flat_map(|&v| std::iter::repeat_n(v, size * size * 3)).collect();
        RsTiles { width: size, height: size, channels: 3, data }
    }

    #[test]
    fn pixel_loss_examples() {
        let x = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(pixel_loss(&x, &x), 0.0);
        assert_eq!(pixel_loss(&x, &[0.0, 0.0, 1.0, 0.0]), 0.25);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
        assert!((pixel_loss(&x, &shifted) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn zero_images_zero_features() {
        let mut ae = ConvAutoencoder::new(3, &[4, 6], 8, 8, 1).unwrap();
        for (i, w) in ae.weights.iter_mut().enumerate() {
            if i % 2 == 1 {
                w.fill(0.0);
            }
        }
        let t = tiles(&[0.0, 0.0], 8);
        let f = encode_rs_features(&ae, &t, &Array2::ones((6, 5)), &Array2::zeros((1, 5))).unwrap();
        assert_eq!(f.dim(), (2, 5));
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_tiles_identical_rows() {
        let ae = ConvAutoencoder::new(3, &[4, 6], 8, 8, 2).unwrap();
        let e = ae.embed(&tiles(&[0.4, 0.4, 0.9], 8)).unwrap();
        assert_eq!(e.row(0), e.row(1));
        assert_ne!(e.row(0), e.row(2));
        assert!(ae.embed(&tiles(&[0.4], 16)).is_err());
    }

    #[test]
    fn pretraining_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f32> = (0..5 * 8 * 8 * 3).map(|_| rng.random::<f32>()).collect();
        let t = RsTiles { width: 8, height: 8, channels: 3, data };
        let mut ae = ConvAutoencoder::new(3, &[4, 6], 8, 8, 3).unwrap();
        let log = pretrain_autoencoder(&mut ae, &t, 6, 0.5).unwrap();
        assert!(log.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(log.losses.last().unwrap() < &log.losses[0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f32> = (0..2 * 4 * 4 * 3).map(|_| rng.random::<f32>()).collect();
        let t = RsTiles { width: 4, height: 4, channels: 3, data };
        let ae = ConvAutoencoder::new(3, &[2, 3], 4, 4, 7).unwrap();
        let grads = ae.loss(&t, true).unwrap().2.unwrap();
        let h = 1e-5;
        for (slot, g) in grads.iter().enumerate() {
            for idx in [0, g.len() - 1] {
                let mut plus = ae.clone();
                plus.weights[slot].as_slice_mut().unwrap()[idx] += h;
                let mut minus = ae.clone();
                minus.weights[slot].as_slice_mut().unwrap()[idx] -= h;
                let f = |a: &ConvAutoencoder| {
                    let (pp, feat, _) = a.loss(&t, false).unwrap();
                    pp + feat
                };
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let analytic = g.as_slice().unwrap()[idx];
                assert!((analytic - numeric).abs() < 1e-6 * (1.0 + numeric.abs()), "slot {slot}: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ae = ConvAutoencoder::new(3, &[4, 6], 8, 8, 5).unwrap();
        let path = dir.path().join("encoder.json");
        ae.save(&path).unwrap();
        assert_eq!(ConvAutoencoder::load(&path).unwrap(), ae);
    }
}
