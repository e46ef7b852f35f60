//! The forward network: per-level region and graph encoders, cross-level
//! embedding fusion, temporal self-attention, adaptive temporal pooling and
//! the fused prediction head.

mod checkpoint;
mod forward;
mod layers;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use forward::Prediction;
pub use layers::{
    adaptive_temporal_attention, fuse_embeddings, fusion_head, graph_encoder, positional_encoding, region_encoder,
    self_attention_block, stack_attention, BlockVars,
};

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::config::HyperParams;
use crate::error::{Error, Result};
use crate::types::{GranularityHierarchy, D_NODE, D_TEMPORAL};

/// Everything that fixes parameter shapes and the forward computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub level_sizes: Vec<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// History length `T = p + q`.
    pub steps: usize,
    /// Width of a feature row before RS enhancement.
    pub input_width: usize,
    /// Width of a concatenated multi-view graph signal.
    pub graph_width: usize,
    /// Pooled encoder width when RS enhancement is on.
    pub rs_embedding_dim: Option<usize>,
    pub rs_channels: usize,
    pub hidden: usize,
    pub ff_width: usize,
    pub conv_layers: usize,
    pub attention_blocks: usize,
    pub lambda_f: f64,
    pub lambda_c: f64,
}

impl ModelSpec {
    pub fn from_config(
        h: &HyperParams,
        level_sizes: Vec<usize>,
        grid: (usize, usize),
        input_width: usize,
        rs_embedding_dim: Option<usize>,
    ) -> Self {
        ModelSpec {
            level_sizes,
            grid_rows: grid.0,
            grid_cols: grid.1,
            steps: h.window_len(),
            input_width,
            graph_width: 3 * D_NODE,
            rs_embedding_dim: if h.rs_enabled { rs_embedding_dim } else { None },
            rs_channels: h.rs_channels,
            hidden: h.hidden,
            ff_width: h.ff_width,
            conv_layers: h.conv_layers,
            attention_blocks: h.attention_blocks,
            lambda_f: h.lambda_f,
            lambda_c: h.lambda_c,
        }
    }

    pub fn levels(&self) -> usize {
        self.level_sizes.len()
    }

    /// Region-branch input width after enhancement.
    pub fn region_width(&self) -> usize {
        self.input_width + if self.rs_embedding_dim.is_some() { self.rs_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.level_sizes.is_empty() || self.level_sizes[0] != self.grid_rows * self.grid_cols {
            return bad("level 1 must hold one node per grid cell");
        }
        if self.steps == 0 || self.hidden == 0 || self.hidden % 2 != 0 || self.conv_layers == 0 || self.ff_width == 0 {
            return bad("steps, conv layers and widths must be positive; hidden must be even");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(usize),
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSlots {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wf: usize,
    pub bf: usize,
    pub wo: usize,
    pub bo: usize,
    pub gain1: usize,
    pub bias1: usize,
    pub gain2: usize,
    pub bias2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BranchSlots {
    pub blocks: Vec<BlockSlots>,
    pub wh: usize,
    pub wt: usize,
    pub b_alpha: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LevelSlots {
    /// `(W, b)` per region-encoder layer.
    pub conv: Vec<(usize, usize)>,
    pub gw0: usize,
    pub gb0: usize,
    pub gw1: usize,
    pub gb1: usize,
    pub region: BranchSlots,
    pub graph: BranchSlots,
    pub w1: usize,
    pub w2: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_occ: usize,
    pub b_occ: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Slots {
    /// `(W_rs, b_rs)`.
    pub rs: Option<(usize, usize)>,
    pub levels: Vec<LevelSlots>,
}

struct Layout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Layout {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    /// Weight `fan_in x out` and bias `1 x out`.
    fn dense(&mut self, name: &str, fan_in: usize, out: usize) -> (usize, usize) {
        (
            self.add(format!("{name}.w"), (fan_in, out), Init::Uniform(fan_in)),
            self.add(format!("{name}.b"), (1, out), Init::Uniform(fan_in)),
        )
    }

    fn weight(&mut self, name: &str, fan_in: usize, out: usize) -> usize {
        self.add(name.to_string(), (fan_in, out), Init::Uniform(fan_in))
    }

    fn branch(&mut self, prefix: &str, spec: &ModelSpec) -> BranchSlots {
        let h = spec.hidden;
        let blocks = (0..spec.attention_blocks)
            .map(|b| {
                let p = format!("{prefix}.sab{b}");
                let wq = self.weight(&format!("{p}.wq"), h, h);
                let wk = self.weight(&format!("{p}.wk"), h, h);
                let wv = self.weight(&format!("{p}.wv"), h, h);
                let (wf, bf) = self.dense(&format!("{p}.ff"), h, spec.ff_width);
                let (wo, bo) = self.dense(&format!("{p}.ff_out"), spec.ff_width, h);
                let gain1 = self.add(format!("{p}.ln1.gain"), (1, h), Init::Ones);
                let bias1 = self.add(format!("{p}.ln1.bias"), (1, h), Init::Zeros);
                let gain2 = self.add(format!("{p}.ln2.gain"), (1, h), Init::Ones);
                let bias2 = self.add(format!("{p}.ln2.bias"), (1, h), Init::Zeros);
                BlockSlots { wq, wk, wv, wf, bf, wo, bo, gain1, bias1, gain2, bias2 }
            })
            .collect();
        let wh = self.weight(&format!("{prefix}.tatt.wh"), h, 1);
        let wt = self.weight(&format!("{prefix}.tatt.wt"), D_TEMPORAL, 1);
        let b_alpha = self.add(format!("{prefix}.tatt.b"), (1, 1), Init::Uniform(h));
        BranchSlots { blocks, wh, wt, b_alpha }
    }
}

fn layout(spec: &ModelSpec) -> (Layout, Slots) {
    let mut l = Layout { names: vec![], shapes: vec![], inits: vec![] };
    let h = spec.hidden;
    let rs = spec.rs_embedding_dim.map(|d| l.dense("rs_fc", d, spec.rs_channels));
    let levels = (0..spec.levels())
        .map(|g| {
            let p = format!("level{}", g + 1);
            let mut width = spec.region_width();
            let conv = (0..spec.conv_layers)
                .map(|k| {
                    // 3x3 kernels on the grid level, pointwise above it
                    let fan_in = if g == 0 { 9 * width } else { width };
                    width = h;
                    l.dense(&format!("{p}.conv{k}"), fan_in, h)
                })
                .collect();
            let (gw0, gb0) = l.dense(&format!("{p}.graph0"), spec.graph_width, h);
            let (gw1, gb1) = l.dense(&format!("{p}.graph1"), h, h);
            let region = l.branch(&format!("{p}.region"), spec);
            let graph = l.branch(&format!("{p}.graph"), spec);
            let w1 = l.weight(&format!("{p}.head.w1"), h, h);
            let w2 = l.weight(&format!("{p}.head.w2"), h, h);
            let (w_fc, b_fc) = l.dense(&format!("{p}.head.fc"), h, 1);
            let (w_occ, b_occ) = l.dense(&format!("{p}.head.occ"), h, 1);
            LevelSlots { conv, gw0, gb0, gw1, gb1, region, graph, w1, w2, w_fc, b_fc, w_occ, b_occ }
        })
        .collect();
    (l, Slots { rs, levels })
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub names: Vec<String>,
    pub values: Vec<Mat>,
}

impl ModelParameters {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParameters,
    pub(crate) slots: Slots,
}

impl Model {
    /// Uniform `±sqrt(1/fan_in)` weights and biases; layer-norm gains 1,
    /// offsets 0.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (l, slots) = layout(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = l
            .shapes
            .iter()
            .zip(&l.inits)
            .map(|(&shape, init)| match *init {
                Init::Uniform(fan_in) => {
                    let b = (1.0 / fan_in as f64).sqrt();
                    Array2::from_shape_fn(shape, |_| rng.random_range(-b..b))
                }
                Init::Ones => Array2::ones(shape),
                Init::Zeros => Array2::zeros(shape),
            })
            .collect();
        Ok(Model { spec, params: ModelParameters { names: l.names, values }, slots })
    }

    pub fn from_parameters(spec: ModelSpec, params: ModelParameters) -> Result<Self> {
        spec.validate()?;
        let (l, slots) = layout(&spec);
        if l.names != params.names {
            return Err(Error::Format("parameter names do not match the model layout".into()));
        }
        for ((name, shape), v) in l.names.iter().zip(&l.shapes).zip(&params.values) {
            if v.dim() != *shape {
                return Err(Error::Shape(format!("{name}: {:?}, expected {shape:?}", v.dim())));
            }
        }
        Ok(Model { spec, params, slots })
    }
}

/// Dataset-wide constants of the forward pass.
pub struct ModelContext {
    pub(crate) rs_embedding: Option<Mat>,
    /// Level-1 node -> level-g node and its `1/|cluster|` weight.
    pub(crate) ancestors: Vec<(Arc<Vec<usize>>, Arc<Vec<f64>>)>,
    /// Stacked-frame row -> node, per level.
    pub(crate) tile: Vec<Arc<Vec<usize>>>,
    /// Stacked-frame row -> frame, per level.
    pub(crate) frame_of: Vec<Arc<Vec<usize>>>,
    /// Stacked-frame fine row -> stacked-frame coarse row, per level pair.
    pub(crate) frame_parent: Vec<Arc<Vec<usize>>>,
    /// Level-1 -> level-2 membership.
    pub(crate) parent1: Option<Arc<Vec<usize>>>,
}

impl ModelContext {
    pub fn new(spec: &ModelSpec, hierarchy: &GranularityHierarchy, rs_embedding: Option<Mat>) -> Result<Self> {
        if hierarchy.level_sizes != spec.level_sizes {
            return Err(Error::Shape(format!(
                "hierarchy levels {:?} vs model levels {:?}",
                hierarchy.level_sizes, spec.level_sizes
            )));
        }
        match (&rs_embedding, spec.rs_embedding_dim) {
            (Some(e), Some(d)) if e.dim() == (spec.level_sizes[0], d) => {}
            (None, None) => {}
            _ => return Err(Error::Shape("RS embedding does not match the model".into())),
        }
        let t = spec.steps;
        let ancestors = (1..=spec.levels())
            .map(|g| {
                let map = hierarchy.ancestor_map(g);
                let mut count = vec![0usize; spec.level_sizes[g - 1]];
                for &a in &map {
                    count[a] += 1;
                }
                let w = map.iter().map(|&a| 1.0 / count[a] as f64).collect();
                (Arc::new(map), Arc::new(w))
            })
            .collect();
        let tile = spec.level_sizes.iter().map(|&n| Arc::new((0..t * n).map(|i| i % n).collect())).collect();
        let frame_of = spec.level_sizes.iter().map(|&n| Arc::new((0..t * n).map(|i| i / n).collect())).collect();
        let frame_parent = hierarchy
            .partitions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (nf, nc) = (spec.level_sizes[i], spec.level_sizes[i + 1]);
                Arc::new((0..t * nf).map(|r| (r / nf) * nc + p[r % nf]).collect())
            })
            .collect();
        Ok(ModelContext {
            rs_embedding,
            ancestors,
            tile,
            frame_of,
            frame_parent,
            parent1: hierarchy.partitions.first().map(|p| Arc::new(p.clone())),
        })
    }
}

/// Inputs and targets for one target interval, all levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target: usize,
    /// Per level: `(T·N_g) x input_width` feature rows, frames stacked.
    pub features: Vec<Mat>,
    /// Per level: `(T·N_g) x graph_width` multi-view graph signals.
    pub graphs: Vec<Mat>,
    /// `1 x 32` calendar features of the target interval.
    pub target_temporal: Mat,
    /// Per level ground-truth risk of the target interval.
    pub truth: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests;
