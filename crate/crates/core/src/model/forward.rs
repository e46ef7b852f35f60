use std::sync::Arc;

use ndarray::Array2;

use super::{BranchSlots, Model, ModelContext, Sample};
use super::layers::{
    adaptive_temporal_attention, dense, fuse_embeddings, fusion_head, graph_encoder, region_encoder, stack_attention,
    BlockVars,
};
use crate::autodiff::{sigmoid, Graph, GridShape, Mat, Var};
use crate::error::{Error, Result};
use crate::objective::{LossWeights, BCE_EPS};

/// Per-level risk predictions and occurrence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub risk: Vec<Vec<f64>>,
    pub occurrence: Vec<Vec<f64>>,
}

struct Outputs {
    preds: Vec<Var>,
    occ: Vec<Var>,
}

impl Model {
    fn check_sample(&self, s: &Sample) -> Result<()> {
        let spec = &self.spec;
        let t = spec.steps;
        let n = spec.levels();
        if s.features.len() != n || s.graphs.len() != n || s.truth.len() != n {
            return Err(Error::Shape(format!("sample has {} levels, model {n}", s.features.len())));
        }
        for (g, &ng) in spec.level_sizes.iter().enumerate() {
            if s.features[g].dim() != (t * ng, spec.input_width)
                || s.graphs[g].dim() != (t * ng, spec.graph_width)
                || s.truth[g].len() != ng
            {
                return Err(Error::Shape(format!(
                    "level {}: features {:?}, graphs {:?}, truth {}",
                    g + 1,
                    s.features[g].dim(),
                    s.graphs[g].dim(),
                    s.truth[g].len()
                )));
            }
        }
        if s.target_temporal.dim() != (1, crate::types::D_TEMPORAL) {
            return Err(Error::Shape(format!("target temporal features {:?}", s.target_temporal.dim())));
        }
        Ok(())
    }

    fn branch(&self, g: &mut Graph, p: &[Var], slots: &BranchSlots, x: Var, tt: Var, ctx: &ModelContext, level: usize) -> Var {
        let steps = self.spec.steps;
        let blocks: Vec<BlockVars> = slots
            .blocks
            .iter()
            .map(|b| BlockVars {
                wq: p[b.wq],
                wk: p[b.wk],
                wv: p[b.wv],
                wf: p[b.wf],
                bf: p[b.bf],
                wo: p[b.wo],
                bo: p[b.bo],
                gain1: p[b.gain1],
                bias1: p[b.bias1],
                gain2: p[b.gain2],
                bias2: p[b.bias2],
            })
            .collect();
        let h = stack_attention(g, x, &blocks, steps, ctx.frame_of[level].clone());
        adaptive_temporal_attention(g, h, tt, p[slots.wh], p[slots.wt], p[slots.b_alpha], steps).1
    }

    fn build(&self, g: &mut Graph, ctx: &ModelContext, s: &Sample) -> Result<Outputs> {
        self.check_sample(s)?;
        let spec = &self.spec;
        let steps = spec.steps;
        let p: Vec<Var> = self.params.values.iter().enumerate().map(|(i, v)| g.param(i, v.clone())).collect();
        let rs1 = match (self.slots.rs, &ctx.rs_embedding) {
            (Some((w, b)), Some(e)) => {
                let e = g.constant(e.clone());
                Some(dense(g, e, p[w], p[b]))
            }
            _ => None,
        };
        let tt = g.constant(s.target_temporal.clone());

        let mut region = Vec::new();
        let mut graph = Vec::new();
        for (lvl, ls) in self.slots.levels.iter().enumerate() {
            let ng = spec.level_sizes[lvl];
            let mut x = g.constant(s.features[lvl].clone());
            if let Some(f1) = rs1 {
                let f = if lvl == 0 {
                    f1
                } else {
                    let (idx, w) = &ctx.ancestors[lvl];
                    g.scatter(f1, idx.clone(), Some(w.clone()), ng)
                };
                let tiled = g.gather(f, ctx.tile[lvl].clone());
                x = g.concat_cols(&[x, tiled]);
            }
            let conv: Vec<(Var, Var)> = ls.conv.iter().map(|&(w, b)| (p[w], p[b])).collect();
            let grid = (lvl == 0).then_some(GridShape { frames: steps, rows: spec.grid_rows, cols: spec.grid_cols });
            region.push(region_encoder(g, x, &conv, grid));

            let gs = g.constant(s.graphs[lvl].clone());
            graph.push(graph_encoder(g, gs, p[ls.gw0], p[ls.gb0], p[ls.gw1], p[ls.gb1]));
        }

        let coarse_rows: Vec<usize> = spec.level_sizes[1..].iter().map(|&n| steps * n).collect();
        fuse_embeddings(g, &mut graph, &ctx.frame_parent, &coarse_rows, spec.lambda_f, spec.lambda_c);

        let mut out = Outputs { preds: vec![], occ: vec![] };
        for (lvl, ls) in self.slots.levels.iter().enumerate() {
            let hh = self.branch(g, &p, &ls.region, region[lvl], tt, ctx, lvl);
            let ee = self.branch(g, &p, &ls.graph, graph[lvl], tt, ctx, lvl);
            let (pred, fz) = fusion_head(g, hh, ee, p[ls.w1], p[ls.w2], p[ls.w_fc], p[ls.b_fc]);
            out.preds.push(pred);
            out.occ.push(dense(g, fz, p[ls.w_occ], p[ls.b_occ]));
        }
        Ok(out)
    }

    pub fn predict(&self, ctx: &ModelContext, s: &Sample) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.build(&mut g, ctx, s)?;
        let col = |g: &Graph, v: Var| g.value(v).iter().copied().collect::<Vec<f64>>();
        let pred = Prediction {
            risk: out.preds.iter().map(|&v| col(&g, v)).collect(),
            occurrence: out.occ.iter().map(|&v| col(&g, v).into_iter().map(sigmoid).collect()).collect(),
        };
        if pred.risk.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prediction for target {}", s.target)));
        }
        Ok(pred)
    }

    fn loss_graph(&self, g: &mut Graph, ctx: &ModelContext, s: &Sample, w: &LossWeights) -> Result<Var> {
        let n = self.spec.levels();
        if w.wmse.len() != n || w.bce.len() != n {
            return Err(Error::Shape(format!("{} loss weights for {n} levels", w.wmse.len())));
        }
        let out = self.build(g, ctx, s)?;
        let mut terms = Vec::new();
        for lvl in 0..n {
            let truth = Arc::new(s.truth[lvl].clone());
            let weights = Arc::new(w.region_weights(&truth));
            let ng = truth.len() as f64;
            let wm = g.weighted_sq_err(out.preds[lvl], truth.clone(), weights, ng);
            let bce = g.bce_logits(out.occ[lvl], truth, BCE_EPS);
            terms.push((wm, w.wmse[lvl]));
            terms.push((bce, w.bce[lvl]));
        }
        if let Some(parent) = &ctx.parent1 {
            let n2 = self.spec.level_sizes[1];
            let agg = g.scatter(out.preds[0], parent.clone(), None, n2);
            let hc = g.weighted_sq_err(agg, Arc::new(s.truth[1].clone()), Arc::new(vec![1.0; n2]), n2 as f64);
            terms.push((hc, w.hc));
        }
        Ok(g.weighted_sum(&terms))
    }

    pub fn loss(&self, ctx: &ModelContext, s: &Sample, w: &LossWeights) -> Result<f64> {
        let mut g = Graph::new();
        let root = self.loss_graph(&mut g, ctx, s, w)?;
        Ok(g.scalar_value(root))
    }

    /// Total loss and its gradient for every parameter tensor.
    pub fn loss_and_grad(&self, ctx: &ModelContext, s: &Sample, w: &LossWeights) -> Result<(f64, Vec<Mat>)> {
        let mut g = Graph::new();
        let root = self.loss_graph(&mut g, ctx, s, w)?;
        let loss = g.scalar_value(root);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss for target {}", s.target)));
        }
        let grads = g
            .backward(root, self.params.len())
            .into_iter()
            .zip(&self.params.values)
            .map(|(gr, v)| gr.unwrap_or_else(|| Array2::zeros(v.dim())))
            .collect();
        Ok((loss, grads))
    }
}
