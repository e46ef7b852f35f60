use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::objective::{total_loss, LevelTerms, LossWeights};
use crate::types::TransformMatrix;

const PARTITION: [usize; 9] = [0, 0, 1, 0, 0, 1, 1, 1, 1];

fn spec(rs: bool) -> ModelSpec {
    ModelSpec {
        level_sizes: vec![9, 2],
        grid_rows: 3,
        grid_cols: 3,
        steps: 3,
        input_width: 5,
        graph_width: 9,
        rs_embedding_dim: rs.then_some(3),
        rs_channels: 2,
        hidden: 4,
        ff_width: 6,
        conv_layers: 2,
        attention_blocks: 1,
        lambda_f: 0.8,
        lambda_c: 0.2,
    }
}

fn hierarchy() -> GranularityHierarchy {
    GranularityHierarchy::new(vec![9, 2], vec![PARTITION.to_vec()]).unwrap()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn sample(spec: &ModelSpec, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = spec.steps;
    let truth1: Vec<f64> = (0..9).map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(0.0..3.0) }).collect();
    let mut truth2 = vec![0.0; 2];
    for (i, &p) in PARTITION.iter().enumerate() {
        truth2[p] += truth1[i];
    }
    Sample {
        target: 0,
        features: spec.level_sizes.iter().map(|&n| random(&mut rng, t * n, spec.input_width)).collect(),
        graphs: spec.level_sizes.iter().map(|&n| random(&mut rng, t * n, spec.graph_width)).collect(),
        target_temporal: random(&mut rng, 1, D_TEMPORAL),
        truth: vec![truth1, truth2],
    }
}

fn weights() -> LossWeights {
    LossWeights {
        wmse: vec![1.0, 0.5],
        bce: vec![0.3, 0.2],
        hc: 0.1,
        risk_levels: [0.05, 0.2, 0.25, 0.5],
        thresholds: [0.0, 1.0, 2.0],
    }
}

fn setup(rs: bool) -> (Model, ModelContext, Sample) {
    let s = spec(rs);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let emb = rs.then(|| random(&mut rng, 9, 3));
    let ctx = ModelContext::new(&s, &hierarchy(), emb).unwrap();
    let sample = sample(&s, 5);
    (Model::new(s, 7).unwrap(), ctx, sample)
}

#[test]
fn prediction_shapes() {
    let (model, ctx, s) = setup(true);
    let p = model.predict(&ctx, &s).unwrap();
    assert_eq!(p.risk.iter().map(Vec::len).collect::<Vec<_>>(), vec![9, 2]);
    assert!(p.occurrence.iter().flatten().all(|&q| (0.0..=1.0).contains(&q)));
}

#[test]
fn rejects_mismatched_sample() {
    let (model, ctx, mut s) = setup(false);
    s.features[1] = Array2::zeros((1, 5));
    assert!(matches!(model.predict(&ctx, &s), Err(Error::Shape(_))));
}

#[test]
fn graph_loss_matches_objective() {
    for rs in [false, true] {
        let (model, ctx, s) = setup(rs);
        let w = weights();
        let p = model.predict(&ctx, &s).unwrap();
        let terms: Vec<LevelTerms> = (0..2)
            .map(|g| LevelTerms { pred: &p.risk[g], truth: &s.truth[g], probs: &p.occurrence[g] })
            .collect();
        let m12 = TransformMatrix::from_partition(&PARTITION, 2).unwrap();
        let expected = total_loss(&terms, Some(&m12), &w).unwrap();
        let got = model.loss(&ctx, &s, &w).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    let (model, ctx, s) = setup(true);
    let w = weights();
    let (_, grads) = model.loss_and_grad(&ctx, &s, &w).unwrap();
    let h = 1e-4;
    let mut probe = model.clone();
    for (k, analytic) in grads.iter().enumerate() {
        let base = model.params.values[k].clone();
        let mut numeric = Array2::zeros(base.dim());
        for idx in 0..base.len() {
            let (r, c) = (idx / base.ncols(), idx % base.ncols());
            probe.params.values[k][[r, c]] = base[[r, c]] + h;
            let up = probe.loss(&ctx, &s, &w).unwrap();
            probe.params.values[k][[r, c]] = base[[r, c]] - h;
            let down = probe.loss(&ctx, &s, &w).unwrap();
            probe.params.values[k][[r, c]] = base[[r, c]];
            numeric[[r, c]] = (up - down) / (2.0 * h);
        }
        let max_abs = |m: &Mat| m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = max_abs(&(analytic - &numeric));
        let scale = max_abs(analytic).max(max_abs(&numeric)).max(1e-8);
        assert!(err / scale < 1e-4, "{}: relative error {}", model.params.names[k], err / scale);
    }
}

#[test]
fn zero_lambdas_decouple_levels() {
    let (mut model, ctx, s) = setup(false);
    let mut other = s.clone();
    other.graphs[1] = random(&mut ChaCha8Rng::seed_from_u64(99), 6, 9);
    other.features[1] = random(&mut ChaCha8Rng::seed_from_u64(98), 6, 5);
    let coupled = model.predict(&ctx, &s).unwrap().risk[0] != model.predict(&ctx, &other).unwrap().risk[0];
    assert!(coupled);
    model.spec.lambda_f = 0.0;
    model.spec.lambda_c = 0.0;
    assert_eq!(model.predict(&ctx, &s).unwrap().risk[0], model.predict(&ctx, &other).unwrap().risk[0]);
}

#[test]
fn deterministic_given_seed() {
    let (a, ctx, s) = setup(true);
    let b = Model::new(spec(true), 7).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.predict(&ctx, &s).unwrap(), b.predict(&ctx, &s).unwrap());
    let c = Model::new(spec(true), 8).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn parameters_round_trip() {
    let (a, ctx, s) = setup(true);
    let b = Model::from_parameters(a.spec.clone(), a.params.clone()).unwrap();
    assert_eq!(a.predict(&ctx, &s).unwrap(), b.predict(&ctx, &s).unwrap());
    let mut bad = a.params.clone();
    bad.values.pop();
    bad.names.pop();
    assert!(Model::from_parameters(a.spec.clone(), bad).is_err());
}

