use urbanrisk_core::config::{parse_config, HyperParams};
use urbanrisk_core::ingest::{generate_synthetic_city, split_dataset};
use urbanrisk_core::model::Model;
use urbanrisk_core::objective::LossWeights;
use urbanrisk_core::train::{
    build_hierarchy, descriptor_embedding, evaluate, forecast, load_model, train, view_descriptors, write_heatmap,
    PreparedData, TrainState, BEST_CHECKPOINT, STATE_CHECKPOINT,
};
use urbanrisk_core::types::GridSpec;
use urbanrisk_core::Error;

fn small() -> (HyperParams, PreparedData) {
    let h = parse_config("hidden = 8\nff_width = 16\nrs_enabled = false\nbatch_size = 32\n").unwrap();
    let d = generate_synthetic_city(11, GridSpec::new(8, 8), 5).unwrap();
    let split = split_dataset(d.num_intervals(), h.short_term, h.long_term, h.per_week()).unwrap();
    let emb = descriptor_embedding(&view_descriptors(&d, 0..split.train_end(), &h.risk_thresholds));
    let hierarchy = build_hierarchy(&d, &emb, &h).unwrap();
    let data = PreparedData::new(d, hierarchy, &h, None).unwrap();
    (h, data)
}

fn fresh(h: &HyperParams, data: &PreparedData) -> TrainState {
    let model = Model::new(data.model_spec(h), h.seed).unwrap();
    TrainState::new(model, h.learning_rate, h.seed, "cfg".into())
}

#[test]
fn zero_epochs_writes_initial_checkpoints() {
    let (h, data) = small();
    let dir = tempfile::tempdir().unwrap();
    let mut state = fresh(&h, &data);
    train(&data, &mut state, 0, &LossWeights::from_config(&h), h.batch_size, Some(dir.path())).unwrap();
    let (model, epoch) = load_model(&dir.path().join(BEST_CHECKPOINT), "cfg").unwrap();
    assert_eq!(epoch, 0);
    assert_eq!(model.params, state.model.params);
    let restored = TrainState::load(&dir.path().join(STATE_CHECKPOINT), Some("cfg")).unwrap();
    assert_eq!(restored.epoch, 0);
    assert!(restored.history.is_empty());
}

#[test]
fn state_round_trips_and_checks_hash() {
    let (h, data) = small();
    let dir = tempfile::tempdir().unwrap();
    let mut state = fresh(&h, &data);
    train(&data, &mut state, 1, &LossWeights::from_config(&h), h.batch_size, Some(dir.path())).unwrap();
    let path = dir.path().join(STATE_CHECKPOINT);
    let back = TrainState::load(&path, Some("cfg")).unwrap();
    assert_eq!(back.model.params, state.model.params);
    assert_eq!((back.adam.t, &back.adam.m, &back.adam.v), (state.adam.t, &state.adam.m, &state.adam.v));
    assert_eq!(back.history, state.history);
    assert_eq!((back.best_val, back.best_epoch, back.seed), (state.best_val, state.best_epoch, state.seed));
    assert!(TrainState::load(&path, Some("other")).is_err());
    assert!(load_model(&dir.path().join(BEST_CHECKPOINT), "other").is_err());
    // a training state is not a model checkpoint
    assert!(load_model(&path, "cfg").is_err());
}

#[test]
fn evaluating_an_empty_split_fails() {
    let (h, data) = small();
    let state = fresh(&h, &data);
    let t = data.split.test.start;
    assert!(matches!(evaluate(&data, &state.model, t..t), Err(Error::EmptySplit(_))));
    let report = evaluate(&data, &state.model, data.split.test.clone()).unwrap();
    assert_eq!(report.intervals, data.split.test.len());
    assert!(report.rmse.is_finite());
}

#[test]
fn forecast_covers_every_level_and_renders() {
    let (h, data) = small();
    let state = fresh(&h, &data);
    let ctx = data.context(&state.model.spec).unwrap();
    let target = data.split.test.start;
    let f = forecast(&data, &state.model, &ctx, target).unwrap();
    assert_eq!(f.maps.len(), h.levels);
    for (g, m) in f.maps.iter().enumerate() {
        assert_eq!(m.level, g + 1);
        assert_eq!(m.len(), data.hierarchy.level_sizes[g]);
        assert!(m.values.iter().all(|&v| v >= 0.0));
    }
    assert_eq!(forecast(&data, &state.model, &ctx, target).unwrap(), f);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.png");
    write_heatmap(&path, &data.dataset.grid, &f.maps[0].values).unwrap();
    let img = image::open(&path).unwrap();
    assert_eq!((img.height(), img.width()), (8, 8));
}
