use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "levels = 2\nshort_term = 2\nlong_term = 1\nhidden = 4\nff_width = 8\nrs_channels = 2\n\
epochs = 1\nbatch_size = 64\nae_epochs = 1\n";

fn urbanrisk(out: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbanrisk"))
        .arg("--out")
        .arg(out)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("commands print JSON")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn full_pipeline_on_a_tiny_city() {
    let dir = tempfile::tempdir().unwrap();
    let (out, cfg) = (dir.path().join("run"), dir.path().join("tiny.toml"));
    std::fs::write(&cfg, TINY).unwrap();
    let run = |args: &[&str]| ok(urbanrisk(&out, &cfg, args));

    let built = run(&["build-data", "--rows", "4", "--cols", "4", "--weeks", "3"]);
    assert_eq!(built["regions"], 16);
    assert_eq!(built["intervals"], 3 * 168);
    run(&["pretrain"]);
    assert!(out.join("autoencoder.json").exists());
    let hier = run(&["build-hierarchy"]);
    assert_eq!(hier["level_sizes"].as_array().unwrap().len(), 2);
    let trained = run(&["train"]);
    assert_eq!(trained["epochs"], 1);
    assert!(out.join("checkpoints/best.ckpt").exists());
    // already at the configured epoch count: resuming is a no-op
    assert_eq!(run(&["train", "--resume"])["epochs"], 1);
    let eval = run(&["eval", "--split", "val"]);
    assert!(eval["metrics"]["rmse"].as_f64().unwrap().is_finite());
    assert!(out.join("eval_val.json").exists());
    let pred = run(&["predict"]);
    assert_eq!(pred["levels"], 2);
    let target = pred["target"].as_u64().unwrap();
    let forecast = read_json(&out.join(format!("forecast_{target}.json")));
    assert_eq!(forecast["maps"][0]["values"].as_array().unwrap().len(), 16);
    assert!(out.join(format!("forecast_{target}.png")).exists());
    run(&["baseline", "--split", "test"]);

    let manifest = read_json(&out.join("manifest.json"));
    for c in ["build-data", "pretrain", "build-hierarchy", "train", "eval", "predict", "baseline"] {
        assert!(manifest["commands"][c].is_object(), "manifest lacks {c}");
    }
    assert!(manifest["config"].as_str().unwrap().contains("levels = 2"));
    assert!(manifest["git_describe"].is_string());
    assert!(manifest["seed"].is_u64());
}

#[test]
fn no_rs_skips_the_autoencoder() {
    let dir = tempfile::tempdir().unwrap();
    let (out, cfg) = (dir.path().join("run"), dir.path().join("tiny.toml"));
    std::fs::write(&cfg, TINY).unwrap();
    let run = |args: &[&str]| ok(urbanrisk(&out, &cfg, args));
    run(&["build-data", "--rows", "4", "--cols", "4", "--weeks", "3"]);
    run(&["--no-rs", "build-hierarchy"]);
    run(&["--no-rs", "train"]);
    assert!(!out.join("autoencoder.json").exists());
    // with imagery enabled the missing encoder is a data error
    assert_eq!(urbanrisk(&out, &cfg, &["eval"]).status.code(), Some(3));
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "levels = 0\n").unwrap();
    let o = urbanrisk(&dir.path().join("run"), &cfg, &["baseline"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "levels = \"many\"\n").unwrap();
    assert_eq!(urbanrisk(&dir.path().join("run"), &cfg, &["baseline"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let o = urbanrisk(&dir.path().join("run"), &cfg, &["baseline"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("build-data"));
}
