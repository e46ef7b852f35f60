use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde_json::{json, Value};

use urbanrisk_core::autodiff::Mat;
use urbanrisk_core::config::{load_config, HyperParams};
use urbanrisk_core::hierarchy::{load_hierarchy, save_hierarchy, ConvAutoencoder};
use urbanrisk_core::ingest::{generate_synthetic_city, Dataset, RawCity};
use urbanrisk_core::model::Model;
use urbanrisk_core::objective::{LossWeights, MetricReport};
use urbanrisk_core::storage::write_atomic;
use urbanrisk_core::train::{
    build_hierarchy, descriptor_embedding, evaluate, forecast, historical_average_report, load_model,
    pretrain_rs_encoder, train, view_descriptors, write_heatmap, PreparedData, TrainState, BEST_CHECKPOINT,
    STATE_CHECKPOINT,
};
use urbanrisk_core::types::{GranularityHierarchy, GridSpec, D_ST};
use urbanrisk_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "urbanrisk", version, about = "Multi-granularity traffic-accident risk forecasting")]
struct Cli {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; every command reads and writes only here.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Disable remote-sensing enhancement.
    #[arg(long, global = true)]
    no_rs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Source {
    Synthetic,
    CsvDir,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or import a dataset into `<out>/dataset`.
    BuildData {
        #[arg(long, value_enum, default_value = "synthetic")]
        dataset: Source,
        /// CSV directory for `--dataset csv-dir`.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 16)]
        cols: usize,
        #[arg(long, default_value_t = 8)]
        weeks: usize,
    },
    /// Pre-train the remote-sensing autoencoder.
    Pretrain,
    /// Cluster regions into the granularity hierarchy.
    BuildHierarchy,
    /// Train the forecaster; `--resume` continues from the saved state.
    Train {
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Defaults to the best checkpoint of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forecast one interval; writes JSON maps and a heat map of the finest level.
    Predict {
        /// Target interval; defaults to the first test interval.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score the historical-average baseline on a split.
    Baseline {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildData { .. } => "build-data",
            Command::Pretrain => "pretrain",
            Command::BuildHierarchy => "build-hierarchy",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Predict { .. } => "predict",
            Command::Baseline { .. } => "baseline",
        }
    }
}

struct Run {
    out: PathBuf,
    h: HyperParams,
}

impl Run {
    fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }
    fn encoder_path(&self) -> PathBuf {
        self.out.join("autoencoder.json")
    }
    fn hierarchy_path(&self) -> PathBuf {
        self.out.join("hierarchy.json")
    }
    fn checkpoint_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }

    fn dataset(&self) -> Result<Dataset> {
        let dir = self.dataset_dir();
        if !dir.exists() {
            return Err(Error::InvalidInput(format!("{} missing; run build-data first", dir.display())));
        }
        Dataset::load(&dir)
    }

    fn encoder(&self) -> Result<ConvAutoencoder> {
        let path = self.encoder_path();
        if !path.exists() {
            return Err(Error::InvalidInput(format!("{} missing; run pretrain or pass --no-rs", path.display())));
        }
        ConvAutoencoder::load(&path)
    }

    fn rs_embedding(&self, d: &Dataset) -> Result<Option<Mat>> {
        if !self.h.rs_enabled {
            return Ok(None);
        }
        let tiles = d.rs.as_ref().ok_or_else(|| Error::InvalidInput("dataset has no remote-sensing tiles".into()))?;
        Ok(Some(self.encoder()?.embed(tiles)?))
    }

    fn hierarchy(&self) -> Result<GranularityHierarchy> {
        let path = self.hierarchy_path();
        if !path.exists() {
            return Err(Error::InvalidInput(format!("{} missing; run build-hierarchy first", path.display())));
        }
        load_hierarchy(&path)
    }

    fn prepared(&self) -> Result<PreparedData> {
        let d = self.dataset()?;
        let emb = self.rs_embedding(&d)?;
        PreparedData::new(d, self.hierarchy()?, &self.h, emb)
    }

    fn config_hash(&self, data: &PreparedData) -> String {
        self.h.architecture_hash(&data.hierarchy.level_sizes, D_ST)
    }

    fn targets(&self, data: &PreparedData, split: SplitName) -> std::ops::Range<usize> {
        match split {
            SplitName::Train => data.split.train.clone(),
            SplitName::Val => data.split.val.clone(),
            SplitName::Test => data.split.test.clone(),
        }
    }

    fn model(&self, data: &PreparedData, checkpoint: Option<PathBuf>) -> Result<(Model, usize)> {
        let path = checkpoint.unwrap_or_else(|| self.checkpoint_dir().join(BEST_CHECKPOINT));
        load_model(&path, &self.config_hash(data))
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, &serde_json::to_vec_pretty(v)?)?;
        Ok(path)
    }
}

fn report_json(r: &MetricReport) -> Value {
    json!({
        "rmse": r.rmse,
        "recall": r.recall,
        "map": r.map,
        "rush_rmse": r.rush_rmse,
        "rush_recall": r.rush_recall,
        "rush_map": r.rush_map,
        "intervals": r.intervals,
        "rush_intervals": r.rush_intervals,
    })
}

fn execute(run: &Run, command: Command) -> Result<Value> {
    let h = &run.h;
    match command {
        Command::BuildData { dataset, input, rows, cols, weeks } => {
            let d = match dataset {
                Source::Synthetic => generate_synthetic_city(h.seed, GridSpec::new(rows, cols), weeks)?,
                Source::CsvDir => {
                    let dir = input.ok_or_else(|| Error::InvalidInput("--dataset csv-dir needs --input DIR".into()))?;
                    Dataset::from_raw(RawCity::from_csv_dir(&dir)?)?
                }
            };
            d.save(&run.dataset_dir())?;
            let zeros = d.risk.iter().filter(|&&v| v == 0.0).count() as f64 / d.risk.len().max(1) as f64;
            Ok(json!({
                "regions": d.num_regions(),
                "intervals": d.num_intervals(),
                "zero_fraction": zeros,
                "has_rs": d.rs.is_some(),
            }))
        }
        Command::Pretrain => {
            let d = run.dataset()?;
            let (ae, log) = pretrain_rs_encoder(&d, h)?;
            ae.save(&run.encoder_path())?;
            Ok(json!({ "losses": log.losses, "final_step": log.final_step }))
        }
        Command::BuildHierarchy => {
            let d = run.dataset()?;
            let emb = match run.rs_embedding(&d)? {
                Some(e) => e,
                None => {
                    let split = urbanrisk_core::ingest::split_dataset(
                        d.num_intervals(),
                        h.short_term,
                        h.long_term,
                        h.per_week(),
                    )?;
                    descriptor_embedding(&view_descriptors(&d, 0..split.train_end(), &h.risk_thresholds))
                }
            };
            let hier = build_hierarchy(&d, &emb, h)?;
            save_hierarchy(&hier, &run.hierarchy_path())?;
            Ok(json!({ "level_sizes": hier.level_sizes }))
        }
        Command::Train { resume } => {
            let data = run.prepared()?;
            let hash = run.config_hash(&data);
            let dir = run.checkpoint_dir();
            let mut state = if resume {
                let s = TrainState::load(&dir.join(STATE_CHECKPOINT), Some(&hash))?;
                info!("resuming after epoch {}", s.epoch);
                s
            } else {
                let model = Model::new(data.model_spec(h), h.seed)?;
                TrainState::new(model, h.learning_rate, h.seed, hash)
            };
            let w = LossWeights::from_config(h);
            w.validate()?;
            train(&data, &mut state, h.epochs, &w, h.batch_size, Some(&dir))?;
            run.write_json("history.json", &serde_json::to_value(&state.history)?)?;
            Ok(json!({
                "epochs": state.epoch,
                "best_epoch": state.best_epoch,
                "best_val_loss": state.best_val,
                "history": state.history,
            }))
        }
        Command::Eval { split, checkpoint } => {
            let data = run.prepared()?;
            let (model, epoch) = run.model(&data, checkpoint)?;
            let report = evaluate(&data, &model, run.targets(&data, split))?;
            let v = json!({ "split": format!("{split:?}").to_lowercase(), "epoch": epoch, "metrics": report_json(&report) });
            run.write_json(&format!("eval_{}.json", format!("{split:?}").to_lowercase()), &v)?;
            Ok(v)
        }
        Command::Predict { target, checkpoint } => {
            let data = run.prepared()?;
            let (model, _) = run.model(&data, checkpoint)?;
            let ctx = data.context(&model.spec)?;
            let t = target.unwrap_or(data.split.test.start);
            let f = forecast(&data, &model, &ctx, t)?;
            let json_path = run.write_json(&format!("forecast_{t}.json"), &serde_json::to_value(&f)?)?;
            let png = run.out.join(format!("forecast_{t}.png"));
            write_heatmap(&png, &data.dataset.grid, &f.maps[0].values)?;
            Ok(json!({
                "target": t,
                "timestamp": data.dataset.timestamp(t).to_string(),
                "levels": f.maps.len(),
                "forecast": json_path,
                "heatmap": png,
            }))
        }
        Command::Baseline { split } => {
            let d = run.dataset()?;
            let s = urbanrisk_core::ingest::split_dataset(d.num_intervals(), h.short_term, h.long_term, h.per_week())?;
            let targets = match split {
                SplitName::Train => s.train,
                SplitName::Val => s.val,
                SplitName::Test => s.test,
            };
            let report = historical_average_report(&d, targets, h.short_term, h.long_term, h.per_week())?;
            let name = format!("{split:?}").to_lowercase();
            let v = json!({ "split": name, "metrics": report_json(&report) });
            run.write_json(&format!("baseline_{name}.json"), &v)?;
            Ok(v)
        }
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Merges this command's outputs into `<out>/manifest.json`.
fn write_manifest(run: &Run, command: &str, outputs: &Value) -> Result<()> {
    let path = run.out.join("manifest.json");
    let mut manifest = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Value>(&b).ok())
        .filter(Value::is_object)
        .unwrap_or_else(|| json!({ "commands": {} }));
    manifest["config"] = json!(run.h.to_toml());
    manifest["seed"] = json!(run.h.seed);
    manifest["git_describe"] = json!(git_describe());
    if !manifest["commands"].is_object() {
        manifest["commands"] = json!({});
    }
    manifest["commands"][command] = outputs.clone();
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)
}

fn load_params(cli: &Cli) -> Result<HyperParams> {
    let mut h = match &cli.config {
        Some(p) => load_config(p)?,
        None => HyperParams::default(),
    };
    if let Some(seed) = cli.seed {
        h.seed = seed;
    }
    if cli.no_rs {
        h.rs_enabled = false;
    }
    h.validate()?;
    Ok(h)
}

fn real_main(cli: Cli) -> Result<()> {
    let h = load_params(&cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let run = Run { out: cli.out.clone(), h };
    let name = cli.command.name();
    let outputs = execute(&run, cli.command)?;
    write_manifest(&run, name, &outputs)?;
    println!("{}", serde_json::to_string_pretty(&outputs)?);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
