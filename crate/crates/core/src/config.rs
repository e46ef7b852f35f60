//! Hyper-parameters and the key-value config file.
//!
//! The on-disk config is TOML. Every key is optional; missing keys take the
//! defaults below. Loss-weight vectors default to one entry per level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_RISK_LEVEL_WEIGHTS: [f64; 4] = [0.05, 0.2, 0.25, 0.5];
pub const DEFAULT_RISK_THRESHOLDS: [f64; 3] = [0.0, 2.0, 4.0];
const DEFAULT_BCE_WEIGHTS: [f64; 4] = [3e-4, 3e-4, 1e-5, 1e-5];

/// Config as read from disk: everything optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub short_term: Option<usize>,
    pub long_term: Option<usize>,
    pub levels: Option<usize>,
    pub top_k: Option<usize>,
    pub conv_layers: Option<usize>,
    pub attention_blocks: Option<usize>,
    pub ff_width: Option<usize>,
    pub hidden: Option<usize>,
    pub rs_channels: Option<usize>,
    pub rs_enabled: Option<bool>,
    pub view_mask: Option<[bool; 3]>,
    pub risk_level_weights: Option<[f64; 4]>,
    pub risk_thresholds: Option<[f64; 3]>,
    pub lambda_f: Option<f64>,
    pub lambda_c: Option<f64>,
    pub loss_wmse: Option<Vec<f64>>,
    pub loss_bce: Option<Vec<f64>>,
    pub loss_hc: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub interval_hours: Option<usize>,
    pub part_numbers: Option<Vec<usize>>,
    /// Accepted for compatibility with partitioner configs; unused.
    pub graph_sizes: Option<Vec<usize>>,
    pub partition_tolerance: Option<usize>,
    pub ae_channels: Option<[usize; 2]>,
    pub ae_epochs: Option<usize>,
    pub ae_learning_rate: Option<f64>,
}

/// Validated hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Short-term history length `p`.
    pub short_term: usize,
    /// Long-term (weekly) history length `q`.
    pub long_term: usize,
    /// Number of granularity levels `n`.
    pub levels: usize,
    /// Neighbours kept per node in the similarity views.
    pub top_k: usize,
    pub conv_layers: usize,
    pub attention_blocks: usize,
    /// Hidden width of the attention feed-forward layer.
    pub ff_width: usize,
    /// Width of every encoded frame.
    pub hidden: usize,
    pub rs_channels: usize,
    pub rs_enabled: bool,
    /// Road, risk, POI.
    pub view_mask: [bool; 3],
    pub risk_level_weights: [f64; 4],
    pub risk_thresholds: [f64; 3],
    pub lambda_f: f64,
    pub lambda_c: f64,
    pub loss_wmse: Vec<f64>,
    pub loss_bce: Vec<f64>,
    pub loss_hc: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub interval_hours: usize,
    pub part_numbers: Option<Vec<usize>>,
    pub graph_sizes: Option<Vec<usize>>,
    pub partition_tolerance: usize,
    pub ae_channels: [usize; 2],
    pub ae_epochs: usize,
    pub ae_learning_rate: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        validate_config(ConfigFile::default()).expect("defaults are valid")
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

/// Fills defaults and rejects the first violated constraint.
pub fn validate_config(c: ConfigFile) -> Result<HyperParams> {
    let levels = c.levels.unwrap_or(4);
    check(levels >= 1, "levels must be >= 1")?;
    let h = HyperParams {
        short_term: c.short_term.unwrap_or(3),
        long_term: c.long_term.unwrap_or(4),
        levels,
        top_k: c.top_k.unwrap_or(8),
        conv_layers: c.conv_layers.unwrap_or(2),
        attention_blocks: c.attention_blocks.unwrap_or(2),
        ff_width: c.ff_width.unwrap_or(256),
        hidden: c.hidden.unwrap_or(16),
        rs_channels: c.rs_channels.unwrap_or(8),
        rs_enabled: c.rs_enabled.unwrap_or(true),
        view_mask: c.view_mask.unwrap_or([true; 3]),
        risk_level_weights: c.risk_level_weights.unwrap_or(DEFAULT_RISK_LEVEL_WEIGHTS),
        risk_thresholds: c.risk_thresholds.unwrap_or(DEFAULT_RISK_THRESHOLDS),
        lambda_f: c.lambda_f.unwrap_or(0.8),
        lambda_c: c.lambda_c.unwrap_or(0.2),
        loss_wmse: c.loss_wmse.unwrap_or_else(|| vec![1.0; levels]),
        loss_bce: c
            .loss_bce
            .unwrap_or_else(|| (0..levels).map(|i| DEFAULT_BCE_WEIGHTS[i.min(3)]).collect()),
        loss_hc: c.loss_hc.unwrap_or(1.0),
        learning_rate: c.learning_rate.unwrap_or(1e-4),
        batch_size: c.batch_size.unwrap_or(32),
        epochs: c.epochs.unwrap_or(70),
        seed: c.seed.unwrap_or(0),
        interval_hours: c.interval_hours.unwrap_or(1),
        part_numbers: c.part_numbers,
        graph_sizes: c.graph_sizes,
        partition_tolerance: c.partition_tolerance.unwrap_or(1),
        ae_channels: c.ae_channels.unwrap_or([8, 16]),
        ae_epochs: c.ae_epochs.unwrap_or(20),
        ae_learning_rate: c.ae_learning_rate.unwrap_or(0.05),
    };
    h.validate()?;
    Ok(h)
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        check(self.short_term >= 1, "short_term (p) must be >= 1")?;
        check(self.long_term >= 1, "long_term (q) must be >= 1")?;
        check(self.levels >= 1, "levels must be >= 1")?;
        check(self.top_k >= 1, "top_k must be >= 1")?;
        check(self.conv_layers >= 1, "conv_layers must be >= 1")?;
        check(self.ff_width >= 1, "ff_width must be >= 1")?;
        check(self.hidden >= 2 && self.hidden % 2 == 0, "hidden must be even and >= 2")?;
        check(!self.rs_enabled || self.rs_channels >= 1, "rs_channels must be >= 1 when rs is enabled")?;
        let lambdas = self
            .risk_level_weights
            .iter()
            .chain(&self.loss_wmse)
            .chain(&self.loss_bce)
            .chain([&self.lambda_f, &self.lambda_c, &self.loss_hc]);
        for l in lambdas {
            check(l.is_finite() && *l >= 0.0, "all loss and fusion weights must be >= 0")?;
        }
        check(
            self.risk_thresholds.windows(2).all(|w| w[0] < w[1]),
            "risk_thresholds must be strictly increasing",
        )?;
        check(self.loss_wmse.len() == self.levels, "loss_wmse needs one weight per level")?;
        check(self.loss_bce.len() == self.levels, "loss_bce needs one weight per level")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be positive")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.interval_hours >= 1 && 168 % self.interval_hours == 0, "interval_hours must divide 168")?;
        if let Some(parts) = &self.part_numbers {
            check(parts.len() + 1 == self.levels, "part_numbers needs levels - 1 entries")?;
            check(parts.windows(2).all(|w| w[0] > w[1]), "part_numbers must be strictly decreasing")?;
            check(parts.iter().all(|&p| p >= 1), "part_numbers must be positive")?;
        }
        check(self.ae_channels.iter().all(|&c| c >= 1), "ae_channels must be positive")?;
        check(self.ae_learning_rate > 0.0, "ae_learning_rate must be positive")?;
        Ok(())
    }

    /// Intervals per week.
    pub fn per_week(&self) -> usize {
        168 / self.interval_hours
    }

    /// History window length `T = p + q`.
    pub fn window_len(&self) -> usize {
        self.short_term + self.long_term
    }

    /// Part numbers for levels 2..=n. Defaults to quartering the node count at
    /// each level.
    pub fn part_numbers_for(&self, n_regions: usize) -> Vec<usize> {
        match &self.part_numbers {
            Some(p) => p.clone(),
            None => {
                let mut out = Vec::new();
                let mut n = n_regions;
                for _ in 1..self.levels {
                    n = (n / 4).max(1);
                    out.push(n);
                }
                out
            }
        }
    }

    /// Hash over everything that determines parameter shapes and the forward
    /// pass. Training-schedule fields are excluded so runs can be resumed with
    /// a longer schedule.
    pub fn architecture_hash(&self, level_sizes: &[usize], input_width: usize) -> String {
        let key = serde_json::json!({
            "p": self.short_term,
            "q": self.long_term,
            "levels": level_sizes,
            "top_k": self.top_k,
            "conv_layers": self.conv_layers,
            "attention_blocks": self.attention_blocks,
            "ff_width": self.ff_width,
            "hidden": self.hidden,
            "rs_channels": self.rs_channels,
            "rs_enabled": self.rs_enabled,
            "view_mask": self.view_mask,
            "lambda_f": self.lambda_f.to_bits(),
            "lambda_c": self.lambda_c.to_bits(),
            "input_width": input_width,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<HyperParams> {
    let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    validate_config(raw)
}

pub fn load_config(path: &Path) -> Result<HyperParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
