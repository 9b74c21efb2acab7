//! Training configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments and blank lines are ignored
//! alpha = 1
//! sigma_sq = off
//! sa_widths = 64,32,16,8,4
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::DEFAULT_SIGMA_SQ;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_K};
use crate::models::{DEFAULT_HEAD_HIDDEN, DEFAULT_SA_WIDTHS};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_FINETUNE_PER_IDENTITY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    /// Attention variance in squared pixels at the reference resolution;
    /// `None` disables local weighting (`M = 1`).
    pub sigma_sq: Option<f64>,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub lr_sa: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub resolution: usize,
    /// Removes the SA-Module path: the backbone sees only `beta * L_gaze`.
    pub baseline: bool,
    pub backbone: String,
    pub backbone_width: Option<usize>,
    pub head_hidden: usize,
    pub sa_widths: Vec<usize>,
    /// Initialise the backbone from this checkpoint instead of randomly.
    pub init_from: Option<String>,
    pub log_every: usize,
    /// `0` writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub finetune_per_identity: usize,
    /// Step budget for probe decoders trained against frozen backbones.
    pub probe_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            k: DEFAULT_K,
            sigma_sq: Some(DEFAULT_SIGMA_SQ),
            lr_backbone: DEFAULT_LEARNING_RATE,
            lr_head: DEFAULT_LEARNING_RATE,
            lr_sa: DEFAULT_LEARNING_RATE,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: DEFAULT_BATCH_SIZE,
            steps: 1000,
            seed: 0,
            resolution: DEFAULT_RESOLUTION,
            baseline: false,
            backbone: "resnet18".into(),
            backbone_width: None,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            sa_widths: DEFAULT_SA_WIDTHS.to_vec(),
            init_from: None,
            log_every: 10,
            checkpoint_every: 0,
            finetune_per_identity: DEFAULT_FINETUNE_PER_IDENTITY,
            probe_steps: 300,
        }
    }
}

impl TrainConfig {
    /// CPU-sized networks for the synthetic benchmark. Loss weights,
    /// attention variance and learning rates keep their defaults.
    pub fn desk() -> Self {
        TrainConfig {
            backbone: "desk-resnet".into(),
            sa_widths: vec![64, 32, 16, 8, 8],
            ..Default::default()
        }
    }

    /// Settings of the synthetic cross-domain benchmark. The SA-Module must
    /// leave the mean-image regime within the step budget for the adversarial
    /// signal to exist, which needs a higher learning rate than the default.
    /// The eye maps cover about a sixteenth of a 64 px image, and `alpha`
    /// compensates for the correspondingly smaller adversarial term.
    pub fn benchmark() -> Self {
        TrainConfig {
            alpha: 30.0,
            lr_backbone: 3e-4,
            lr_head: 3e-4,
            lr_sa: 3e-4,
            steps: 1000,
            probe_steps: 1000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "benchmark" => Ok(Self::benchmark()),
            other => Err(Error::config(format!("unknown preset '{other}' (reference, desk, benchmark)"))),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if let Some(s) = self.sigma_sq {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("sigma_sq must be positive, got {s}")));
            }
        }
        for (name, lr) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_head", self.lr_head),
            ("lr_sa", self.lr_sa),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam moment decays must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.resolution == 0 {
            return Err(Error::config("resolution must be positive"));
        }
        if self.head_hidden == 0 {
            return Err(Error::config("head_hidden must be positive"));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment; keys are the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::config(format!("invalid value '{value}' for {key}: expected {what}"));
        let float = || value.parse::<f64>().map_err(|_| bad("a number"));
        let int = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let opt_none = matches!(value, "off" | "none" | "");
        match key {
            "alpha" => self.alpha = float()?,
            "beta" => self.beta = float()?,
            "k" => self.k = float()?,
            "sigma_sq" => self.sigma_sq = if opt_none { None } else { Some(float()?) },
            "lr" => {
                let lr = float()?;
                self.lr_backbone = lr;
                self.lr_head = lr;
                self.lr_sa = lr;
            }
            "lr_backbone" => self.lr_backbone = float()?,
            "lr_head" => self.lr_head = float()?,
            "lr_sa" => self.lr_sa = float()?,
            "adam_beta1" => self.adam_beta1 = float()?,
            "adam_beta2" => self.adam_beta2 = float()?,
            "adam_eps" => self.adam_eps = float()?,
            "batch_size" => self.batch_size = int()?,
            "steps" => self.steps = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
            "resolution" => self.resolution = int()?,
            "baseline" => self.baseline = value.parse().map_err(|_| bad("true or false"))?,
            "backbone" => self.backbone = value.to_string(),
            "backbone_width" => self.backbone_width = if opt_none { None } else { Some(int()?) },
            "head_hidden" => self.head_hidden = int()?,
            "sa_widths" => {
                self.sa_widths = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("comma-separated integers"))?
            }
            "init_from" => self.init_from = (!opt_none).then(|| value.to_string()),
            "log_every" => self.log_every = int()?,
            "checkpoint_every" => self.checkpoint_every = int()?,
            "finetune_per_identity" => self.finetune_per_identity = int()?,
            "probe_steps" => self.probe_steps = int()?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_text(&self) -> String {
        let opt_f = |v: Option<f64>| v.map_or("off".to_string(), |x| x.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("k", self.k.to_string());
        kv("sigma_sq", opt_f(self.sigma_sq));
        kv("lr_backbone", self.lr_backbone.to_string());
        kv("lr_head", self.lr_head.to_string());
        kv("lr_sa", self.lr_sa.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("steps", self.steps.to_string());
        kv("seed", self.seed.to_string());
        kv("resolution", self.resolution.to_string());
        kv("baseline", self.baseline.to_string());
        kv("backbone", self.backbone.clone());
        kv("backbone_width", self.backbone_width.map_or("off".into(), |w| w.to_string()));
        kv("head_hidden", self.head_hidden.to_string());
        let widths: Vec<String> = self.sa_widths.iter().map(|w| w.to_string()).collect();
        kv("sa_widths", widths.join(","));
        kv("init_from", self.init_from.clone().unwrap_or_else(|| "off".into()));
        kv("log_every", self.log_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("finetune_per_identity", self.finetune_per_identity.to_string());
        kv("probe_steps", self.probe_steps.to_string());
        s
    }
}
