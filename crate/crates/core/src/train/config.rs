//! Run configuration and its `key = value` text form.
//!
//! The text form is both the on-disk config file and the snapshot stored in
//! checkpoints. Blank lines and `#` comments are ignored; unknown keys are
//! rejected.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{NvcError, Result};
use crate::losses::{LossWeights, NebulaMode, NebulaOptions};

/// Default lower bound on the anchor-pair log term.
pub const DEFAULT_CLAMP_D: f64 = 0.1;
/// Default weight of the nebula term.
pub const DEFAULT_NEBULA_WEIGHT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Vae,
    Nvc,
    NvcMl,
    NvcNoMass,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vae, Mode::Nvc, Mode::NvcMl, Mode::NvcNoMass];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vae => "vae",
            Mode::Nvc => "nvc",
            Mode::NvcMl => "nvc_ml",
            Mode::NvcNoMass => "nvc_no_mass",
        }
    }

    pub fn uses_anchors(self) -> bool {
        self != Mode::Vae
    }

    pub fn uses_metric(self) -> bool {
        self == Mode::NvcMl
    }

    pub fn nebula_mode(self) -> NebulaMode {
        match self {
            Mode::NvcNoMass => NebulaMode::Euclidean,
            _ => NebulaMode::Mass,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected vae, nvc, nvc_ml or nvc_no_mass)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (expected adam or sgd)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub anchors: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Lower bound on `−ln ||a_i − a_j||²`; `None` leaves it unbounded.
    pub clamp_d: Option<f64>,
    pub eval_epsilon: f64,
    /// Steps between metrics records.
    pub log_every: usize,
    /// Stops training after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Nvc,
            anchors: 10,
            latent_dim: 16,
            hidden_dims: vec![512, 256],
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            weights: LossWeights {
                nebula: DEFAULT_NEBULA_WEIGHT,
                ..LossWeights::default()
            },
            clamp_d: Some(DEFAULT_CLAMP_D),
            eval_epsilon: 0.01,
            log_every: 10,
            max_steps: None,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> NvcError {
    NvcError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: V::Err| config_err(key, format!("cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    /// Mode actually trained: a run without anchors is a plain VAE.
    pub fn effective_mode(&self) -> Mode {
        if self.anchors == 0 {
            Mode::Vae
        } else {
            self.mode
        }
    }

    pub fn nebula_options(&self) -> NebulaOptions {
        NebulaOptions {
            mode: self.effective_mode().nebula_mode(),
            d_floor: self.clamp_d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(config_err("latent_dim", "must be at least 1"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(config_err("hidden_dims", "needs one or more positive widths"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 || (self.effective_mode().uses_metric() && self.batch_size < 2) {
            return Err(config_err(
                "batch_size",
                format!("{} is too small (metric learning needs at least 2)", self.batch_size),
            ));
        }
        if let Some(c) = self.clamp_d {
            if !c.is_finite() {
                return Err(config_err("clamp_D", "floor must be finite"));
            }
        }
        if !(self.eval_epsilon > 0.0 && self.eval_epsilon.is_finite()) {
            return Err(config_err("eval_epsilon", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(config_err("log_every", "must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(config_err("max_steps", "must be at least 1"));
        }
        self.weights.validate()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse().map_err(|e: String| config_err(key, e))?,
            "anchors" => self.anchors = parse_num(key, value)?,
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "hidden_dims" => {
                self.hidden_dims = value
                    .split(',')
                    .map(|w| parse_num(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "lr" => self.lr = parse_num(key, value)?,
            "optimizer" => self.optimizer = value.parse().map_err(|e: String| config_err(key, e))?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "weights.recon" => self.weights.recon = parse_num(key, value)?,
            "weights.kl" => self.weights.kl = parse_num(key, value)?,
            "weights.nebula" => self.weights.nebula = parse_num(key, value)?,
            "weights.metric" => self.weights.metric = parse_num(key, value)?,
            "clamp_D" => {
                self.clamp_d = match value {
                    "false" | "off" | "none" => None,
                    "true" => Some(0.0),
                    v => Some(parse_num(key, v)?),
                }
            }
            "eval_epsilon" => self.eval_epsilon = parse_num(key, value)?,
            "log_every" => self.log_every = parse_num(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(line, format!("line {} is not a `key = value` assignment", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical text form; `parse(render())` reproduces the config exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let hidden: Vec<String> = self.hidden_dims.iter().map(usize::to_string).collect();
        let clamp = self.clamp_d.map_or("false".to_string(), |c| c.to_string());
        let max_steps = self.max_steps.map_or("none".to_string(), |c| c.to_string());
        let lines: [(&str, String); 17] = [
            ("mode", self.mode.to_string()),
            ("anchors", self.anchors.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("hidden_dims", hidden.join(",")),
            ("lr", self.lr.to_string()),
            ("optimizer", self.optimizer.as_str().to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("weights.recon", self.weights.recon.to_string()),
            ("weights.kl", self.weights.kl.to_string()),
            ("weights.nebula", self.weights.nebula.to_string()),
            ("weights.metric", self.weights.metric.to_string()),
            ("clamp_D", clamp),
            ("eval_epsilon", self.eval_epsilon.to_string()),
            ("log_every", self.log_every.to_string()),
            ("max_steps", max_steps),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
