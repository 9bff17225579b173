//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use survfuse_core::data::SplitFractions;
use survfuse_core::{AdapterKind, Pooling, StateReadout, TrainConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
}

/// Training hyperparameters plus the split that selects their data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub split_seed: u64,
    pub fractions: SplitFractions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            split_seed: 0,
            fractions: SplitFractions::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "learning_rate",
    "batch_size",
    "epochs",
    "adapter_kind",
    "d_joint",
    "d_hidden",
    "d_h",
    "d_y",
    "seed",
    "beta1",
    "beta2",
    "epsilon",
    "gate_bias",
    "readout",
    "pooling",
    "full_risk_set",
    "split_seed",
    "train_fraction",
    "val_fraction",
    "test_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

pub fn readout_name(r: StateReadout) -> &'static str {
    match r {
        StateReadout::PostUpdate => "post",
        StateReadout::PreUpdate => "pre",
    }
}

pub fn pooling_name(p: Pooling) -> &'static str {
    match p {
        Pooling::Last => "last",
        Pooling::Mean => "mean",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let bad = || ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
        };
        match key {
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "adapter_kind" => t.adapter_kind = value.parse().map_err(|_| bad())?,
            "d_joint" => t.d_joint = parse(key, value)?,
            "d_hidden" => t.d_hidden = parse(key, value)?,
            "d_h" => t.d_h = parse(key, value)?,
            "d_y" => t.d_y = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "gate_bias" => t.gate_bias = parse(key, value)?,
            "readout" => {
                t.readout = match value {
                    "post" => StateReadout::PostUpdate,
                    "pre" => StateReadout::PreUpdate,
                    _ => return Err(bad()),
                }
            }
            "pooling" => {
                t.pooling = match value {
                    "last" => Pooling::Last,
                    "mean" => Pooling::Mean,
                    _ => return Err(bad()),
                }
            }
            "full_risk_set" => t.full_risk_set = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "train_fraction" => self.fractions.train = parse(key, value)?,
            "val_fraction" => self.fractions.val = parse(key, value)?,
            "test_fraction" => self.fractions.test = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every key, one per line, in [`KEYS`] order. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(s, "{k}={v}").unwrap();
        };
        put("learning_rate", &t.learning_rate);
        put("batch_size", &t.batch_size);
        put("epochs", &t.epochs);
        put("adapter_kind", &t.adapter_kind);
        put("d_joint", &t.d_joint);
        put("d_hidden", &t.d_hidden);
        put("d_h", &t.d_h);
        put("d_y", &t.d_y);
        put("seed", &t.seed);
        put("beta1", &t.beta1);
        put("beta2", &t.beta2);
        put("epsilon", &t.epsilon);
        put("gate_bias", &t.gate_bias);
        put("readout", &readout_name(t.readout));
        put("pooling", &pooling_name(t.pooling));
        put("full_risk_set", &t.full_risk_set);
        put("split_seed", &self.split_seed);
        put("train_fraction", &self.fractions.train);
        put("val_fraction", &self.fractions.val);
        put("test_fraction", &self.fractions.test);
        s
    }

    pub fn with_adapter(&self, kind: AdapterKind) -> Self {
        let mut c = self.clone();
        c.train.adapter_kind = kind;
        c
    }
}
