//! Hyperparameters.
//!
//! A config file is plain `key = value` lines; `#` starts a comment. Keys are
//! the field names of [`Config`]. The same syntax is accepted by
//! [`Config::set`] for command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::semimarkov::NumeratorMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Hidden size of every LSTM (token, span, target, frame-id).
    pub hidden_dim: usize,
    /// Hidden size of the segment and scaffold MLPs.
    pub mlp_dim: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub frame_dim: usize,
    pub lu_dim: usize,
    pub role_dim: usize,
    pub scaffold_label_dim: usize,
    pub distance_dim: usize,
    /// Token distances to the target are clamped to `[-max_distance, max_distance]`.
    pub max_distance: usize,
    /// Maximum segment length `b`, also the scaffold span cap `D`.
    pub max_span: usize,
    pub alpha: f64,
    pub delta: f64,
    pub use_scaffold: bool,
    pub dropout: f64,
    pub unk_prob: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Seed of the per-epoch shuffle, shared by all ensemble members.
    pub data_seed: u64,
    pub numerator: NumeratorMode,
    pub ensemble_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            mlp_dim: 64,
            word_dim: 60,
            pos_dim: 4,
            frame_dim: 100,
            lu_dim: 64,
            role_dim: 50,
            scaffold_label_dim: 8,
            distance_dim: 16,
            max_distance: 20,
            max_span: 20,
            alpha: 2.0,
            delta: 0.17,
            use_scaffold: false,
            dropout: 0.05,
            unk_prob: 0.1,
            learning_rate: 0.0005,
            adam_beta1: 0.01,
            adam_beta2: 0.9999,
            adam_epsilon: 1e-8,
            clip_norm: 5.0,
            epochs: 15,
            seed: 0,
            data_seed: 1,
            numerator: NumeratorMode::Marginal,
            ensemble_size: 5,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut map = match serde_json::to_value(&*self)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let value =
            serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("mlp_dim", self.mlp_dim),
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("frame_dim", self.frame_dim),
            ("lu_dim", self.lu_dim),
            ("role_dim", self.role_dim),
            ("scaffold_label_dim", self.scaffold_label_dim),
            ("distance_dim", self.distance_dim),
            ("max_span", self.max_span),
            ("ensemble_size", self.ensemble_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Config("`alpha` must be nonnegative".into()));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::Config("`delta` must be nonnegative".into()));
        }
        if self.delta >= 1.0 {
            log::warn!("scaffold weight delta = {} is not below 1", self.delta);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("`dropout` must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.unk_prob) {
            return Err(Error::Config("`unk_prob` must be in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.adam_epsilon > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config(
                "`learning_rate`, `adam_epsilon` and `clip_norm` must be positive".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// Canonical JSON (fields in declaration order).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
