//! Flat `key = value` configuration files.
//!
//! One file may carry both training and synthetic-corpus keys; `seed` sets
//! both. Lines starting with `#` are comments. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::model::{Ablations, ModelConfig};
use crate::parallel::Parallelism;
use crate::relattn::Architecture;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub dropout_p: f64,
    pub weight_decay: f64,
    /// Gate temperature.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Number of coarse relation levels `M`.
    pub m_levels: usize,
    pub word_dim: usize,
    pub position_dim: usize,
    pub channels: usize,
    pub window: usize,
    pub max_dist: usize,
    pub architecture: Architecture,
    pub no_sent2rel: bool,
    pub no_attention_pool: bool,
    pub no_aux_obj: bool,
    pub no_entity_emb: bool,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 160,
            dropout_p: 0.5,
            weight_decay: 1e-5,
            lambda: 0.05,
            epochs: 30,
            seed: 42,
            m_levels: 2,
            word_dim: 50,
            position_dim: 5,
            channels: 230,
            window: 3,
            max_dist: 30,
            architecture: Architecture::Collaborating,
            no_sent2rel: false,
            no_attention_pool: false,
            no_aux_obj: false,
            no_entity_emb: false,
            checkpoint_every: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if [self.word_dim, self.position_dim, self.channels, self.max_dist].contains(&0) {
            return bad("word_dim, position_dim, channels and max_dist must be positive".into());
        }
        if self.window.is_multiple_of(2) {
            return bad(format!("window {} must be odd", self.window));
        }
        if self.architecture == Architecture::Base && self.m_levels != 0 {
            return bad(format!("the base architecture needs m_levels = 0, got {}", self.m_levels));
        }
        Ok(())
    }

    pub fn ablations(&self) -> Ablations {
        Ablations {
            no_sent2rel: self.no_sent2rel,
            no_attention_pool: self.no_attention_pool,
            no_aux_obj: self.no_aux_obj,
            no_entity_emb: self.no_entity_emb,
        }
    }

    pub fn model_config(&self, level_sizes: Vec<usize>) -> ModelConfig {
        ModelConfig {
            word_dim: self.word_dim,
            position_dim: self.position_dim,
            channels: self.channels,
            window: self.window,
            max_dist: self.max_dist,
            lambda: self.lambda,
            level_sizes,
            architecture: self.architecture,
            ablations: self.ablations(),
        }
    }

    /// Whether the attention supervision term is part of the objective.
    pub fn uses_aux(&self) -> bool {
        !self.no_aux_obj && !self.no_sent2rel
    }
}

/// Evaluation settings that are not part of training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Long-tail thresholds on training sentence counts.
    pub hits_thresholds: Vec<usize>,
    pub hits_ks: Vec<usize>,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hits_thresholds: vec![100, 200],
            hits_ks: vec![10, 15, 20],
            histogram_bins: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse(key, value)?;
                s.seed = t.seed;
            }
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "dropout_p" => t.dropout_p = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "m_levels" => t.m_levels = parse(key, value)?,
            "word_dim" => t.word_dim = parse(key, value)?,
            "position_dim" => t.position_dim = parse(key, value)?,
            "channels" => t.channels = parse(key, value)?,
            "window" => t.window = parse(key, value)?,
            "max_dist" => t.max_dist = parse(key, value)?,
            "architecture" => {
                t.architecture = match value {
                    "base" => Architecture::Base,
                    "collaborating" => Architecture::Collaborating,
                    _ => return Err(Error::config(format!("invalid architecture {value:?}"))),
                }
            }
            "no_sent2rel" => t.no_sent2rel = parse_bool(key, value)?,
            "no_attention_pool" => t.no_attention_pool = parse_bool(key, value)?,
            "no_aux_obj" => t.no_aux_obj = parse_bool(key, value)?,
            "no_entity_emb" => t.no_entity_emb = parse_bool(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "parallelism" => {
                t.parallelism = match value {
                    "rayon" => Parallelism::Rayon,
                    "sequential" => Parallelism::Sequential,
                    _ => return Err(Error::config(format!("invalid parallelism {value:?}"))),
                }
            }
            "branching" => s.branching = parse_list(key, value)?,
            "vocab_size" => s.vocab_size = parse(key, value)?,
            "num_bags" => s.num_bags = parse(key, value)?,
            "na_fraction" => s.na_fraction = parse(key, value)?,
            "bag_size_weights" => s.bag_size_weights = parse_list(key, value)?,
            "zipf_exponent" => s.zipf_exponent = parse(key, value)?,
            "noise_rate" => s.noise_rate = parse(key, value)?,
            "templates_per_relation" => s.templates_per_relation = parse(key, value)?,
            "keywords_per_node" => s.keywords_per_node = parse(key, value)?,
            "keyword_dropout" => s.keyword_dropout = parse(key, value)?,
            "min_len" => s.min_len = parse(key, value)?,
            "max_len" => s.max_len = parse(key, value)?,
            "num_entities" => s.num_entities = parse(key, value)?,
            "test_fraction" => s.test_fraction = parse(key, value)?,
            "hits_thresholds" => self.eval.hits_thresholds = parse_list(key, value)?,
            "hits_ks" => self.eval.hits_ks = parse_list(key, value)?,
            "histogram_bins" => self.eval.histogram_bins = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines in order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# tiny\nlearning_rate = 0.01\nbranching = 3,2\nno_aux_obj = true\n\nseed=9")
            .unwrap();
        c.apply_overrides(&["learning_rate=0.02"]).unwrap();
        assert_eq!(c.train.learning_rate, 0.02);
        assert_eq!(c.synth.branching, vec![3, 2]);
        assert!(c.train.no_aux_obj);
        assert_eq!((c.train.seed, c.synth.seed), (9, 9));
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let mut c = RunConfig::default();
        let e = c.apply_text("learning_rat = 0.1").unwrap_err();
        assert!(e.to_string().contains("learning_rat"));
        assert!(c.apply_text("epochs").is_err());
        assert!(c.apply_overrides(&["epochs=ten"]).is_err());
    }

    #[test]
    fn validation() {
        let mut t = TrainConfig::default();
        t.validate().unwrap();
        t.dropout_p = 1.0;
        assert!(t.validate().is_err());
        let t = TrainConfig {
            architecture: Architecture::Base,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }
}
