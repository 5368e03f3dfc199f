//! Flat key-value run configuration.
//!
//! The file format is `key = value` per line with `#` comments. Every key
//! has a sensible default; CLI
//! flags override file values. Parsing collects *all* problems before
//! failing so a bad config is reported exhaustively.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregator::AggregatorKind;
use crate::error::{Error, Result};
use crate::hig::HigConfig;
use crate::pooling::PoolingPlacement;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    // context pooling
    pub alpha: f64,
    pub gcn_hidden: usize,
    pub gcn_blocks: usize,
    /// 1-based blocks that pool; default just the last block.
    pub pool_blocks: Vec<usize>,
    pub readout_before_pool: bool,
    // encoders
    pub word_dim: usize,
    pub lstm_hidden: usize,
    pub char_encoder: bool,
    pub char_dim: usize,
    pub char_hidden: usize,
    // aggregator and classifier
    pub aggregator: AggregatorKind,
    pub aggregator_hidden: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    // optimization
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    pub runs: usize,
    // graph construction
    pub alias_single_node: bool,
    pub entity_entity_edge: bool,
    pub max_nodes: usize,
    pub max_attr_tokens: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            alpha: 1.0,
            gcn_hidden: 128,
            gcn_blocks: 3,
            pool_blocks: vec![3],
            readout_before_pool: false,
            word_dim: 50,
            lstm_hidden: 50,
            char_encoder: false,
            char_dim: 8,
            char_hidden: 8,
            aggregator: AggregatorKind::Gnn,
            aggregator_hidden: 256,
            classifier_hidden: 256,
            dropout: 0.5,
            learning_rate: 0.001,
            batch_size: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 14,
            grad_clip: 0.0,
            seed: 13,
            runs: 1,
            alias_single_node: true,
            entity_entity_edge: false,
            max_nodes: 64,
            max_attr_tokens: 64,
        }
    }
}

impl Config {
    /// Defaults overridden by a key-value file, validated; all errors are
    /// reported together.
    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg = Config::default();
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(msg) = cfg.set(key.trim(), value.trim()) {
                        errors.push(format!("line {}: {msg}", lineno + 1));
                    }
                }
                None => errors.push(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )),
            }
        }
        errors.extend(cfg.validation_errors());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Set one key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("{key}: cannot parse {value:?}"))
        }
        fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
            match value.to_lowercase().as_str() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                _ => Err(format!("{key}: expected a boolean, got {value:?}")),
            }
        }
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "gcn_hidden" => self.gcn_hidden = parse(key, value)?,
            "gcn_blocks" => self.gcn_blocks = parse(key, value)?,
            "pool_blocks" => {
                self.pool_blocks = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s.trim()))
                    .collect::<std::result::Result<_, _>>()?;
            }
            "readout_before_pool" => self.readout_before_pool = parse_bool(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse(key, value)?,
            "char_encoder" => self.char_encoder = parse_bool(key, value)?,
            "char_dim" => self.char_dim = parse(key, value)?,
            "char_hidden" => self.char_hidden = parse(key, value)?,
            "aggregator" => self.aggregator = value.parse()?,
            "aggregator_hidden" => self.aggregator_hidden = parse(key, value)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "alias_single_node" => self.alias_single_node = parse_bool(key, value)?,
            "entity_entity_edge" => self.entity_entity_edge = parse_bool(key, value)?,
            "max_nodes" => self.max_nodes = parse(key, value)?,
            "max_attr_tokens" => self.max_attr_tokens = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validation_errors(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.alpha < 0.0 {
            errors.push(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.learning_rate <= 0.0 {
            errors.push(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            errors.push("batch_size must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.gcn_blocks == 0 {
            errors.push("gcn_blocks must be >= 1".to_string());
        }
        for &b in &self.pool_blocks {
            if b == 0 || b > self.gcn_blocks {
                errors.push(format!(
                    "pool_blocks entry {b} out of range 1..={}",
                    self.gcn_blocks
                ));
            }
        }
        if self.max_nodes < 3 {
            errors.push("max_nodes must be at least 3".to_string());
        }
        for (name, v) in [
            ("gcn_hidden", self.gcn_hidden),
            ("word_dim", self.word_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("aggregator_hidden", self.aggregator_hidden),
            ("classifier_hidden", self.classifier_hidden),
            ("max_attr_tokens", self.max_attr_tokens),
            ("runs", self.runs),
        ] {
            if v == 0 {
                errors.push(format!("{name} must be >= 1"));
            }
        }
        if self.char_encoder && (self.char_dim == 0 || self.char_hidden == 0) {
            errors.push("char_dim and char_hidden must be >= 1 when char_encoder is on".into());
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                errors.push(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if self.epsilon <= 0.0 {
            errors.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.validation_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn hig(&self) -> HigConfig {
        HigConfig {
            alias_single_node: self.alias_single_node,
            entity_entity_edge: self.entity_entity_edge,
            max_nodes: self.max_nodes,
            max_attr_tokens: self.max_attr_tokens,
        }
    }

    pub fn placement(&self) -> PoolingPlacement {
        PoolingPlacement {
            pool_blocks: self.pool_blocks.clone(),
            readout_before_pool: self.readout_before_pool,
        }
    }

    /// Node feature width produced by the encoders.
    pub fn feature_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Render the config back to its file format (used by run manifests).
    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        let pool = self
            .pool_blocks
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "alpha = {}", self.alpha);
        let _ = writeln!(out, "gcn_hidden = {}", self.gcn_hidden);
        let _ = writeln!(out, "gcn_blocks = {}", self.gcn_blocks);
        let _ = writeln!(out, "pool_blocks = {pool}");
        let _ = writeln!(out, "readout_before_pool = {}", self.readout_before_pool);
        let _ = writeln!(out, "word_dim = {}", self.word_dim);
        let _ = writeln!(out, "lstm_hidden = {}", self.lstm_hidden);
        let _ = writeln!(out, "char_encoder = {}", self.char_encoder);
        let _ = writeln!(out, "char_dim = {}", self.char_dim);
        let _ = writeln!(out, "char_hidden = {}", self.char_hidden);
        let _ = writeln!(out, "aggregator = {}", self.aggregator);
        let _ = writeln!(out, "aggregator_hidden = {}", self.aggregator_hidden);
        let _ = writeln!(out, "classifier_hidden = {}", self.classifier_hidden);
        let _ = writeln!(out, "dropout = {}", self.dropout);
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "beta1 = {}", self.beta1);
        let _ = writeln!(out, "beta2 = {}", self.beta2);
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        let _ = writeln!(out, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(out, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "runs = {}", self.runs);
        let _ = writeln!(out, "alias_single_node = {}", self.alias_single_node);
        let _ = writeln!(out, "entity_entity_edge = {}", self.entity_entity_edge);
        let _ = writeln!(out, "max_nodes = {}", self.max_nodes);
        let _ = writeln!(out, "max_attr_tokens = {}", self.max_attr_tokens);
        out
    }
}

impl std::str::FromStr for Config {
    type Err = Error;

    fn from_str(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut errors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((key, value)) => {
                    if let Err(msg) = cfg.set(key.trim(), value.trim()) {
                        errors.push(format!("line {}: {msg}", lineno + 1));
                    }
                }
                None => errors.push(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )),
            }
        }
        errors.extend(cfg.validation_errors());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }
}
