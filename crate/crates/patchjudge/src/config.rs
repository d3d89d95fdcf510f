//! Line-oriented run configuration: `[section]` headers and
//! `key = value` pairs, covering the data locations, the model shape,
//! and the training loop. Every run echoes its effective settings
//! back out for provenance.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::model::ModelConfig;
use crate::tokenizer::Truncation;
use crate::training::TrainConfig;

#[derive(Clone, Debug)]
pub struct DataSettings {
    pub dataset: Option<String>,
    pub vocabulary: Option<String>,
    pub vocab_size: usize,
    pub output: Option<String>,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            dataset: None,
            vocabulary: None,
            vocab_size: 2000,
            output: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSettings {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub attn_dropout: f64,
    pub hidden_dropout: f64,
    pub fusion: FusionMode,
    pub truncation: Truncation,
    pub lstm_layers: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            layers: 2,
            heads: 4,
            model_dim: 32,
            ffn_dim: 64,
            max_len: 512,
            attn_dropout: 0.1,
            hidden_dropout: 0.1,
            fusion: FusionMode::Con,
            truncation: Truncation::Head,
            lstm_layers: 1,
        }
    }
}

/// The full run configuration. Training defaults are the classic
/// fine-tuning setup (learning rate 5e-5, batch 16, dropout 0.5,
/// 50 epochs, 512-token budget, 5 folds); model dimensions default
/// small enough to train on one CPU core.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub data: DataSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

fn parse_number<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

impl RunConfig {
    /// Sets one key. Both the file parser and the CLI flag overrides
    /// funnel through here, so they accept exactly the same names.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let path_value = || {
            if value.is_empty() {
                None
            } else {
                Some(value.to_string())
            }
        };
        match (section, key) {
            ("data", "dataset") => self.data.dataset = path_value(),
            ("data", "vocabulary") => self.data.vocabulary = path_value(),
            ("data", "output") => self.data.output = path_value(),
            ("data", "vocab_size") => self.data.vocab_size = parse_number(section, key, value)?,
            ("model", "layers") => self.model.layers = parse_number(section, key, value)?,
            ("model", "heads") => self.model.heads = parse_number(section, key, value)?,
            ("model", "model_dim") => self.model.model_dim = parse_number(section, key, value)?,
            ("model", "ffn_dim") => self.model.ffn_dim = parse_number(section, key, value)?,
            ("model", "max_len") => self.model.max_len = parse_number(section, key, value)?,
            ("model", "attn_dropout") => {
                self.model.attn_dropout = parse_number(section, key, value)?
            }
            ("model", "hidden_dropout") => {
                self.model.hidden_dropout = parse_number(section, key, value)?
            }
            ("model", "fusion") => self.model.fusion = value.parse()?,
            ("model", "truncation") => self.model.truncation = value.parse()?,
            ("model", "lstm_layers") => self.model.lstm_layers = parse_number(section, key, value)?,
            ("train", "learning_rate") => {
                self.train.learning_rate = parse_number(section, key, value)?
            }
            ("train", "batch_size") => self.train.batch_size = parse_number(section, key, value)?,
            ("train", "dropout") => self.train.dropout = parse_number(section, key, value)?,
            ("train", "max_epochs") => self.train.max_epochs = parse_number(section, key, value)?,
            ("train", "seed") => self.train.seed = parse_number(section, key, value)?,
            ("train", "folds") => self.train.folds = parse_number(section, key, value)?,
            ("train", "beta1") => self.train.beta1 = parse_number(section, key, value)?,
            ("train", "beta2") => self.train.beta2 = parse_number(section, key, value)?,
            ("train", "eps") => self.train.eps = parse_number(section, key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key [{section}] {key}"
                )))
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut section = String::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", number + 1))
                })?;
                if !["data", "model", "train"].contains(&name) {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{name}]",
                        number + 1
                    )));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", number + 1))
            })?;
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key before any [section]",
                    number + 1
                )));
            }
            config.set(&section, key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes every effective setting; `parse` reads it back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[data]");
        let _ = writeln!(
            out,
            "dataset = {}",
            self.data.dataset.as_deref().unwrap_or("")
        );
        let _ = writeln!(
            out,
            "vocabulary = {}",
            self.data.vocabulary.as_deref().unwrap_or("")
        );
        let _ = writeln!(out, "vocab_size = {}", self.data.vocab_size);
        let _ = writeln!(
            out,
            "output = {}",
            self.data.output.as_deref().unwrap_or("")
        );
        let _ = writeln!(out, "\n[model]");
        let m = &self.model;
        let _ = writeln!(out, "layers = {}", m.layers);
        let _ = writeln!(out, "heads = {}", m.heads);
        let _ = writeln!(out, "model_dim = {}", m.model_dim);
        let _ = writeln!(out, "ffn_dim = {}", m.ffn_dim);
        let _ = writeln!(out, "max_len = {}", m.max_len);
        let _ = writeln!(out, "attn_dropout = {}", m.attn_dropout);
        let _ = writeln!(out, "hidden_dropout = {}", m.hidden_dropout);
        let _ = writeln!(out, "fusion = {}", m.fusion.name());
        let _ = writeln!(out, "truncation = {}", m.truncation.name());
        let _ = writeln!(out, "lstm_layers = {}", m.lstm_layers);
        let _ = writeln!(out, "\n[train]");
        let t = &self.train;
        let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "dropout = {}", t.dropout);
        let _ = writeln!(out, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(out, "seed = {}", t.seed);
        let _ = writeln!(out, "folds = {}", t.folds);
        let _ = writeln!(out, "beta1 = {}", t.beta1);
        let _ = writeln!(out, "beta2 = {}", t.beta2);
        let _ = writeln!(out, "eps = {}", t.eps);
        out
    }

    /// The network shape this configuration describes. The dropout
    /// rate from the training section lands on the classifier head;
    /// the encoder keeps its own two rates.
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let config = ModelConfig {
            encoder: EncoderConfig {
                layers: m.layers,
                heads: m.heads,
                model_dim: m.model_dim,
                ffn_dim: m.ffn_dim,
                max_positions: m.max_len,
                attn_dropout: m.attn_dropout,
                hidden_dropout: m.hidden_dropout,
            },
            fusion: m.fusion,
            truncation: m.truncation,
            max_len: m.max_len,
            lstm_layers: m.lstm_layers,
            head_dropout: self.train.dropout,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.to_model_config()?;
        self.train.validate()?;
        if self.train.learning_rate == 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_setup() {
        let config = RunConfig::default();
        assert_eq!(config.train.learning_rate, 5e-5);
        assert_eq!(config.train.batch_size, 16);
        assert_eq!(config.train.dropout, 0.5);
        assert_eq!(config.train.max_epochs, 50);
        assert_eq!(config.model.max_len, 512);
        assert_eq!(config.train.folds, 5);
    }

    #[test]
    fn parse_round_trips_through_echo() {
        let mut config = RunConfig::default();
        config.data.dataset = Some("synth.jsonl".into());
        config.model.model_dim = 16;
        config.model.fusion = FusionMode::Mix;
        config.train.seed = 99;
        let text = config.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.data.dataset.as_deref(), Some("synth.jsonl"));
        assert_eq!(back.model.model_dim, 16);
        assert_eq!(back.model.fusion, FusionMode::Mix);
        assert_eq!(back.train.seed, 99);
        assert_eq!(back.data.vocabulary, None);
    }

    #[test]
    fn parse_accepts_comments_and_blanks() {
        let text = "# run setup\n\n[model]\nlayers = 3\n\n[train]\nseed = 4\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.model.layers, 3);
        assert_eq!(config.train.seed, 4);
        assert_eq!(config.model.heads, 4);
    }

    #[test]
    fn parse_rejects_unknown_key() {
        let err = RunConfig::parse("[model]\nwidth = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn parse_rejects_unknown_section() {
        assert!(RunConfig::parse("[optimizer]\nlr = 3\n").is_err());
    }

    #[test]
    fn parse_rejects_key_outside_section() {
        assert!(RunConfig::parse("layers = 3\n").is_err());
    }

    #[test]
    fn parse_rejects_bad_number() {
        assert!(RunConfig::parse("[model]\nlayers = many\n").is_err());
    }

    #[test]
    fn model_config_wires_head_dropout_from_train() {
        let mut config = RunConfig::default();
        config.model.max_len = 32;
        config.train.dropout = 0.25;
        let model = config.to_model_config().unwrap();
        assert_eq!(model.head_dropout, 0.25);
        assert_eq!(model.encoder.max_positions, 32);
        assert_eq!(model.max_len, 32);
    }

    #[test]
    fn validate_rejects_zero_learning_rate() {
        let mut config = RunConfig::default();
        config.model.max_len = 32;
        config.train.learning_rate = 0.0;
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }
}
