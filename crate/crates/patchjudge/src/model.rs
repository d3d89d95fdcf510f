//! The end-to-end patch model: encode both snippets, fuse them,
//! run the bidirectional LSTM, and classify. Also owns on-disk
//! persistence: a PJT1 weight container plus a sidecar metadata
//! record and the vocabulary file, stored together in one directory.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Bilstm, Head, Prediction};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionMode};
use crate::ingest::SnippetPair;
use crate::numerics::container;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{Mode, ParamSet, Scalar};
use crate::tokenizer::{TokenSequence, Truncation, Vocabulary};

pub const WEIGHTS_FILE: &str = "params.pjt1";
pub const META_FILE: &str = "model.meta";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Everything needed to rebuild the network shape: encoder dims,
/// fusion and truncation choices, the token budget, and the
/// classifier stack. The LSTM hidden size per direction is fixed at
/// half the model dimension.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub fusion: FusionMode,
    pub truncation: Truncation,
    pub max_len: usize,
    pub lstm_layers: usize,
    pub head_dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.model_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be even to split the LSTM directions",
                self.encoder.model_dim
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for [CLS]/[SEP]",
                self.max_len
            )));
        }
        if self.max_len > self.encoder.max_positions {
            return Err(Error::Config(format!(
                "max_len {} exceeds the encoder's {} positions",
                self.max_len, self.encoder.max_positions
            )));
        }
        if self.lstm_layers == 0 {
            return Err(Error::Config("lstm_layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!(
                "head_dropout {} outside [0, 1)",
                self.head_dropout
            )));
        }
        Ok(())
    }

    pub fn lstm_hidden(&self) -> usize {
        self.encoder.model_dim / 2
    }
}

/// A complete, runnable model: configuration, vocabulary, and one
/// parameter set shared by all stages.
pub struct PatchModel<S: Scalar = f32> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamSet<S>,
    encoder: Encoder,
    bilstm: Bilstm,
    head: Head,
}

impl<S: Scalar> PatchModel<S> {
    /// Fresh random initialization, deterministic per seed.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(config, vocab, &mut rng)
    }

    pub fn init_with_rng<R: Rng>(
        config: ModelConfig,
        vocab: Vocabulary,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let mut params = ParamSet::new();
        let encoder = Encoder::init(&mut params, config.encoder.clone(), vocab.len(), rng)?;
        let hidden = config.lstm_hidden();
        let in_width = config.fusion.output_width(config.encoder.model_dim);
        let bilstm = Bilstm::init(&mut params, in_width, hidden, config.lstm_layers, rng)?;
        let head = Head::init(&mut params, 2 * hidden, hidden, config.head_dropout, rng)?;
        Ok(PatchModel {
            config,
            vocab,
            params,
            encoder,
            bilstm,
            head,
        })
    }

    /// Tokenizes and encodes both sides of a pair with the model's
    /// truncation strategy and token budget.
    pub fn encode_inputs(&self, pair: &SnippetPair) -> Result<(TokenSequence, TokenSequence)> {
        self.vocab
            .encode_pair(pair, self.config.truncation, self.config.max_len)
    }

    /// Forward pass over pre-tokenized sequences. The fused sequence
    /// is masked by the union of the two sides' masks, so the
    /// recurrence sees every position where either side has content.
    pub fn forward_sequences<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        buggy: &TokenSequence,
        patched: &TokenSequence,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Prediction)> {
        if buggy.ids.len() != patched.ids.len() {
            return Err(Error::Data(format!(
                "buggy and patched sequences differ in length: {} vs {}",
                buggy.ids.len(),
                patched.ids.len()
            )));
        }
        let hb = self.encoder.encode(tape, &self.params, buggy, mode, rng)?;
        let hp = self
            .encoder
            .encode(tape, &self.params, patched, mode, rng)?;
        let fused = fuse(tape, hb, hp, self.config.fusion)?;
        let union_mask: Vec<u8> = buggy
            .mask
            .iter()
            .zip(&patched.mask)
            .map(|(&a, &b)| a | b)
            .collect();
        let z_last = self.bilstm.run(tape, &self.params, fused, &union_mask)?;
        self.head.classify(tape, &self.params, z_last, mode, rng)
    }

    /// Full forward pass from raw snippet text.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<S>,
        pair: &SnippetPair,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Prediction)> {
        let (buggy, patched) = self.encode_inputs(pair)?;
        self.forward_sequences(tape, &buggy, &patched, mode, rng)
    }

    /// Deterministic eval-mode prediction for one pair.
    pub fn predict(&self, pair: &SnippetPair) -> Result<Prediction> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, prediction) = self.forward(&mut tape, pair, Mode::Eval, &mut rng)?;
        Ok(prediction)
    }

    /// Writes the weight container, sidecar metadata, and vocabulary
    /// into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        container::save_params(&dir.join(WEIGHTS_FILE), &self.params)?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        fs::write(dir.join(META_FILE), self.meta_text())?;
        Ok(())
    }

    fn meta_text(&self) -> String {
        let c = &self.config;
        let e = &c.encoder;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("format", "patchjudge-model-v1".into());
        line("layers", e.layers.to_string());
        line("heads", e.heads.to_string());
        line("model_dim", e.model_dim.to_string());
        line("ffn_dim", e.ffn_dim.to_string());
        line("max_positions", e.max_positions.to_string());
        line("attn_dropout", e.attn_dropout.to_string());
        line("hidden_dropout", e.hidden_dropout.to_string());
        line("fusion", c.fusion.name().into());
        line("truncation", c.truncation.name().into());
        line("max_len", c.max_len.to_string());
        line("lstm_layers", c.lstm_layers.to_string());
        line("head_dropout", c.head_dropout.to_string());
        line("vocab", VOCAB_FILE.into());
        line("vocab_size", self.vocab.len().to_string());
        out
    }

    /// Loads a model saved by [`PatchModel::save`], verifying that
    /// the vocabulary and every tensor match the sidecar's dims.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path)?;
        let meta = parse_meta(&text)?;

        let vocab = Vocabulary::load(&dir.join(&meta.vocab_file))?;
        if vocab.len() != meta.vocab_size {
            return Err(Error::ModelLoad(format!(
                "vocabulary has {} entries but the sidecar records {}",
                vocab.len(),
                meta.vocab_size
            )));
        }

        let mut model = PatchModel::init(meta.config, vocab, 0)?;
        container::load_params(&dir.join(WEIGHTS_FILE), &mut model.params)?;
        Ok(model)
    }
}

struct Meta {
    config: ModelConfig,
    vocab_file: String,
    vocab_size: usize,
}

fn parse_meta(text: &str) -> Result<Meta> {
    let mut pairs = std::collections::HashMap::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::ModelLoad(format!("sidecar line {}: expected key = value", number + 1))
        })?;
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }

    let get = |key: &str| {
        pairs
            .get(key)
            .cloned()
            .ok_or_else(|| Error::ModelLoad(format!("sidecar is missing `{key}`")))
    };
    let usize_of = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::ModelLoad(format!("sidecar `{key}` is not an integer")))
    };
    let f64_of = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::ModelLoad(format!("sidecar `{key}` is not a number")))
    };

    let format = get("format")?;
    if format != "patchjudge-model-v1" {
        return Err(Error::ModelLoad(format!(
            "unknown sidecar format `{format}`"
        )));
    }
    let config = ModelConfig {
        encoder: EncoderConfig {
            layers: usize_of("layers")?,
            heads: usize_of("heads")?,
            model_dim: usize_of("model_dim")?,
            ffn_dim: usize_of("ffn_dim")?,
            max_positions: usize_of("max_positions")?,
            attn_dropout: f64_of("attn_dropout")?,
            hidden_dropout: f64_of("hidden_dropout")?,
        },
        fusion: get("fusion")?.parse()?,
        truncation: get("truncation")?.parse()?,
        max_len: usize_of("max_len")?,
        lstm_layers: usize_of("lstm_layers")?,
        head_dropout: f64_of("head_dropout")?,
    };
    Ok(Meta {
        config,
        vocab_file: get("vocab")?,
        vocab_size: usize_of("vocab_size")?,
    })
}
