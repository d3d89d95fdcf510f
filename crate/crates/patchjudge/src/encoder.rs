//! Transformer encoder: learned token and position embeddings, a
//! stack of post-norm blocks with multi-head scaled dot-product
//! self-attention and a ReLU feed-forward layer, emitting one hidden
//! state per token position.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{Mode, ParamId, ParamSet, Scalar, Tensor};
use crate::tokenizer::TokenSequence;

const INIT_STD: f64 = 0.02;
const MASK_LOGIT: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub attn_dropout: f64,
    pub hidden_dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "heads, model_dim, and ffn_dim must be positive".into(),
            ));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        for (name, rate) in [
            ("attn_dropout", self.attn_dropout),
            ("hidden_dropout", self.hidden_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    scale: ParamId,
    shift: ParamId,
}

#[derive(Clone, Debug)]
struct LayerIds {
    wq: Affine,
    wk: Affine,
    wv: Affine,
    wo: Affine,
    ff1: Affine,
    ff2: Affine,
    ln1: Norm,
    ln2: Norm,
}

/// Parameter handles and configuration for the encoder stack.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    vocab_size: usize,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
}

fn affine<S: Scalar, R: Rng>(
    params: &mut ParamSet<S>,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Affine> {
    let weight = params.add(
        format!("{name}.weight"),
        Tensor::random_normal(vec![rows, cols], INIT_STD, rng),
    )?;
    let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![cols]))?;
    Ok(Affine { weight, bias })
}

fn norm<S: Scalar>(params: &mut ParamSet<S>, name: &str, dim: usize) -> Result<Norm> {
    let scale = params.add(format!("{name}.scale"), Tensor::filled(vec![dim], S::one()))?;
    let shift = params.add(format!("{name}.shift"), Tensor::zeros(vec![dim]))?;
    Ok(Norm { scale, shift })
}

impl Encoder {
    /// Registers all encoder parameters: weights from normal(0, 0.02),
    /// biases zero, layer-norm scales one.
    pub fn init<S: Scalar, R: Rng>(
        params: &mut ParamSet<S>,
        config: EncoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Encoder> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let d = config.model_dim;
        let tok_emb = params.add(
            "enc.tok_emb",
            Tensor::random_normal(vec![vocab_size, d], INIT_STD, rng),
        )?;
        let pos_emb = params.add(
            "enc.pos_emb",
            Tensor::random_normal(vec![config.max_positions, d], INIT_STD, rng),
        )?;
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = format!("enc.layer{i}");
            layers.push(LayerIds {
                wq: affine(params, &format!("{p}.wq"), d, d, rng)?,
                wk: affine(params, &format!("{p}.wk"), d, d, rng)?,
                wv: affine(params, &format!("{p}.wv"), d, d, rng)?,
                wo: affine(params, &format!("{p}.wo"), d, d, rng)?,
                ff1: affine(params, &format!("{p}.ff1"), d, config.ffn_dim, rng)?,
                ff2: affine(params, &format!("{p}.ff2"), config.ffn_dim, d, rng)?,
                ln1: norm(params, &format!("{p}.ln1"), d)?,
                ln2: norm(params, &format!("{p}.ln2"), d)?,
            });
        }
        Ok(Encoder {
            config,
            vocab_size,
            tok_emb,
            pos_emb,
            layers,
        })
    }

    /// Token embedding plus position embedding for every position,
    /// PAD included; hidden dropout in train mode.
    pub fn embed<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        ids: &[u32],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        if ids.len() > self.config.max_positions {
            return Err(Error::Data(format!(
                "sequence length {} exceeds max_positions {}",
                ids.len(),
                self.config.max_positions
            )));
        }
        let tok = tape.param(params, self.tok_emb);
        let pos = tape.param(params, self.pos_emb);
        let indices: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
        let tok_rows = tape.gather(tok, &indices)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos_rows = tape.gather(pos, &positions)?;
        let summed = tape.add(tok_rows, pos_rows)?;
        tape.dropout(summed, self.config.hidden_dropout, mode, rng)
    }

    fn affine_map<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        x: Var,
        map: Affine,
    ) -> Result<Var> {
        let w = tape.param(params, map.weight);
        let b = tape.param(params, map.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    /// Multi-head self-attention with its per-head pre-dropout
    /// probability matrices, for inspection.
    pub fn attention_with_probs<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        layer: usize,
        x: Var,
        mask: &[u8],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Vec<Var>)> {
        let ids = &self.layers[layer];
        let t = tape.shape(x)[0];
        if mask.len() != t {
            return Err(Error::Data(format!(
                "mask length {} does not match sequence length {t}",
                mask.len()
            )));
        }
        if mask.iter().all(|&m| m == 0) {
            return Err(Error::Data("attention over a fully masked sequence".into()));
        }

        let q_full = self.affine_map(tape, params, x, ids.wq)?;
        let k_full = self.affine_map(tape, params, x, ids.wk)?;
        let v_full = self.affine_map(tape, params, x, ids.wv)?;

        let mut bias = Tensor::zeros(vec![t, t]);
        for i in 0..t {
            for (j, &m) in mask.iter().enumerate() {
                if m == 0 {
                    bias.data_mut()[i * t + j] = S::of(MASK_LOGIT);
                }
            }
        }
        let bias = tape.constant(bias);

        let dk = self.config.head_dim();
        let inv_sqrt = S::of(1.0 / (dk as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut probs_per_head = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let lo = h * dk;
            let hi = lo + dk;
            let q = tape.slice_cols(q_full, lo, hi)?;
            let k = tape.slice_cols(k_full, lo, hi)?;
            let v = tape.slice_cols(v_full, lo, hi)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scaled = tape.scale(scores, inv_sqrt);
            let masked = tape.add(scaled, bias)?;
            let probs = tape.softmax_rows(masked)?;
            probs_per_head.push(probs);
            let dropped = tape.dropout(probs, self.config.attn_dropout, mode, rng)?;
            heads.push(tape.matmul(dropped, v)?);
        }
        let joined = tape.concat_cols(&heads)?;
        let out = self.affine_map(tape, params, joined, ids.wo)?;
        Ok((out, probs_per_head))
    }

    pub fn attention<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        layer: usize,
        x: Var,
        mask: &[u8],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        Ok(self
            .attention_with_probs(tape, params, layer, x, mask, mode, rng)?
            .0)
    }

    fn layer_norm<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        x: Var,
        ln: Norm,
    ) -> Result<Var> {
        let scale = tape.param(params, ln.scale);
        let shift = tape.param(params, ln.shift);
        tape.layer_norm(x, scale, shift, S::of(LN_EPS))
    }

    /// One post-norm block: LN(X + attention(X)), then
    /// LN(Y + FFN(Y)) with a ReLU between the FFN's affine maps.
    pub fn block<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        layer: usize,
        x: Var,
        mask: &[u8],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let ids = &self.layers[layer];
        let attended = self.attention(tape, params, layer, x, mask, mode, rng)?;
        let residual = tape.add(x, attended)?;
        let y = self.layer_norm(tape, params, residual, ids.ln1)?;

        let hidden = self.affine_map(tape, params, y, ids.ff1)?;
        let activated = tape.relu(hidden);
        let ffn = self.affine_map(tape, params, activated, ids.ff2)?;
        let ffn = tape.dropout(ffn, self.config.hidden_dropout, mode, rng)?;
        let residual2 = tape.add(y, ffn)?;
        self.layer_norm(tape, params, residual2, ids.ln2)
    }

    /// Embeds a sequence and runs every block, returning one hidden
    /// state per position, `[max_len x d]`.
    pub fn encode<S: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        seq: &TokenSequence,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut x = self.embed(tape, params, &seq.ids, mode, rng)?;
        for layer in 0..self.layers.len() {
            x = self.block(tape, params, layer, x, &seq.mask, mode, rng)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_config(layers: usize) -> EncoderConfig {
        EncoderConfig {
            layers,
            heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            max_positions: 8,
            attn_dropout: 0.1,
            hidden_dropout: 0.1,
        }
    }

    fn seq(ids: Vec<u32>, real_len: usize) -> TokenSequence {
        let mask = (0..ids.len()).map(|i| u8::from(i < real_len)).collect();
        TokenSequence {
            ids,
            mask,
            real_len,
        }
    }

    fn build(layers: usize) -> (ParamSet<f64>, Encoder, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        let enc = Encoder::init(&mut params, micro_config(layers), 16, &mut rng).unwrap();
        (params, enc, rng)
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let mut config = micro_config(1);
        config.heads = 3;
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn encode_shape_is_maxlen_by_d() {
        let (params, enc, mut rng) = build(2);
        let mut tape = Tape::new();
        let out = enc
            .encode(
                &mut tape,
                &params,
                &seq(vec![2, 5, 3, 0], 3),
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        assert_eq!(tape.shape(out), &[4, 8]);
    }

    #[test]
    fn zero_layers_returns_embeddings() {
        let (params, enc, mut rng) = build(0);
        let s = seq(vec![2, 5, 3, 0], 3);
        let mut tape = Tape::new();
        let embedded = enc
            .embed(&mut tape, &params, &s.ids, Mode::Eval, &mut rng)
            .unwrap();
        let encoded = enc
            .encode(&mut tape, &params, &s, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(tape.value(embedded), tape.value(encoded));
    }

    #[test]
    fn embed_rejects_out_of_vocab_id() {
        let (params, enc, mut rng) = build(1);
        let mut tape = Tape::new();
        assert!(matches!(
            enc.embed(&mut tape, &params, &[99], Mode::Eval, &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn attention_rejects_fully_masked() {
        let (params, enc, mut rng) = build(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 8]));
        assert!(matches!(
            enc.attention(&mut tape, &params, 0, x, &[0, 0, 0], Mode::Eval, &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn single_position_attention_is_value_projection() {
        let (params, enc, mut rng) = build(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::random_normal(vec![1, 8], 1.0, &mut rng));
        let out = enc
            .attention(&mut tape, &params, 0, x, &[1], Mode::Eval, &mut rng)
            .unwrap();

        let wv = tape.param(&params, enc.layers[0].wv.weight);
        let bv = tape.param(&params, enc.layers[0].wv.bias);
        let wo = tape.param(&params, enc.layers[0].wo.weight);
        let bo = tape.param(&params, enc.layers[0].wo.bias);
        let v = tape.matmul(x, wv).unwrap();
        let v = tape.add_row(v, bv).unwrap();
        let expect = tape.matmul(v, wo).unwrap();
        let expect = tape.add_row(expect, bo).unwrap();

        for (a, b) in tape.value(out).data().iter().zip(tape.value(expect).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_ignore_masked() {
        let (params, enc, mut rng) = build(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::random_normal(vec![4, 8], 1.0, &mut rng));
        let (_, probs) = enc
            .attention_with_probs(
                &mut tape,
                &params,
                0,
                x,
                &[1, 1, 1, 0],
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        for head in probs {
            let p = tape.value(head);
            for i in 0..4 {
                let row_sum: f64 = (0..4).map(|j| p.at(i, j)).sum();
                assert!((row_sum - 1.0).abs() < 1e-6);
                assert!(p.at(i, 3) < 1e-6, "masked key attended: {}", p.at(i, 3));
            }
        }
    }

    #[test]
    fn zero_weight_block_is_double_layer_norm() {
        let (mut params, enc, mut rng) = build(1);
        for name in [
            "enc.layer0.wq.weight",
            "enc.layer0.wk.weight",
            "enc.layer0.wv.weight",
            "enc.layer0.wo.weight",
            "enc.layer0.ff1.weight",
            "enc.layer0.ff2.weight",
        ] {
            let shape = params
                .get(params.id_of(name).unwrap())
                .value
                .shape()
                .to_vec();
            params.set_value(name, Tensor::zeros(shape)).unwrap();
        }

        let mut tape = Tape::new();
        let x = tape.constant(Tensor::random_normal(vec![3, 8], 1.0, &mut rng));
        let out = enc
            .block(&mut tape, &params, 0, x, &[1, 1, 1], Mode::Eval, &mut rng)
            .unwrap();

        let scale = tape.constant(Tensor::filled(vec![8], 1.0));
        let shift = tape.constant(Tensor::zeros(vec![8]));
        let once = tape.layer_norm(x, scale, shift, LN_EPS).unwrap();
        let twice = tape.layer_norm(once, scale, shift, LN_EPS).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(twice).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pad_token_identity_does_not_leak() {
        let (params, enc, mut rng) = build(2);
        let mut tape = Tape::new();
        let a = enc
            .encode(
                &mut tape,
                &params,
                &seq(vec![2, 5, 0, 0], 2),
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        let b = enc
            .encode(
                &mut tape,
                &params,
                &seq(vec![2, 5, 9, 7], 2),
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        let av = tape.value(a);
        let bv = tape.value(b);
        for i in 0..2 {
            for j in 0..8 {
                assert!((av.at(i, j) - bv.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_covariant_without_positions() {
        let (mut params, enc, mut rng) = build(1);
        params
            .set_value("enc.pos_emb", Tensor::zeros(vec![8, 8]))
            .unwrap();

        let mut tape = Tape::new();
        let original = enc
            .encode(
                &mut tape,
                &params,
                &seq(vec![4, 5, 6], 3),
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        let permuted = enc
            .encode(
                &mut tape,
                &params,
                &seq(vec![6, 4, 5], 3),
                Mode::Eval,
                &mut rng,
            )
            .unwrap();
        let ov = tape.value(original);
        let pv = tape.value(permuted);
        let perm = [2usize, 0, 1];
        for (dst, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((ov.at(src, j) - pv.at(dst, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (params, enc, _) = build(2);
        let s = seq(vec![2, 5, 3, 0], 3);
        let mut values = Vec::new();
        for seed in [1u64, 2] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::new();
            let out = enc
                .encode(&mut tape, &params, &s, Mode::Eval, &mut rng)
                .unwrap();
            values.push(tape.value(out).data().to_vec());
        }
        assert_eq!(values[0], values[1]);
    }

    #[test]
    fn train_mode_dropout_uses_rng() {
        let (params, enc, _) = build(1);
        let s = seq(vec![2, 5, 3, 0], 3);
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let a = enc
            .encode(&mut tape, &params, &s, Mode::Train, &mut rng_a)
            .unwrap();
        let b = enc
            .encode(&mut tape, &params, &s, Mode::Train, &mut rng_b)
            .unwrap();
        assert_ne!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn parameter_names_follow_container_scheme() {
        let (params, _, _) = build(2);
        for name in [
            "enc.tok_emb",
            "enc.pos_emb",
            "enc.layer0.wq.weight",
            "enc.layer0.wq.bias",
            "enc.layer1.ff2.bias",
            "enc.layer1.ln2.shift",
        ] {
            assert!(params.id_of(name).is_some(), "missing {name}");
        }
    }
}
