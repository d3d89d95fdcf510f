//! Supervised training: summed cross-entropy loss over the positive
//! class probability, adaptive-moment optimization, stratified k-fold
//! splits, and the epoch loop itself.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{parse_unified_diff, Label, RawPatch};
use crate::model::{ModelConfig, PatchModel};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::{Mode, ParamSet, Scalar, Tensor};
use crate::tokenizer::{TokenSequence, Vocabulary};

/// Clamp bound keeping the loss finite when a probability saturates.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub folds: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 16,
            dropout: 0.5,
            max_epochs: 50,
            seed: 7,
            folds: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is tolerated as an explicit no-op run;
    /// negative rates and degenerate batch or fold counts are not.
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} is negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds {} is below the minimum of 2",
                self.folds
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Per-item cross-entropy on plain numbers: `s` is the predicted
/// probability of the overfitting class, clamped before the logs.
pub fn cross_entropy(label: Label, s: f64) -> f64 {
    let s = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    match label {
        Label::Overfitting => -s.ln(),
        Label::Correct => -(1.0 - s).ln(),
    }
}

/// Sum-form batch loss: per-item terms are added, never averaged.
pub fn batch_cross_entropy(items: &[(Label, f64)]) -> f64 {
    items
        .iter()
        .map(|&(label, s)| cross_entropy(label, s))
        .sum()
}

/// The same per-item term built from tape operations so it can be
/// differentiated: slice out the positive-class probability, clamp,
/// and take the log branch the label selects.
pub fn cross_entropy_term<S: Scalar>(tape: &mut Tape<S>, probs: Var, label: Label) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape != [1, 2] {
        return Err(Error::Dimension {
            op: "cross_entropy_term",
            lhs: shape,
            rhs: vec![1, 2],
        });
    }
    let s = tape.slice_cols(probs, 1, 2)?;
    let s = tape.clamp(s, S::of(PROB_CLAMP), S::of(1.0 - PROB_CLAMP))?;
    let inside = match label {
        Label::Overfitting => s,
        Label::Correct => {
            let one = tape.constant(Tensor::filled(vec![1, 1], S::one()));
            tape.sub(one, s)?
        }
    };
    let logged = tape.log(inside)?;
    Ok(tape.scale(logged, S::of(-1.0)))
}

/// Adaptive-moment optimizer state: first and second moment
/// accumulators per parameter plus the shared step counter.
pub struct Adam<S: Scalar = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet<S>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(_, p)| {
                    let shape = p.value.shape().to_vec();
                    (Tensor::zeros(shape.clone()), Tensor::zeros(shape))
                })
                .collect();
        }
        self.step += 1;
        let b1 = S::of(self.beta1);
        let b2 = S::of(self.beta2);
        let one_minus_b1 = S::of(1.0 - self.beta1);
        let one_minus_b2 = S::of(1.0 - self.beta2);
        let correction1 = S::of(1.0 - self.beta1.powi(self.step as i32));
        let correction2 = S::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = S::of(self.learning_rate);
        let eps = S::of(self.eps);

        let ids: Vec<_> = params.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let param = params.get_mut(id);
            let (m, v) = &mut self.moments[slot];
            let grads = param.grad.data();
            let m_data = m.data_mut();
            let v_data = v.data_mut();
            let values = param.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m_data[i] = b1 * m_data[i] + one_minus_b1 * g;
                v_data[i] = b2 * v_data[i] + one_minus_b2 * g * g;
                let m_hat = m_data[i] / correction1;
                let v_hat = v_data[i] / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// A stratified partition of dataset indices into `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// Train/test index pairs, one round per fold.
    pub fn rounds(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..self.folds.len())
            .map(|test| {
                let train: Vec<usize> = self
                    .folds
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != test)
                    .flat_map(|(_, fold)| fold.iter().copied())
                    .collect();
                (train, self.folds[test].clone())
            })
            .collect()
    }
}

/// Deterministic stratified split: indices are grouped by label, each
/// group is shuffled with the seeded generator, and the groups are
/// dealt round-robin with a fold cursor that continues across groups.
/// The whole deal is then one contiguous cyclic run, so total fold
/// sizes differ by at most one, and so do per-label counts.
pub fn kfold_split(n: usize, labels: &[Label], k: usize, seed: u64) -> Result<FoldSplit> {
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{} labels for {n} items",
            labels.len()
        )));
    }
    if k < 2 {
        return Err(Error::Config(format!(
            "folds {k} is below the minimum of 2"
        )));
    }
    if k > n {
        return Err(Error::Config(format!(
            "cannot split {n} items into {k} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overfitting = Vec::new();
    let mut correct = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match label {
            Label::Overfitting => overfitting.push(i),
            Label::Correct => correct.push(i),
        }
    }
    overfitting.shuffle(&mut rng);
    correct.shuffle(&mut rng);

    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for group in [overfitting, correct] {
        for index in group {
            folds[cursor].push(index);
            cursor = (cursor + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldSplit { folds })
}

/// One loss-log row: the batch loss after an optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

pub fn loss_log_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.step, r.loss);
    }
    out
}

pub fn write_loss_log(path: &Path, records: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_log_csv(records))?;
    Ok(())
}

pub struct TrainedModel<S: Scalar = f32> {
    pub model: PatchModel<S>,
    pub loss_log: Vec<LossRecord>,
}

/// A dataset item ready for the forward pass.
struct Encoded {
    buggy: TokenSequence,
    patched: TokenSequence,
    label: Label,
}

fn encode_dataset<S: Scalar>(
    model: &PatchModel<S>,
    dataset: &[RawPatch],
    indices: &[usize],
) -> Result<Vec<Encoded>> {
    indices
        .iter()
        .map(|&i| {
            let item = &dataset[i];
            let label = item
                .label
                .ok_or_else(|| Error::Data(format!("item `{}` has no label", item.id)))?;
            let pair = parse_unified_diff(&item.diff_text)?;
            let (buggy, patched) = model.encode_inputs(&pair)?;
            Ok(Encoded {
                buggy,
                patched,
                label,
            })
        })
        .collect()
}

/// Trains a fresh model on `dataset[indices]`. Tokenization happens
/// once up front; every epoch shuffles the items, walks them in
/// mini-batches, and takes one optimizer step per batch on the summed
/// batch loss.
pub fn train<S: Scalar>(
    dataset: &[RawPatch],
    indices: &[usize],
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    train_config: &TrainConfig,
) -> Result<TrainedModel<S>> {
    train_config.validate()?;
    if indices.is_empty() {
        return Err(Error::Data("no items to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut model: PatchModel<S> =
        PatchModel::init_with_rng(model_config.clone(), vocab.clone(), &mut rng)?;
    let items = encode_dataset(&model, dataset, indices)?;

    let mut optimizer = Adam::from_config(train_config);
    let mut loss_log = Vec::new();
    let mut order: Vec<usize> = (0..items.len()).collect();

    for epoch in 0..train_config.max_epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(train_config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let mut total: Option<Var> = None;
            for &item_index in batch {
                let item = &items[item_index];
                let (probs, _) = model.forward_sequences(
                    &mut tape,
                    &item.buggy,
                    &item.patched,
                    Mode::Train,
                    &mut rng,
                )?;
                let term = cross_entropy_term(&mut tape, probs, item.label)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let loss = total.expect("batches are non-empty");
            model.params.zero_grads();
            tape.backward(loss, &mut model.params)?;
            optimizer.step(&mut model.params);
            loss_log.push(LossRecord {
                epoch,
                step,
                loss: tape.value(loss).data()[0].as_f64(),
            });
        }
    }
    Ok(TrainedModel { model, loss_log })
}
