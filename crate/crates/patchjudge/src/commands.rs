//! The operations behind each CLI verb, usable as a library. Every
//! command is deterministic given its inputs, seed, and
//! configuration; exit decisions stay in `main`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::ingest::{deduplicate, parse_unified_diff, read_jsonl, write_jsonl, Label, RawPatch};
use crate::metrics::{MetricsReport, CSV_HEADER};
use crate::model::PatchModel;
use crate::numerics::tape::Tape;
use crate::numerics::Mode;
use crate::synth;
use crate::tokenizer::{build_vocab, Truncation, Vocabulary};
use crate::training::{kfold_split, train, write_loss_log, TrainedModel};

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: usize,
}

fn diff_files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && ["diff", "patch", "jsonl"].contains(&ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn candidate_records(path: &Path) -> Result<Vec<RawPatch>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "jsonl" {
        read_jsonl(path)
    } else {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("patch")
            .to_string();
        Ok(vec![RawPatch {
            id,
            diff_text: fs::read_to_string(path)?,
            label: None,
        }])
    }
}

/// Validates every input diff, writing parsed records to `out` and
/// one reason line per malformed patch to `rejects`. Fails only when
/// nothing survives.
pub fn cmd_ingest(inputs: &[PathBuf], out: &Path, rejects: &Path) -> Result<IngestOutcome> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(diff_files_in(input)?);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Data("no input patches found".into()));
    }

    let mut accepted = Vec::new();
    let mut reject_lines = String::new();
    for file in &files {
        for record in candidate_records(file)? {
            match parse_unified_diff(&record.diff_text) {
                Ok(_) => accepted.push(record),
                Err(reason) => {
                    let _ = writeln!(reject_lines, "{}\t{}", record.id, reason);
                }
            }
        }
    }
    let rejected = reject_lines.lines().count();
    fs::write(rejects, reject_lines)?;
    if accepted.is_empty() {
        return Err(Error::Data(format!(
            "all {rejected} input patches were malformed; see {}",
            rejects.display()
        )));
    }
    write_jsonl(out, &accepted)?;
    Ok(IngestOutcome {
        accepted: accepted.len(),
        rejected,
    })
}

/// Drops whitespace-insensitive duplicate diffs, keeping first
/// occurrences. Returns (kept, dropped).
pub fn cmd_dedup(input: &Path, out: &Path) -> Result<(usize, usize)> {
    let records = read_jsonl(input)?;
    let before = records.len();
    let kept = deduplicate(records);
    let after = kept.len();
    write_jsonl(out, &kept)?;
    Ok((after, before - after))
}

/// Writes the two-family synthetic corpus.
pub fn cmd_synth(n_per_class: usize, seed: u64, out: &Path) -> Result<usize> {
    if n_per_class == 0 {
        return Err(Error::Config("need at least one patch per class".into()));
    }
    let records = synth::generate(n_per_class, seed);
    write_jsonl(out, &records)?;
    Ok(records.len())
}

fn dataset_corpus(records: &[RawPatch]) -> Result<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let pair = parse_unified_diff(&r.diff_text)?;
            Ok(format!("{}\n{}", pair.buggy_text, pair.patched_text))
        })
        .collect()
}

/// Builds a vocabulary over every snippet in the dataset.
pub fn cmd_vocab(dataset: &Path, target_size: usize, out: &Path) -> Result<usize> {
    let records = read_jsonl(dataset)?;
    let corpus = dataset_corpus(&records)?;
    let vocab = build_vocab(&corpus, target_size)?;
    vocab.save(out)?;
    Ok(vocab.len())
}

fn load_dataset(config: &RunConfig) -> Result<Vec<RawPatch>> {
    let path = config
        .data
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset path configured".into()))?;
    let records = read_jsonl(Path::new(path))?;
    if records.is_empty() {
        return Err(Error::Data(format!("dataset {path} is empty")));
    }
    Ok(records)
}

fn resolve_vocab(config: &RunConfig, records: &[RawPatch]) -> Result<Vocabulary> {
    match config.data.vocabulary.as_deref() {
        Some(path) => Vocabulary::load(Path::new(path)),
        None => build_vocab(&dataset_corpus(records)?, config.data.vocab_size),
    }
}

fn require_labels(records: &[RawPatch]) -> Result<Vec<Label>> {
    records
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| Error::Data(format!("item `{}` has no label", r.id)))
        })
        .collect()
}

pub struct TrainOutcome {
    pub model_dir: PathBuf,
    pub final_loss: f64,
    pub steps: usize,
}

/// Trains on the whole labeled dataset and saves the model directory,
/// the loss log, and the effective configuration under `out_dir`.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let records = load_dataset(config)?;
    require_labels(&records)?;
    let vocab = resolve_vocab(config, &records)?;
    let model_config = config.to_model_config()?;
    let indices: Vec<usize> = (0..records.len()).collect();

    fs::create_dir_all(out_dir)?;
    let trained: TrainedModel = train(&records, &indices, &model_config, &vocab, &config.train)?;
    let model_dir = out_dir.join("model");
    trained.model.save(&model_dir)?;
    write_loss_log(&out_dir.join("loss.csv"), &trained.loss_log)?;
    fs::write(out_dir.join("config.txt"), config.to_text())?;
    Ok(TrainOutcome {
        model_dir,
        final_loss: trained.loss_log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        steps: trained.loss_log.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reducer {
    Pooled,
    Averaged,
}

impl std::str::FromStr for Reducer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(Reducer::Pooled),
            "averaged" => Ok(Reducer::Averaged),
            other => Err(Error::Config(format!(
                "unknown reducer `{other}`; expected pooled or averaged"
            ))),
        }
    }
}

pub struct EvaluateOutcome {
    pub per_fold: Vec<MetricsReport>,
    pub aggregate: MetricsReport,
    pub report_path: PathBuf,
}

struct FoldPredictions {
    predicted: Vec<Label>,
    truth: Vec<Label>,
    overfitting_scores: Vec<f64>,
    correct_scores: Vec<f64>,
}

fn predict_fold(
    model: &PatchModel,
    records: &[RawPatch],
    labels: &[Label],
    test: &[usize],
) -> Result<FoldPredictions> {
    let mut fold = FoldPredictions {
        predicted: Vec::new(),
        truth: Vec::new(),
        overfitting_scores: Vec::new(),
        correct_scores: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for &i in test {
        let pair = parse_unified_diff(&records[i].diff_text)?;
        let mut tape = Tape::new();
        let (_, prediction) = model.forward(&mut tape, &pair, Mode::Eval, &mut rng)?;
        fold.predicted.push(prediction.label);
        fold.truth.push(labels[i]);
        match labels[i] {
            Label::Overfitting => fold.overfitting_scores.push(prediction.p_overfitting),
            Label::Correct => fold.correct_scores.push(prediction.p_overfitting),
        }
    }
    Ok(fold)
}

/// K-fold cross-validation: per-fold training and held-out scoring,
/// per-fold reports, an aggregate report under the chosen reducer,
/// and an audit log of fold membership.
pub fn cmd_evaluate(
    config: &RunConfig,
    reducer: Reducer,
    out_dir: &Path,
) -> Result<EvaluateOutcome> {
    config.validate()?;
    let records = load_dataset(config)?;
    let labels = require_labels(&records)?;
    let vocab = resolve_vocab(config, &records)?;
    let model_config = config.to_model_config()?;
    let split = kfold_split(
        records.len(),
        &labels,
        config.train.folds,
        config.train.seed,
    )?;

    fs::create_dir_all(out_dir)?;
    let mut audit = String::from("fold,role,item_id\n");
    let mut per_fold = Vec::new();
    let mut pooled = FoldPredictions {
        predicted: Vec::new(),
        truth: Vec::new(),
        overfitting_scores: Vec::new(),
        correct_scores: Vec::new(),
    };

    for (round, (train_indices, test_indices)) in split.rounds().into_iter().enumerate() {
        for &i in &train_indices {
            let _ = writeln!(audit, "{round},train,{}", records[i].id);
        }
        for &i in &test_indices {
            let _ = writeln!(audit, "{round},test,{}", records[i].id);
        }

        let mut fold_config = config.train.clone();
        fold_config.seed = config.train.seed.wrapping_add(round as u64);
        let trained: TrainedModel = train(
            &records,
            &train_indices,
            &model_config,
            &vocab,
            &fold_config,
        )?;
        write_loss_log(
            &out_dir.join(format!("fold{round}.loss.csv")),
            &trained.loss_log,
        )?;

        let fold = predict_fold(&trained.model, &records, &labels, &test_indices)?;
        let report = MetricsReport::compute(
            &fold.predicted,
            &fold.truth,
            &fold.overfitting_scores,
            &fold.correct_scores,
        )?;
        fs::write(
            out_dir.join(format!("fold{round}.metrics.json")),
            report.to_json(),
        )?;
        per_fold.push(report);

        pooled.predicted.extend(fold.predicted);
        pooled.truth.extend(fold.truth);
        pooled.overfitting_scores.extend(fold.overfitting_scores);
        pooled.correct_scores.extend(fold.correct_scores);
    }

    let aggregate = match reducer {
        Reducer::Pooled => MetricsReport::compute(
            &pooled.predicted,
            &pooled.truth,
            &pooled.overfitting_scores,
            &pooled.correct_scores,
        )?,
        Reducer::Averaged => MetricsReport::average(&per_fold)
            .expect("cross-validation always has at least two folds"),
    };

    let report_path = out_dir.join("report.json");
    fs::write(&report_path, aggregate.to_json())?;
    fs::write(out_dir.join("folds.audit.csv"), audit)?;
    fs::write(out_dir.join("config.txt"), config.to_text())?;
    Ok(EvaluateOutcome {
        per_fold,
        aggregate,
        report_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Truncation,
    Fusion,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncation" => Ok(AblationAxis::Truncation),
            "fusion" => Ok(AblationAxis::Fusion),
            other => Err(Error::Config(format!(
                "unknown ablation axis `{other}`; expected truncation or fusion"
            ))),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Truncation => "truncation",
            AblationAxis::Fusion => "fusion",
        }
    }

    fn options(self) -> Vec<String> {
        match self {
            AblationAxis::Truncation => Truncation::ALL
                .iter()
                .map(|t| t.name().to_string())
                .collect(),
            AblationAxis::Fusion => FusionMode::ALL
                .iter()
                .map(|f| f.name().to_string())
                .collect(),
        }
    }
}

/// Runs one pooled evaluation per option along the chosen axis and
/// collects the rows into a grid CSV.
pub fn cmd_ablate(config: &RunConfig, axis: AblationAxis, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut grid = format!("{},{CSV_HEADER}\n", axis.name());
    for option in axis.options() {
        let mut variant = config.clone();
        match axis {
            AblationAxis::Truncation => variant.model.truncation = option.parse()?,
            AblationAxis::Fusion => variant.model.fusion = option.parse()?,
        }
        let sub_dir = out_dir.join(format!("{}-{option}", axis.name()));
        let outcome = cmd_evaluate(&variant, Reducer::Pooled, &sub_dir)?;
        let _ = writeln!(grid, "{option},{}", outcome.aggregate.to_csv_row());
    }
    let grid_path = out_dir.join(format!("ablate_{}.csv", axis.name()));
    fs::write(&grid_path, grid)?;
    Ok(grid_path)
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictOutcome {
    pub label: Label,
    pub p_overfitting: f64,
}

/// Loads a saved model directory and classifies one diff, returning
/// the JSON line the CLI prints.
pub fn cmd_predict(model_dir: &Path, diff_path: &Path) -> Result<String> {
    let model = PatchModel::<f32>::load(model_dir)?;
    let diff_text = fs::read_to_string(diff_path)?;
    let pair = parse_unified_diff(&diff_text)?;
    let prediction = model.predict(&pair)?;
    let outcome = PredictOutcome {
        label: prediction.label,
        p_overfitting: prediction.p_overfitting,
    };
    Ok(serde_json::to_string(&outcome).expect("prediction serialization cannot fail"))
}
