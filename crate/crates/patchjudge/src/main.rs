use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use patchjudge::commands::{
    cmd_ablate, cmd_dedup, cmd_evaluate, cmd_ingest, cmd_predict, cmd_synth, cmd_train, cmd_vocab,
    AblationAxis, Reducer,
};
use patchjudge::config::RunConfig;
use patchjudge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "patchjudge",
    version,
    about = "Predict whether program patches are correct or overfitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the run-configuration keys; anything set here
/// overrides the config file.
#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value sections)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Output directory (also settable per-command via --out-dir)
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    model_dim: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    attn_dropout: Option<f64>,
    #[arg(long)]
    hidden_dropout: Option<f64>,
    /// con, add, sub, pro, or mix
    #[arg(long)]
    fusion: Option<String>,
    /// head, tail, mid, or hybrid
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    lstm_layers: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let path_string = |p: &PathBuf| p.to_string_lossy().into_owned();
        let mut overrides: Vec<(&str, &str, String)> = Vec::new();
        if let Some(v) = &self.dataset {
            overrides.push(("data", "dataset", path_string(v)));
        }
        if let Some(v) = &self.vocabulary {
            overrides.push(("data", "vocabulary", path_string(v)));
        }
        if let Some(v) = self.vocab_size {
            overrides.push(("data", "vocab_size", v.to_string()));
        }
        if let Some(v) = &self.output {
            overrides.push(("data", "output", path_string(v)));
        }
        if let Some(v) = self.layers {
            overrides.push(("model", "layers", v.to_string()));
        }
        if let Some(v) = self.heads {
            overrides.push(("model", "heads", v.to_string()));
        }
        if let Some(v) = self.model_dim {
            overrides.push(("model", "model_dim", v.to_string()));
        }
        if let Some(v) = self.ffn_dim {
            overrides.push(("model", "ffn_dim", v.to_string()));
        }
        if let Some(v) = self.max_len {
            overrides.push(("model", "max_len", v.to_string()));
        }
        if let Some(v) = self.attn_dropout {
            overrides.push(("model", "attn_dropout", v.to_string()));
        }
        if let Some(v) = self.hidden_dropout {
            overrides.push(("model", "hidden_dropout", v.to_string()));
        }
        if let Some(v) = &self.fusion {
            overrides.push(("model", "fusion", v.clone()));
        }
        if let Some(v) = &self.truncation {
            overrides.push(("model", "truncation", v.clone()));
        }
        if let Some(v) = self.lstm_layers {
            overrides.push(("model", "lstm_layers", v.to_string()));
        }
        if let Some(v) = self.learning_rate {
            overrides.push(("train", "learning_rate", v.to_string()));
        }
        if let Some(v) = self.batch_size {
            overrides.push(("train", "batch_size", v.to_string()));
        }
        if let Some(v) = self.dropout {
            overrides.push(("train", "dropout", v.to_string()));
        }
        if let Some(v) = self.max_epochs {
            overrides.push(("train", "max_epochs", v.to_string()));
        }
        if let Some(v) = self.seed {
            overrides.push(("train", "seed", v.to_string()));
        }
        if let Some(v) = self.folds {
            overrides.push(("train", "folds", v.to_string()));
        }
        if let Some(v) = self.beta1 {
            overrides.push(("train", "beta1", v.to_string()));
        }
        if let Some(v) = self.beta2 {
            overrides.push(("train", "beta2", v.to_string()));
        }
        if let Some(v) = self.eps {
            overrides.push(("train", "eps", v.to_string()));
        }
        for (section, key, value) in overrides {
            config.set(section, key, &value)?;
        }
        Ok(config)
    }

    fn out_dir(&self, flag: &Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
        if let Some(dir) = flag {
            return Ok(dir.clone());
        }
        if let Some(dir) = &config.data.output {
            return Ok(PathBuf::from(dir));
        }
        Err(Error::Config(
            "no output directory; pass --out-dir or set [data] output".into(),
        ))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw diffs or JSONL into a validated dataset
    Ingest {
        /// Diff files, JSONL files, or directories of them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where rejected patches and reasons go (default: <out>.rejects)
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Drop duplicate diffs, ignoring whitespace
    Dedup {
        #[arg(long, value_name = "IN")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the labeled synthetic corpus
    Synth {
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a subword vocabulary from a dataset
    Vocab {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the full dataset and save the model
    Train {
        #[command(flatten)]
        settings: ConfigArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// K-fold cross-validation with per-fold and aggregate reports
    Evaluate {
        #[command(flatten)]
        settings: ConfigArgs,
        /// pooled (one report over all held-out predictions) or
        /// averaged (mean of per-fold metrics)
        #[arg(long, default_value = "pooled")]
        reducer: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate every option along one axis into a grid CSV
    Ablate {
        #[command(flatten)]
        settings: ConfigArgs,
        /// truncation or fusion
        #[arg(long)]
        axis: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Classify one diff with a saved model
    Predict {
        /// Model directory written by `train`
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        diff: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            inputs,
            out,
            rejects,
        } => {
            let rejects = rejects.unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".rejects");
                PathBuf::from(p)
            });
            let outcome = cmd_ingest(&inputs, &out, &rejects)?;
            println!(
                "ingested {} patches to {} ({} rejected; reasons in {})",
                outcome.accepted,
                out.display(),
                outcome.rejected,
                rejects.display()
            );
        }
        Command::Dedup { input, out } => {
            let (kept, dropped) = cmd_dedup(&input, &out)?;
            println!("kept {kept} patches, dropped {dropped} duplicates");
        }
        Command::Synth {
            per_class,
            seed,
            out,
        } => {
            let count = cmd_synth(per_class, seed, &out)?;
            println!("wrote {count} synthetic patches to {}", out.display());
        }
        Command::Vocab { dataset, size, out } => {
            let count = cmd_vocab(&dataset, size, &out)?;
            println!("wrote {count} vocabulary entries to {}", out.display());
        }
        Command::Train { settings, out_dir } => {
            let config = settings.resolve()?;
            let out = settings.out_dir(&out_dir, &config)?;
            let outcome = cmd_train(&config, &out)?;
            println!(
                "trained for {} steps (final batch loss {:.6}); model in {}",
                outcome.steps,
                outcome.final_loss,
                outcome.model_dir.display()
            );
        }
        Command::Evaluate {
            settings,
            reducer,
            out_dir,
        } => {
            let config = settings.resolve()?;
            let out = settings.out_dir(&out_dir, &config)?;
            let reducer: Reducer = reducer.parse()?;
            let outcome = cmd_evaluate(&config, reducer, &out)?;
            println!("{}", outcome.aggregate.to_json());
            println!("reports in {}", out.display());
        }
        Command::Ablate {
            settings,
            axis,
            out_dir,
        } => {
            let config = settings.resolve()?;
            let out = settings.out_dir(&out_dir, &config)?;
            let axis: AblationAxis = axis.parse()?;
            let grid = cmd_ablate(&config, axis, &out)?;
            print!("{}", std::fs::read_to_string(&grid)?);
            println!("grid written to {}", grid.display());
        }
        Command::Predict { model, diff } => {
            println!("{}", cmd_predict(&model, &diff)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_values() {
        let args = ConfigArgs {
            config: None,
            dataset: Some(PathBuf::from("d.jsonl")),
            vocabulary: None,
            vocab_size: None,
            output: None,
            layers: Some(3),
            heads: None,
            model_dim: None,
            ffn_dim: None,
            max_len: None,
            attn_dropout: None,
            hidden_dropout: None,
            fusion: Some("mix".into()),
            truncation: None,
            lstm_layers: None,
            learning_rate: Some(0.001),
            batch_size: None,
            dropout: None,
            max_epochs: None,
            seed: Some(42),
            folds: None,
            beta1: None,
            beta2: None,
            eps: None,
        };
        let config = args.resolve().unwrap();
        assert_eq!(config.data.dataset.as_deref(), Some("d.jsonl"));
        assert_eq!(config.model.layers, 3);
        assert_eq!(config.train.seed, 42);
        assert_eq!(config.train.learning_rate, 0.001);
    }

    #[test]
    fn out_dir_falls_back_to_config() {
        let args = ConfigArgs {
            config: None,
            dataset: None,
            vocabulary: None,
            vocab_size: None,
            output: None,
            layers: None,
            heads: None,
            model_dim: None,
            ffn_dim: None,
            max_len: None,
            attn_dropout: None,
            hidden_dropout: None,
            fusion: None,
            truncation: None,
            lstm_layers: None,
            learning_rate: None,
            batch_size: None,
            dropout: None,
            max_epochs: None,
            seed: None,
            folds: None,
            beta1: None,
            beta2: None,
            eps: None,
        };
        let mut config = RunConfig::default();
        assert!(args.out_dir(&None, &config).is_err());
        config.data.output = Some("results".into());
        assert_eq!(args.out_dir(&None, &config).unwrap(), Path::new("results"));
        assert_eq!(
            args.out_dir(&Some(PathBuf::from("flag")), &config).unwrap(),
            Path::new("flag")
        );
    }
}
