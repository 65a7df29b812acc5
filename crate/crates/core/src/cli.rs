//! `sgtb gen | train | predict | eval`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, write_file, Dataset};
use crate::ensemble::Model;
use crate::error::{Error, Result};
use crate::search::{SearchConfig, Strategy};
use crate::synthetic::{generate, SynthConfig};
use crate::trainer::{accuracy, predict, train, TrainConfig};
use crate::tree::TreeParams;

#[derive(Debug, Parser)]
#[command(
    name = "sgtb",
    version,
    about = "Collective entity disambiguation with structured gradient tree boosting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/dev/test corpus and its pairwise store.
    Gen(GenArgs),
    /// Fit a boosted ensemble and write the model and a JSONL report.
    Train(TrainArgs),
    /// Decode a corpus and write one prediction record per mention.
    Predict(PredictArgs),
    /// Score a prediction file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 8)]
    pub mentions: usize,
    #[arg(long, default_value_t = 5)]
    pub candidates: usize,
    #[arg(long, default_value_t = 4)]
    pub d_local: usize,
    #[arg(long, default_value_t = 2)]
    pub d_pair: usize,
    #[arg(long, default_value_t = 0.6)]
    pub local_signal: f64,
    #[arg(long, default_value_t = 2.0)]
    pub coherence: f64,
    #[arg(long)]
    pub future_informative: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Pairwise store; without it every pairwise lookup is zero.
    #[arg(long)]
    pub pairwise: Option<PathBuf>,
    #[arg(long, default_value = "bibsg")]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    #[arg(long, default_value_t = 2)]
    pub bibsg_rounds: usize,
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 25)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "model.json")]
    pub model_out: PathBuf,
    #[arg(long, default_value = "report.jsonl")]
    pub report_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pairwise: Option<PathBuf>,
    /// Overrides the strategy stored in the model.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Overrides the beam width stored in the model.
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub mention_id: String,
    pub predicted: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub n_mentions: usize,
    pub n_correct: usize,
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sgtb: {e}");
            1
        }
    }
}

pub fn run(command: Command, stdout: &mut impl Write) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, stdout),
        Command::Train(a) => cmd_train(&a, stdout),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => {
            let summary = cmd_evaluate(&a.predictions)?;
            writeln!(
                stdout,
                "{}",
                serde_json::to_string(&summary).expect("summary serializes")
            )
            .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn cmd_gen(a: &GenArgs, stdout: &mut impl Write) -> Result<()> {
    let config = SynthConfig {
        n_train: a.n_train,
        n_dev: a.n_dev,
        n_test: a.n_test,
        mentions: a.mentions,
        candidates: a.candidates,
        d_local: a.d_local,
        d_pair: a.d_pair,
        local_signal: a.local_signal,
        coherence_strength: a.coherence,
        future_informative: a.future_informative,
        seed: a.seed,
    };
    generate(&config)?.save(&a.out)?;
    writeln!(stdout, "wrote corpus to {}", a.out.display()).map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut impl Write) -> Result<()> {
    let config = TrainConfig {
        max_epochs: a.epochs,
        eval_every: a.eval_every,
        search: SearchConfig {
            strategy: a.strategy,
            beam_width: a.beam,
            bibsg_rounds: a.bibsg_rounds,
        },
        tree: TreeParams {
            max_depth: a.max_depth,
            min_leaf: a.min_leaf,
        },
        eta: a.eta,
        workers: a.workers,
        seed: a.seed,
    };
    config.validate()?;
    let train_set = load_dataset(&a.train, a.pairwise.as_deref())?;
    // Dev shares the train store so both splits see the same pairwise vectors.
    let dev_set = crate::data::load_corpus_with(&a.dev, Some(train_set.pairwise.clone()))?;
    let (ensemble, report) = train(&train_set, &dev_set, &config)?;
    Model {
        ensemble,
        search: config.search,
    }
    .save(&a.model_out)?;
    report.save(&a.report_out)?;
    writeln!(
        stdout,
        "best epoch {} dev accuracy {}",
        report.best_epoch, report.best_dev_accuracy
    )
    .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let mut search = model.search;
    if let Some(s) = a.strategy {
        search.strategy = s;
    }
    if let Some(b) = a.beam {
        search.beam_width = b;
    }
    let data = load_dataset(&a.input, a.pairwise.as_deref())?;
    let records = prediction_records(&model, &data, &search)?;
    write_file(&a.output, |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// One record per mention, in document order.
pub fn prediction_records(model: &Model, data: &Dataset, search: &SearchConfig) -> Result<Vec<PredictionRecord>> {
    let decoded = predict(&model.ensemble, data, search)?;
    let mut out = Vec::with_capacity(data.n_mentions());
    for (doc, assignment) in data.documents.iter().zip(decoded) {
        for (m, c) in doc.mentions.iter().zip(assignment) {
            let predicted = m.candidates[c].entity_id.clone();
            let gold = m.gold().entity_id.clone();
            out.push(PredictionRecord {
                doc_id: doc.doc_id.clone(),
                mention_id: m.mention_id.clone(),
                correct: predicted == gold,
                predicted,
                gold: Some(gold),
            });
        }
    }
    Ok(out)
}

pub fn cmd_evaluate(path: &Path) -> Result<EvalSummary> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut n_mentions = 0usize;
    let mut n_correct = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let gold = rec.gold.as_ref().ok_or_else(|| parse_err("missing gold".into()))?;
        n_mentions += 1;
        n_correct += usize::from(*gold == rec.predicted);
    }
    if n_mentions == 0 {
        return Err(Error::Invalid(format!("empty prediction file: {}", path.display())));
    }
    Ok(EvalSummary {
        accuracy: accuracy(n_correct, n_mentions),
        n_mentions,
        n_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_records(dir: &Path, recs: &[PredictionRecord]) -> PathBuf {
        let path = dir.join("p.jsonl");
        let mut text = String::new();
        for r in recs {
            text += &serde_json::to_string(r).unwrap();
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        path
    }

    fn rec(predicted: &str, gold: Option<&str>) -> PredictionRecord {
        PredictionRecord {
            doc_id: "d".into(),
            mention_id: "m".into(),
            predicted: predicted.into(),
            gold: gold.map(Into::into),
            correct: gold == Some(predicted),
        }
    }

    #[test]
    fn three_of_four() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_records(
            dir.path(),
            &[
                rec("a", Some("a")),
                rec("b", Some("b")),
                rec("c", Some("x")),
                rec("d", Some("d")),
            ],
        );
        let s = cmd_evaluate(&p).unwrap();
        assert_eq!(
            s,
            EvalSummary {
                accuracy: 0.75,
                n_mentions: 4,
                n_correct: 3
            }
        );
        let all = write_records(dir.path(), &[rec("a", Some("a"))]);
        assert_eq!(cmd_evaluate(&all).unwrap().accuracy, 1.0);
    }

    #[test]
    fn empty_and_goldless_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_records(dir.path(), &[]);
        assert!(cmd_evaluate(&p)
            .unwrap_err()
            .to_string()
            .contains("empty prediction file"));
        let p = write_records(dir.path(), &[rec("a", None)]);
        assert!(cmd_evaluate(&p).unwrap_err().to_string().contains("missing gold"));
    }

    #[test]
    fn flags_parse_with_defaults() {
        let cli = Cli::try_parse_from(["sgtb", "train", "--train", "t", "--dev", "d"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.strategy, Strategy::BiBsg);
        assert_eq!(
            (a.beam, a.max_depth, a.eta, a.epochs, a.eval_every),
            (4, 3, 1.0, 500, 25)
        );
        assert!(Cli::try_parse_from(["sgtb", "train", "--train", "t", "--dev", "d", "--strategy", "nope"]).is_err());
    }
}
