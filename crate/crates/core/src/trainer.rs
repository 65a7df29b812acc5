//! The boosting loop: each epoch collects gradient points from every training
//! document against the current ensemble, fits one regression tree to them
//! and appends it. Dev accuracy is checked periodically and the best
//! snapshot is returned.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crf::GradientPoint;
use crate::data::{write_file, Dataset};
use crate::ensemble::BoostedEnsemble;
use crate::error::{Error, Result};
use crate::search::{collect_gradients, decode, SearchConfig, Strategy};
use crate::tree::{fit_tree, TrainingPoint, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub eval_every: usize,
    pub search: SearchConfig,
    pub tree: TreeParams,
    pub eta: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            eval_every: 25,
            search: SearchConfig::default(),
            tree: TreeParams::default(),
            eta: 1.0,
            workers: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.max_epochs > 0 && self.eval_every > self.max_epochs {
            return Err(Error::Config(format!(
                "eval_every ({}) exceeds max_epochs ({})",
                self.eval_every, self.max_epochs
            )));
        }
        if self.tree.max_depth < 1 || self.tree.min_leaf < 1 {
            return Err(Error::Config("max_depth and min_leaf must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-document `log Z − S(gold)` over the sampled beams.
    pub train_nll: f64,
    pub dev_accuracy: Option<f64>,
    pub points: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Header {
        strategy: Strategy,
        beam_width: usize,
        bibsg_rounds: usize,
        max_depth: usize,
        min_leaf: usize,
        eta: f64,
        max_epochs: usize,
        eval_every: usize,
        workers: usize,
        seed: u64,
    },
    Epoch(&'a EpochRecord),
    Summary {
        best_epoch: usize,
        best_dev_accuracy: f64,
    },
}

impl TrainReport {
    /// One JSON object per line: a header, one record per epoch, a summary.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let c = &self.config;
        let mut line = |rec: &ReportLine<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")
        };
        line(&ReportLine::Header {
            strategy: c.search.strategy,
            beam_width: c.search.beam_width,
            bibsg_rounds: c.search.bibsg_rounds,
            max_depth: c.tree.max_depth,
            min_leaf: c.tree.min_leaf,
            eta: c.eta,
            max_epochs: c.max_epochs,
            eval_every: c.eval_every,
            workers: c.workers,
            seed: c.seed,
        })?;
        for e in &self.epochs {
            line(&ReportLine::Epoch(e))?;
        }
        line(&ReportLine::Summary {
            best_epoch: self.best_epoch,
            best_dev_accuracy: self.best_dev_accuracy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, |w| self.write_jsonl(w))
    }
}

/// Statistics from one boosting epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_nll: f64,
    pub points: usize,
}

/// Stepwise access to the boosting loop.
pub struct Trainer<'a> {
    data: &'a Dataset,
    config: TrainConfig,
    ensemble: BoostedEnsemble,
    epoch: usize,
    pool: rayon::ThreadPool,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.documents.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Trainer {
            data,
            config,
            ensemble: BoostedEnsemble::new(data.dims),
            epoch: 0,
            pool,
        })
    }

    pub fn ensemble(&self) -> &BoostedEnsemble {
        &self.ensemble
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Gradient points for this epoch, merged in shuffled document order.
    pub fn collect_points(&self, epoch: usize) -> Result<(Vec<GradientPoint>, f64)> {
        let docs = &self.data.documents;
        let mut order: Vec<usize> = (0..docs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ epoch as u64);
        order.shuffle(&mut rng);

        let chunk = docs.len().div_ceil(self.config.workers);
        let scorer = self.ensemble.scorer(&self.data.pairwise);
        let search = self.config.search;
        let per_doc = self.pool.install(|| {
            order
                .par_chunks(chunk)
                .map(|part| {
                    part.iter()
                        .map(|&i| collect_gradients(&scorer, &self.data.pairwise, &docs[i], &search))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut nll = 0.0;
        let mut points = Vec::new();
        for g in per_doc.into_iter().flatten() {
            nll += g.nll;
            points.extend(g.into_points());
        }
        Ok((points, nll / docs.len() as f64))
    }

    /// Runs one epoch and appends its tree.
    pub fn step(&mut self) -> Result<EpochStats> {
        let epoch = self.epoch + 1;
        let (points, train_nll) = self.collect_points(epoch)?;
        let n = points.len();
        let points: Vec<TrainingPoint> = points.into_iter().map(Into::into).collect();
        let tree = fit_tree(&points, &self.config.tree)?;
        self.ensemble.push_stage(tree, self.config.eta)?;
        self.epoch = epoch;
        Ok(EpochStats { train_nll, points: n })
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        self.pool
            .install(|| evaluate(&self.ensemble, data, &self.config.search))
    }
}

/// Decoded candidate indices for every document, in order.
pub fn predict(ens: &BoostedEnsemble, data: &Dataset, search: &SearchConfig) -> Result<Vec<Vec<usize>>> {
    if ens.dims() != data.dims {
        return Err(Error::Invalid(format!(
            "model dims {:?} do not match corpus dims {:?}",
            ens.dims(),
            data.dims
        )));
    }
    search.validate()?;
    let scorer = ens.scorer(&data.pairwise);
    Ok(data.documents.par_iter().map(|d| decode(&scorer, d, search)).collect())
}

/// Micro accuracy over all mentions.
pub fn evaluate(ens: &BoostedEnsemble, data: &Dataset, search: &SearchConfig) -> Result<f64> {
    let predictions = predict(ens, data, search)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (doc, pred) in data.documents.iter().zip(&predictions) {
        for (m, &p) in doc.mentions.iter().zip(pred) {
            total += 1;
            correct += usize::from(m.gold_index == p);
        }
    }
    if total == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(accuracy(correct, total))
}

pub fn accuracy(correct: usize, total: usize) -> f64 {
    correct as f64 / total as f64
}

/// Trains for `max_epochs`, evaluating on `dev` every `eval_every` epochs
/// (and after the last one), and returns the best-dev snapshot. Equal dev
/// accuracies keep the earlier epoch.
pub fn train(train: &Dataset, dev: &Dataset, config: &TrainConfig) -> Result<(BoostedEnsemble, TrainReport)> {
    if train.dims != dev.dims {
        return Err(Error::Invalid(format!(
            "train dims {:?} differ from dev dims {:?}",
            train.dims, dev.dims
        )));
    }
    if dev.documents.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let mut trainer = Trainer::new(train, *config)?;
    let mut records = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64)> = None;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let stats = trainer.step()?;
        let dev_accuracy = if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let acc = trainer.evaluate(dev)?;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((epoch, acc));
            }
            Some(acc)
        } else {
            None
        };
        records.push(EpochRecord {
            epoch,
            train_nll: stats.train_nll,
            dev_accuracy,
            points: stats.points,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let (best_epoch, best_dev_accuracy) = match best {
        Some(b) => b,
        None => (0, trainer.evaluate(dev)?),
    };
    let ensemble = trainer.ensemble.truncated(best_epoch);
    Ok((
        ensemble,
        TrainReport {
            config: *config,
            epochs: records,
            best_epoch,
            best_dev_accuracy,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{exact_enumerate, nll_loss, ZSource};
    use crate::data::{Candidate, Dims, Document, Mention, PairwiseFeatureStore};
    use std::sync::Arc;

    fn separable() -> Dataset {
        // Gold has local feature 1, the other candidate 0.
        let doc = Document {
            doc_id: "d".into(),
            mentions: vec![Mention {
                mention_id: "m".into(),
                gold_index: 1,
                candidates: vec![
                    Candidate {
                        entity_id: "a".into(),
                        local_features: vec![0.0],
                    },
                    Candidate {
                        entity_id: "b".into(),
                        local_features: vec![1.0],
                    },
                ],
            }],
        };
        Dataset::new(
            vec![doc],
            Arc::new(PairwiseFeatureStore::new(1)),
            Dims::new(1, 1).unwrap(),
        )
        .unwrap()
    }

    fn config(strategy: Strategy, epochs: usize) -> TrainConfig {
        TrainConfig {
            max_epochs: epochs,
            eval_every: 1.max(epochs.min(5)),
            search: SearchConfig::new(strategy, 4),
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_gives_empty_ensemble() {
        let data = separable();
        let (ens, report) = train(&data, &data, &config(Strategy::Bsg, 0)).unwrap();
        assert!(ens.is_empty());
        assert_eq!(report.best_epoch, 0);
        assert!(report.epochs.is_empty());
        // Tie-break baseline picks candidate 0, gold is 1.
        assert_eq!(report.best_dev_accuracy, 0.0);
    }

    #[test]
    fn separable_single_mention_is_learned_quickly() {
        let data = separable();
        for strategy in Strategy::ALL {
            let mut trainer = Trainer::new(&data, config(strategy, 10)).unwrap();
            let mut solved_at = None;
            for epoch in 1..=10 {
                trainer.step().unwrap();
                let scorer = trainer.ensemble().scorer(&data.pairwise);
                let exact = exact_enumerate(&scorer, &data.documents[0], 10).unwrap();
                if exact.argmax == vec![1] && solved_at.is_none() {
                    solved_at = Some(epoch);
                }
            }
            assert!(solved_at.is_some(), "{strategy}");
            assert_eq!(trainer.evaluate(&data).unwrap(), 1.0, "{strategy}");
        }
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let data = separable();
        let mut trainer = Trainer::new(&data, config(Strategy::Bsg, 5)).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..5 {
            trainer.step().unwrap();
            let scorer = trainer.ensemble().scorer(&data.pairwise);
            let loss = nll_loss(&scorer, &data.documents[0], ZSource::Exact { cap: 10 }).unwrap();
            assert!(loss <= last);
            last = loss;
        }
    }

    #[test]
    fn snapshot_has_best_epoch_stages() {
        let data = separable();
        let (ens, report) = train(&data, &data, &config(Strategy::Bsg, 10)).unwrap();
        assert_eq!(ens.len(), report.best_epoch);
        let best = report
            .epochs
            .iter()
            .filter_map(|e| e.dev_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_dev_accuracy, best);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                eval_every: 600,
                ..Default::default()
            },
            TrainConfig {
                workers: 0,
                ..Default::default()
            },
            TrainConfig {
                eta: -1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn rejects_mismatched_dims() {
        let data = separable();
        let other = Dataset::new(vec![], Arc::new(PairwiseFeatureStore::new(2)), Dims::new(1, 2).unwrap()).unwrap();
        assert!(train(&data, &other, &config(Strategy::Bsg, 1)).is_err());
        assert!(train(&other, &other, &config(Strategy::Bsg, 1)).is_err());
    }
}
