//! Synthetic corpora with known ground truth.
//!
//! Every candidate gets `d_local` noise features uniform on `[0, 1)`.
//! A locally informative mention adds 1 to feature 0 of its gold candidate;
//! an uninformative one adds it to a random non-gold decoy instead. Pairwise
//! vectors link every pair of gold entities in a document with mass
//! `coherence_strength · U[0.5, 1)` per component, while a sprinkling of
//! non-gold pairs gets small `U[0, 0.25)` noise.
//!
//! With `future_informative`, the first `T / 2` mentions carry no local
//! evidence at all (pure noise), and only later mentions can be informative.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Candidate, Dataset, Dims, Document, Mention, PairwiseFeatureStore, Provenance};
use crate::error::{Error, Result};

/// Named generator recorded in corpus headers.
pub const PRNG: &str = "chacha8/rand_chacha-0.3/v1";

const DISTRACTOR_RATE: f64 = 0.3;
const DISTRACTOR_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub mentions: usize,
    pub candidates: usize,
    pub d_local: usize,
    pub d_pair: usize,
    /// Probability that a mention's local features alone identify gold.
    pub local_signal: f64,
    pub coherence_strength: f64,
    pub future_informative: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 500,
            n_dev: 100,
            n_test: 100,
            mentions: 8,
            candidates: 5,
            d_local: 4,
            d_pair: 2,
            local_signal: 0.6,
            coherence_strength: 2.0,
            future_informative: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mentions == 0 || self.candidates == 0 || self.d_local == 0 || self.d_pair == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.local_signal) {
            return Err(Error::Config(format!(
                "local_signal {} not in [0, 1]",
                self.local_signal
            )));
        }
        if !(self.coherence_strength >= 0.0 && self.coherence_strength.is_finite()) {
            return Err(Error::Config("coherence_strength must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl SynthCorpus {
    /// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `pairwise.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.train.save_corpus(&dir.join("train.jsonl"))?;
        self.dev.save_corpus(&dir.join("dev.jsonl"))?;
        self.test.save_corpus(&dir.join("test.jsonl"))?;
        self.train.pairwise.save(&dir.join("pairwise.jsonl"))
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let dims = Dims::new(config.d_local, config.d_pair)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = PairwiseFeatureStore::new(config.d_pair);

    let mut splits = Vec::with_capacity(3);
    for (name, n) in [
        ("train", config.n_train),
        ("dev", config.n_dev),
        ("test", config.n_test),
    ] {
        let docs = (0..n)
            .map(|i| generate_document(config, &format!("{name}-{i:05}"), &mut rng, &mut store))
            .collect::<Result<Vec<_>>>()?;
        splits.push((name, docs));
    }

    let store = Arc::new(store);
    let mut datasets = splits.into_iter().map(|(name, docs)| {
        let mut ds = Dataset::new(docs, store.clone(), dims)?;
        ds.provenance = Some(Provenance {
            prng: PRNG.into(),
            seed: config.seed,
            split: name.into(),
        });
        Ok(ds)
    });
    let mut next = || datasets.next().expect("three splits");
    Ok(SynthCorpus {
        train: next()?,
        dev: next()?,
        test: next()?,
    })
}

fn generate_document(
    config: &SynthConfig,
    doc_id: &str,
    rng: &mut ChaCha8Rng,
    store: &mut PairwiseFeatureStore,
) -> Result<Document> {
    let t_len = config.mentions;
    let k = config.candidates;
    let ambiguous_prefix = if config.future_informative { t_len / 2 } else { 0 };

    let mut mentions = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let gold = rng.gen_range(0..k);
        let mut candidates: Vec<Candidate> = (0..k)
            .map(|c| Candidate {
                entity_id: format!("{doc_id}/m{t}/e{c}"),
                local_features: (0..config.d_local).map(|_| rng.gen::<f64>()).collect(),
            })
            .collect();
        if t >= ambiguous_prefix {
            let informative = rng.gen_bool(config.local_signal);
            let boosted = if informative || k == 1 {
                Some(gold)
            } else if config.future_informative {
                None
            } else {
                let decoy = rng.gen_range(0..k - 1);
                Some(if decoy >= gold { decoy + 1 } else { decoy })
            };
            if let Some(c) = boosted {
                candidates[c].local_features[0] += 1.0;
            }
        }
        mentions.push(Mention {
            mention_id: format!("m{t}"),
            gold_index: gold,
            candidates,
        });
    }

    for t in 0..t_len {
        for u in t + 1..t_len {
            let (ga, gb) = (mentions[t].gold_index, mentions[u].gold_index);
            if config.coherence_strength > 0.0 {
                let values = (0..config.d_pair)
                    .map(|_| config.coherence_strength * rng.gen_range(0.5..1.0))
                    .collect();
                store.insert(
                    &mentions[t].candidates[ga].entity_id,
                    &mentions[u].candidates[gb].entity_id,
                    values,
                )?;
            }
            if k > 1 && rng.gen_bool(DISTRACTOR_RATE) {
                // One non-gold pair between the two mentions.
                let (a, b) = loop {
                    let a = rng.gen_range(0..k);
                    let b = rng.gen_range(0..k);
                    if a != ga || b != gb {
                        break (a, b);
                    }
                };
                let values = (0..config.d_pair)
                    .map(|_| DISTRACTOR_SCALE * rng.gen::<f64>())
                    .collect();
                store.insert(
                    &mentions[t].candidates[a].entity_id,
                    &mentions[u].candidates[b].entity_id,
                    values,
                )?;
            }
        }
    }

    Ok(Document {
        doc_id: doc_id.to_owned(),
        mentions,
    })
}
