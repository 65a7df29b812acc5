#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgtb::data::{Candidate, Dims, Document, Mention, PairwiseFeatureStore};
use sgtb::ensemble::BoostedEnsemble;
use sgtb::tree::{fit_tree, TrainingPoint, TreeParams};

pub struct Instance {
    pub doc: Document,
    pub store: Arc<PairwiseFeatureStore>,
    pub ensemble: BoostedEnsemble,
}

/// A document with `1..=max_t` mentions, `1..=max_k` candidates each, and a
/// pairwise store linking roughly half of all cross-mention entity pairs.
pub fn random_doc(rng: &mut ChaCha8Rng, dims: Dims, max_t: usize, max_k: usize) -> (Document, PairwiseFeatureStore) {
    let t_len = rng.gen_range(1..=max_t);
    let mentions: Vec<Mention> = (0..t_len)
        .map(|t| {
            let k = rng.gen_range(1..=max_k);
            Mention {
                mention_id: format!("m{t}"),
                gold_index: rng.gen_range(0..k),
                candidates: (0..k)
                    .map(|c| Candidate {
                        entity_id: format!("e{t}_{c}"),
                        local_features: (0..dims.local).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    })
                    .collect(),
            }
        })
        .collect();
    let mut store = PairwiseFeatureStore::new(dims.pair);
    for a in 0..t_len {
        for b in a + 1..t_len {
            for ca in &mentions[a].candidates {
                for cb in &mentions[b].candidates {
                    if rng.gen_bool(0.5) {
                        let v = (0..dims.pair).map(|_| rng.gen_range(0.0..2.0)).collect();
                        store.insert(&ca.entity_id, &cb.entity_id, v).unwrap();
                    }
                }
            }
        }
    }
    let doc = Document {
        doc_id: "doc".into(),
        mentions,
    };
    (doc, store)
}

/// Trees fit to random targets over random joint-feature rows, so that
/// thresholds land inside the range real features occupy.
pub fn random_ensemble(rng: &mut ChaCha8Rng, dims: Dims, stages: usize) -> BoostedEnsemble {
    let mut ens = BoostedEnsemble::new(dims);
    for _ in 0..stages {
        let points: Vec<TrainingPoint> = (0..40)
            .map(|_| TrainingPoint {
                features: (0..dims.joint()).map(|_| rng.gen_range(-1.0..2.0)).collect(),
                target: rng.gen_range(-2.0..2.0),
            })
            .collect();
        let params = TreeParams {
            max_depth: rng.gen_range(1..=4),
            min_leaf: 1,
        };
        let tree = fit_tree(&points, &params).unwrap();
        ens = ens.add_stage(tree, rng.gen_range(0.3..1.5)).unwrap();
    }
    ens
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_t: usize, max_k: usize) -> Instance {
    let dims = Dims::new(rng.gen_range(1..=3), rng.gen_range(1..=2)).unwrap();
    let (doc, store) = random_doc(rng, dims, max_t, max_k);
    let stages = rng.gen_range(1..=6);
    let ensemble = random_ensemble(rng, dims, stages);
    Instance {
        doc,
        store: Arc::new(store),
        ensemble,
    }
}

/// `|a − b| ≤ tol · max(1, |a|, |b|)`.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}
