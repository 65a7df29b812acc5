//! The factor scoring function as an additive ensemble of regression trees,
//! and the JSON model file that stores it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::{Decision, FactorScorer};
use crate::data::{write_file, Dims, Document, PairwiseFeatureStore};
use crate::error::{Error, Result};
use crate::features::{joint_features, write_joint};
use crate::search::SearchConfig;
use crate::tree::RegressionTree;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub tree: RegressionTree,
    pub eta: f64,
}

/// `F(φ) = Σ_m eta_m · h_m(φ)`; the empty ensemble is `F ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    dims: Dims,
    stages: Vec<Stage>,
}

impl BoostedEnsemble {
    pub fn new(dims: Dims) -> Self {
        BoostedEnsemble {
            dims,
            stages: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// A new ensemble with one more stage; `self` is left untouched.
    pub fn add_stage(&self, tree: RegressionTree, eta: f64) -> Result<Self> {
        let mut next = self.clone();
        next.push_stage(tree, eta)?;
        Ok(next)
    }

    pub(crate) fn push_stage(&mut self, tree: RegressionTree, eta: f64) -> Result<()> {
        if tree.n_features() != self.dims.joint() {
            return Err(Error::DimensionMismatch {
                what: "tree features",
                expected: self.dims.joint(),
                found: tree.n_features(),
            });
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {eta}")));
        }
        self.stages.push(Stage { tree, eta });
        Ok(())
    }

    /// The first `n` stages.
    pub fn truncated(&self, n: usize) -> Self {
        BoostedEnsemble {
            dims: self.dims,
            stages: self.stages[..n.min(self.stages.len())].to_vec(),
        }
    }

    /// Sum over stages in order; no length check on `features`.
    pub fn score(&self, features: &[f64]) -> f64 {
        let mut total = 0.0;
        for stage in &self.stages {
            total += stage.eta * stage.tree.eval(features);
        }
        total
    }

    pub fn factor_score(
        &self,
        doc: &Document,
        position: usize,
        candidate_index: usize,
        decided: &[&str],
        store: &PairwiseFeatureStore,
    ) -> Result<f64> {
        let phi = joint_features(doc, position, candidate_index, decided, store)?;
        if phi.len() != self.dims.joint() {
            return Err(Error::DimensionMismatch {
                what: "joint features",
                expected: self.dims.joint(),
                found: phi.len(),
            });
        }
        Ok(self.score(&phi))
    }

    pub fn scorer<'a>(&'a self, store: &'a PairwiseFeatureStore) -> EnsembleScorer<'a> {
        EnsembleScorer { ensemble: self, store }
    }
}

/// Binds an ensemble to the pairwise store it reads global features from.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleScorer<'a> {
    pub ensemble: &'a BoostedEnsemble,
    pub store: &'a PairwiseFeatureStore,
}

impl FactorScorer for EnsembleScorer<'_> {
    fn factor(&self, doc: &Document, decision: Decision, history: &[Decision]) -> f64 {
        if self.ensemble.is_empty() {
            return 0.0;
        }
        let cand = &doc.mentions[decision.position].candidates[decision.candidate];
        let mut phi = Vec::with_capacity(self.ensemble.dims.joint());
        write_joint(
            &mut phi,
            &cand.local_features,
            &cand.entity_id,
            history.iter().map(|d| doc.entity(d.position, d.candidate)),
            self.store,
        );
        self.ensemble.score(&phi)
    }
}

/// A trained ensemble plus the search settings used to decode with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub ensemble: BoostedEnsemble,
    pub search: SearchConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    d_local: usize,
    d_pair: usize,
    stage_count: usize,
    etas: Vec<f64>,
    search: SearchConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    header: ModelHeader,
    stages: Vec<RegressionTree>,
}

impl Model {
    pub fn to_json(&self) -> String {
        let ens = &self.ensemble;
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            header: ModelHeader {
                d_local: ens.dims.local,
                d_pair: ens.dims.pair,
                stage_count: ens.len(),
                etas: ens.stages.iter().map(|s| s.eta).collect(),
                search: self.search,
            },
            stages: ens.stages.iter().map(|s| s.tree.clone()).collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let h = file.header;
        if h.stage_count != file.stages.len() || h.etas.len() != file.stages.len() {
            return Err(Error::Model(format!(
                "stage count {} does not match {} trees / {} etas",
                h.stage_count,
                file.stages.len(),
                h.etas.len()
            )));
        }
        h.search.validate()?;
        let dims = Dims::new(h.d_local, h.d_pair)?;
        let mut ensemble = BoostedEnsemble::new(dims);
        for (tree, eta) in file.stages.into_iter().zip(h.etas) {
            ensemble.push_stage(tree, eta)?;
        }
        Ok(Model {
            ensemble,
            search: h.search,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json();
        write_file(path, |w| {
            use std::io::Write;
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Candidate, Mention};
    use crate::tree::Node;

    fn dims() -> Dims {
        Dims::new(1, 1).unwrap()
    }

    fn doc() -> Document {
        Document {
            doc_id: "d".into(),
            mentions: vec![Mention {
                mention_id: "m".into(),
                gold_index: 0,
                candidates: vec![
                    Candidate {
                        entity_id: "a".into(),
                        local_features: vec![0.2],
                    },
                    Candidate {
                        entity_id: "b".into(),
                        local_features: vec![0.9],
                    },
                ],
            }],
        }
    }

    fn stump() -> RegressionTree {
        RegressionTree::from_nodes(
            3,
            vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: -1.0 },
                Node::Leaf { value: 4.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_ensemble_scores_zero() {
        let store = PairwiseFeatureStore::new(1);
        let ens = BoostedEnsemble::new(dims());
        assert_eq!(ens.factor_score(&doc(), 0, 1, &[], &store).unwrap(), 0.0);
    }

    #[test]
    fn stages_add_up() {
        let store = PairwiseFeatureStore::new(1);
        let e1 = BoostedEnsemble::new(dims())
            .add_stage(RegressionTree::leaf(3, 2.0), 1.0)
            .unwrap();
        assert_eq!(e1.len(), 1);
        assert_eq!(e1.factor_score(&doc(), 0, 0, &[], &store).unwrap(), 2.0);
        let e2 = e1.add_stage(RegressionTree::leaf(3, -0.5), 0.5).unwrap();
        assert_eq!(e2.factor_score(&doc(), 0, 0, &[], &store).unwrap(), 1.75);
        // The input ensemble value is unchanged.
        assert_eq!(e1.len(), 1);
    }

    #[test]
    fn add_stage_is_additive_pointwise() {
        let store = PairwiseFeatureStore::new(1);
        let e1 = BoostedEnsemble::new(dims())
            .add_stage(RegressionTree::leaf(3, 0.3), 1.0)
            .unwrap();
        let e2 = e1.add_stage(stump(), 0.25).unwrap();
        for c in 0..2 {
            let before = e1.factor_score(&doc(), 0, c, &[], &store).unwrap();
            let after = e2.factor_score(&doc(), 0, c, &[], &store).unwrap();
            let phi = joint_features(&doc(), 0, c, &[], &store).unwrap();
            assert_eq!(after, before + 0.25 * stump().predict(&phi).unwrap());
        }
    }

    #[test]
    fn add_stage_rejects_wrong_dimension_and_eta() {
        let ens = BoostedEnsemble::new(dims());
        assert!(matches!(
            ens.add_stage(RegressionTree::leaf(2, 1.0), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ens.add_stage(RegressionTree::leaf(3, 1.0), 0.0).is_err());
    }

    #[test]
    fn model_round_trip_preserves_scores_bitwise() {
        let ens = BoostedEnsemble::new(dims())
            .add_stage(stump(), 1.0)
            .unwrap()
            .add_stage(RegressionTree::leaf(3, 0.1 + 0.2), 0.7)
            .unwrap();
        let model = Model {
            ensemble: ens,
            search: SearchConfig::default(),
        };
        let text = model.to_json();
        let back = Model::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), text);
        let store = PairwiseFeatureStore::new(1);
        for c in 0..2 {
            assert_eq!(
                back.ensemble.factor_score(&doc(), 0, c, &[], &store).unwrap().to_bits(),
                model
                    .ensemble
                    .factor_score(&doc(), 0, c, &[], &store)
                    .unwrap()
                    .to_bits()
            );
        }
    }

    #[test]
    fn model_rejects_inconsistent_header() {
        let model = Model {
            ensemble: BoostedEnsemble::new(dims()).add_stage(stump(), 1.0).unwrap(),
            search: SearchConfig::default(),
        };
        let text = model.to_json().replace("\"stage_count\":1", "\"stage_count\":2");
        assert!(Model::from_json(&text).is_err());
    }
}
