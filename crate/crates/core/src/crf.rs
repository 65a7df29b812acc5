//! Globally normalized scoring: joint scores of partial assignments,
//! beam-restricted and exact normalization, the negative log-likelihood and
//! its point-wise functional gradients.
//!
//! A joint score is the sum of factor scores in decision order; each factor
//! sees the entities decided strictly earlier in the same direction. All
//! probability math goes through [`log_sum_exp`].

use std::collections::{BTreeMap, HashSet};

use crate::data::{Document, PairwiseFeatureStore};
use crate::error::{Error, Result};
use crate::features::write_joint;
use crate::tree::TrainingPoint;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Candidate `candidate` chosen for mention `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decision {
    pub position: usize,
    pub candidate: usize,
}

/// The factor scoring function `F(x, y_t, history)`.
pub trait FactorScorer {
    fn factor(&self, doc: &Document, decision: Decision, history: &[Decision]) -> f64;
}

impl<T: FactorScorer + ?Sized> FactorScorer for &T {
    fn factor(&self, doc: &Document, decision: Decision, history: &[Decision]) -> f64 {
        (**self).factor(doc, decision, history)
    }
}

/// Adapts a closure into a [`FactorScorer`].
pub struct FnScorer<F>(pub F);

impl<F> FactorScorer for FnScorer<F>
where
    F: Fn(&Document, Decision, &[Decision]) -> f64,
{
    fn factor(&self, doc: &Document, decision: Decision, history: &[Decision]) -> f64 {
        (self.0)(doc, decision, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Decides positions `0, 1, ..., T-1`.
    Forward,
    /// Decides positions `T-1, T-2, ..., 0`.
    Backward,
}

/// A prefix (forward) or suffix (backward) of an assignment with its cached
/// joint score.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssignment {
    direction: Direction,
    decisions: Vec<Decision>,
    score: f64,
    is_gold: bool,
}

impl PartialAssignment {
    pub fn empty(direction: Direction) -> Self {
        PartialAssignment {
            direction,
            decisions: Vec::new(),
            score: 0.0,
            is_gold: true,
        }
    }

    /// Builds a path from choices given in decision order.
    pub fn from_choices(
        doc: &Document,
        direction: Direction,
        choices: &[usize],
        scorer: &impl FactorScorer,
    ) -> Result<Self> {
        let mut path = Self::empty(direction);
        for &c in choices {
            let position = path.next_position(doc).ok_or(Error::IndexOutOfRange {
                what: "position",
                index: doc.len(),
                len: doc.len(),
            })?;
            let n = doc.mentions[position].candidates.len();
            if c >= n {
                return Err(Error::IndexOutOfRange {
                    what: "candidate",
                    index: c,
                    len: n,
                });
            }
            path = path.extend(doc, c, scorer);
        }
        Ok(path)
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn is_gold(&self) -> bool {
        self.is_gold
    }

    pub fn is_complete(&self, doc: &Document) -> bool {
        self.decisions.len() == doc.len()
    }

    /// The position the next extension decides, if any remain.
    pub fn next_position(&self, doc: &Document) -> Option<usize> {
        let k = self.decisions.len();
        if k >= doc.len() {
            return None;
        }
        Some(match self.direction {
            Direction::Forward => k,
            Direction::Backward => doc.len() - 1 - k,
        })
    }

    /// Candidate indices ordered by position.
    pub fn choices_by_position(&self) -> Vec<usize> {
        match self.direction {
            Direction::Forward => self.decisions.iter().map(|d| d.candidate).collect(),
            Direction::Backward => self.decisions.iter().rev().map(|d| d.candidate).collect(),
        }
    }

    pub fn last(&self) -> Option<Decision> {
        self.decisions.last().copied()
    }

    /// Extends by `candidate` at the next position, scoring the new factor
    /// against this path's own history.
    pub fn extend(&self, doc: &Document, candidate: usize, scorer: &impl FactorScorer) -> Self {
        let position = self.next_position(doc).expect("path is already complete");
        let decision = Decision { position, candidate };
        let factor = scorer.factor(doc, decision, &self.decisions);
        self.extended(doc, decision, factor)
    }

    pub(crate) fn extended(&self, doc: &Document, decision: Decision, factor: f64) -> Self {
        let mut decisions = Vec::with_capacity(self.decisions.len() + 1);
        decisions.extend_from_slice(&self.decisions);
        decisions.push(decision);
        PartialAssignment {
            direction: self.direction,
            decisions,
            score: self.score + factor,
            is_gold: self.is_gold && doc.mentions[decision.position].gold_index == decision.candidate,
        }
    }
}

/// Recomputes a path's joint score from scratch.
pub fn joint_score(scorer: &impl FactorScorer, doc: &Document, path: &PartialAssignment) -> f64 {
    let d = path.decisions();
    let mut total = 0.0;
    for k in 0..d.len() {
        total += scorer.factor(doc, d[k], &d[..k]);
    }
    total
}

/// Joint score of a full assignment under the forward decomposition.
pub fn sequence_score(scorer: &impl FactorScorer, doc: &Document, assignment: &[usize]) -> f64 {
    let decisions: Vec<Decision> = assignment
        .iter()
        .enumerate()
        .map(|(position, &candidate)| Decision { position, candidate })
        .collect();
    let mut total = 0.0;
    for k in 0..decisions.len() {
        total += scorer.factor(doc, decisions[k], &decisions[..k]);
    }
    total
}

/// `log Σ exp(x)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_beam(paths: &[PartialAssignment]) -> Result<()> {
    let first = paths.first().ok_or(Error::Empty("beam"))?;
    let mut seen = HashSet::with_capacity(paths.len());
    for p in paths {
        if p.direction != first.direction || p.len() != first.len() {
            return Err(Error::Invalid("beam paths cover different ranges".into()));
        }
        if !seen.insert(p.decisions.as_slice()) {
            return Err(Error::DuplicatePath);
        }
    }
    Ok(())
}

/// Softmax of the cached path scores over the beam.
pub fn beam_distribution(paths: &[PartialAssignment]) -> Result<Vec<f64>> {
    check_beam(paths)?;
    let scores: Vec<f64> = paths.iter().map(|p| p.score).collect();
    let log_z = log_sum_exp(&scores);
    Ok(scores.iter().map(|s| (s - log_z).exp()).collect())
}

/// A regression target `-g = 1[gold] - p` at the joint features of a path's
/// most recent decision.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPoint {
    pub features: Vec<f64>,
    pub residual: f64,
}

impl From<GradientPoint> for TrainingPoint {
    fn from(p: GradientPoint) -> Self {
        TrainingPoint {
            features: p.features,
            target: p.residual,
        }
    }
}

/// One point per path, aligned with `paths`. The beam must hold the gold
/// prefix (or suffix) for the covered range.
pub fn functional_gradients(
    doc: &Document,
    store: &PairwiseFeatureStore,
    paths: &[PartialAssignment],
) -> Result<Vec<GradientPoint>> {
    let probs = beam_distribution(paths)?;
    if paths[0].is_empty() {
        return Err(Error::Invalid("gradients need at least one decision".into()));
    }
    if !paths.iter().any(|p| p.is_gold) {
        return Err(Error::GoldAbsent);
    }
    Ok(paths
        .iter()
        .zip(probs)
        .map(|(path, p)| {
            let (last, history) = path.decisions.split_last().expect("non-empty path");
            let cand = &doc.mentions[last.position].candidates[last.candidate];
            let mut features = Vec::new();
            write_joint(
                &mut features,
                &cand.local_features,
                &cand.entity_id,
                history.iter().map(|d| doc.entity(d.position, d.candidate)),
                store,
            );
            let indicator = if path.is_gold { 1.0 } else { 0.0 };
            GradientPoint {
                features,
                residual: indicator - p,
            }
        })
        .collect())
}

/// Where the partition function comes from.
#[derive(Debug, Clone, Copy)]
pub enum ZSource<'a> {
    /// Exhaustive enumeration, refusing spaces larger than the cap.
    Exact { cap: u128 },
    /// The paths of a final beam; the gold score is taken in the beam's direction.
    Beam(&'a [PartialAssignment]),
}

/// `log Z − S(gold)`.
pub fn nll_loss(scorer: &impl FactorScorer, doc: &Document, z: ZSource<'_>) -> Result<f64> {
    match z {
        ZSource::Exact { cap } => {
            let exact = exact_enumerate(scorer, doc, cap)?;
            Ok(exact.log_z - sequence_score(scorer, doc, &doc.gold_assignment()))
        }
        ZSource::Beam(paths) => {
            check_beam(paths)?;
            let direction = paths[0].direction;
            let gold: Vec<usize> = match direction {
                Direction::Forward => doc.gold_assignment(),
                Direction::Backward => doc.gold_assignment().into_iter().rev().collect(),
            };
            let gold = PartialAssignment::from_choices(doc, direction, &gold[..paths[0].len()], scorer)?;
            let scores: Vec<f64> = paths.iter().map(|p| p.score).collect();
            Ok(log_sum_exp(&scores) - gold.score)
        }
    }
}

/// Results of exhaustive enumeration over every assignment.
#[derive(Debug, Clone)]
pub struct ExactResult {
    pub log_z: f64,
    /// Highest-scoring assignment; ties go to the lexicographically smallest.
    pub argmax: Vec<usize>,
    pub argmax_score: f64,
    /// `log Σ exp S(y)` over completions of each forward prefix, including the
    /// empty prefix (which equals `log_z`) and every full assignment.
    pub prefix_log_mass: BTreeMap<Vec<usize>, f64>,
}

impl ExactResult {
    /// `p(y_{1:t} | x)` for a forward prefix.
    pub fn marginal(&self, prefix: &[usize]) -> Option<f64> {
        self.prefix_log_mass.get(prefix).map(|m| (m - self.log_z).exp())
    }

    /// Exact functional gradient `g = p(prefix) − 1[prefix is gold]` for the
    /// factor that decided the last element of `prefix`.
    pub fn gradient(&self, doc: &Document, prefix: &[usize]) -> Option<f64> {
        let p = self.marginal(prefix)?;
        let gold = prefix.iter().enumerate().all(|(t, &c)| doc.mentions[t].gold_index == c);
        Some(p - if gold { 1.0 } else { 0.0 })
    }
}

pub fn exact_enumerate(scorer: &impl FactorScorer, doc: &Document, cap: u128) -> Result<ExactResult> {
    let size = doc.sequence_count();
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    if doc.is_empty() {
        return Err(Error::Empty("document"));
    }

    struct Walk<'a, S> {
        scorer: &'a S,
        doc: &'a Document,
        decisions: Vec<Decision>,
        best: Option<(f64, Vec<usize>)>,
        masses: BTreeMap<Vec<usize>, f64>,
    }

    impl<S: FactorScorer> Walk<'_, S> {
        fn prefix(&self) -> Vec<usize> {
            self.decisions.iter().map(|d| d.candidate).collect()
        }

        fn visit(&mut self, score: f64) -> f64 {
            let depth = self.decisions.len();
            if depth == self.doc.len() {
                // Lexicographic enumeration order keeps the first of equal maxima.
                if self.best.as_ref().is_none_or(|(s, _)| score > *s) {
                    self.best = Some((score, self.prefix()));
                }
                self.masses.insert(self.prefix(), score);
                return score;
            }
            let n = self.doc.mentions[depth].candidates.len();
            let mut child_masses = Vec::with_capacity(n);
            for candidate in 0..n {
                let decision = Decision {
                    position: depth,
                    candidate,
                };
                let factor = self.scorer.factor(self.doc, decision, &self.decisions);
                self.decisions.push(decision);
                child_masses.push(self.visit(score + factor));
                self.decisions.pop();
            }
            let mass = log_sum_exp(&child_masses);
            self.masses.insert(self.prefix(), mass);
            mass
        }
    }

    let mut walk = Walk {
        scorer,
        doc,
        decisions: Vec::with_capacity(doc.len()),
        best: None,
        masses: BTreeMap::new(),
    };
    let log_z = walk.visit(0.0);
    let (argmax_score, argmax) = walk.best.expect("at least one sequence");
    Ok(ExactResult {
        log_z,
        argmax,
        argmax_score,
        prefix_log_mass: walk.masses,
    })
}
