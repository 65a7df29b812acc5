//! Decoding and training-time search.
//!
//! Three structured strategies share one beam machinery:
//!
//! - early update: plain forward beam search that emits gradients once, at
//!   the first step where the gold prefix is pruned (or at the last step);
//! - BSG: forward beam search that re-inserts the gold prefix after every
//!   pruning and emits gradients at every step;
//! - BiBSG: alternating forward and backward BSG passes in which beam
//!   selection adds a bonus computed from the opposite direction's beams.
//!
//! A fourth, non-structured `local` strategy scores each mention on its own
//! with an empty history and serves as the baseline.
//!
//! Beams are ordered by descending selection score with ties broken by the
//! candidate indices in position order, so every search is deterministic.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crf::{
    beam_distribution, functional_gradients, log_sum_exp, sequence_score, Decision, Direction, FactorScorer,
    GradientPoint, PartialAssignment,
};
use crate::data::{Document, PairwiseFeatureStore};
use crate::error::{Error, Result};
use crate::features::write_joint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "local")]
    Local,
    #[serde(rename = "bs-early")]
    EarlyUpdate,
    #[serde(rename = "bsg")]
    Bsg,
    #[serde(rename = "bibsg")]
    BiBsg,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Local, Strategy::EarlyUpdate, Strategy::Bsg, Strategy::BiBsg];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::EarlyUpdate => "bs-early",
            Strategy::Bsg => "bsg",
            Strategy::BiBsg => "bibsg",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected local|bs-early|bsg|bibsg)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub bibsg_rounds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            strategy: Strategy::BiBsg,
            beam_width: 4,
            bibsg_rounds: 2,
        }
    }
}

impl SearchConfig {
    pub fn new(strategy: Strategy, beam_width: usize) -> Self {
        SearchConfig {
            strategy,
            beam_width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if self.bibsg_rounds < 1 {
            return Err(Error::Config("bibsg rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Paths covering the same range, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub paths: Vec<PartialAssignment>,
    pub width: usize,
}

impl Beam {
    /// The beam before any decision: a single empty path.
    pub fn start(direction: Direction, width: usize) -> Self {
        Beam {
            paths: vec![PartialAssignment::empty(direction)],
            width,
        }
    }

    pub fn gold(&self) -> Option<&PartialAssignment> {
        self.paths.iter().find(|p| p.is_gold())
    }

    /// Best path by cached joint score, ties to the smallest assignment.
    pub fn best(&self) -> Option<&PartialAssignment> {
        self.paths.iter().min_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then_with(|| a.choices_by_position().cmp(&b.choices_by_position()))
        })
    }
}

struct Scored {
    selection: f64,
    key: Vec<usize>,
    path: PartialAssignment,
}

fn by_selection(a: &Scored, b: &Scored) -> Ordering {
    b.selection.total_cmp(&a.selection).then_with(|| a.key.cmp(&b.key))
}

/// Every path extended by every candidate at its next position, sorted by
/// selection score. `bonus[c]` is added to the selection score of extensions
/// by candidate `c` but never to the cached path score.
fn expand_all(
    scorer: &impl FactorScorer,
    doc: &Document,
    paths: &[PartialAssignment],
    bonus: Option<&[f64]>,
) -> Vec<Scored> {
    let mut out = Vec::new();
    for path in paths {
        let position = path.next_position(doc).expect("beam already covers the document");
        let n = doc.mentions[position].candidates.len();
        for candidate in 0..n {
            let decision = Decision { position, candidate };
            let factor = scorer.factor(doc, decision, path.decisions());
            let next = path.extended(doc, decision, factor);
            out.push(Scored {
                selection: next.score() + bonus.map_or(0.0, |b| b[candidate]),
                key: next.choices_by_position(),
                path: next,
            });
        }
    }
    out.sort_by(by_selection);
    out
}

/// Top `width` of the sorted extensions; with `keep_gold`, the gold extension
/// is appended when it was pruned. Returns the paths and whether gold made
/// the top `width` on its own.
fn select(mut scored: Vec<Scored>, width: usize, keep_gold: bool) -> (Vec<PartialAssignment>, bool) {
    let gold_rank = scored.iter().position(|s| s.path.is_gold());
    let survived = gold_rank.is_some_and(|r| r < width);
    let gold = match gold_rank {
        Some(r) if keep_gold && r >= width => Some(scored.swap_remove(r).path),
        _ => None,
    };
    scored.truncate(width);
    let mut paths: Vec<PartialAssignment> = scored.into_iter().map(|s| s.path).collect();
    paths.extend(gold);
    (paths, survived)
}

/// `bonus[c] = max over opposing paths p of [S(p) + F(c at position | p)]`.
fn opposing_bonus(
    scorer: &impl FactorScorer,
    doc: &Document,
    opposing: &[PartialAssignment],
    position: usize,
) -> Vec<f64> {
    let n = doc.mentions[position].candidates.len();
    if opposing.is_empty() {
        return vec![0.0; n];
    }
    (0..n)
        .map(|candidate| {
            let decision = Decision { position, candidate };
            opposing
                .iter()
                .map(|p| p.score() + scorer.factor(doc, decision, p.decisions()))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// One search step: extend, score with the optional per-candidate bonus,
/// keep the top `beam.width`.
pub fn expand_step(scorer: &impl FactorScorer, doc: &Document, beam: &Beam, bonus: Option<&[f64]>) -> Beam {
    let (paths, _) = select(expand_all(scorer, doc, &beam.paths, bonus), beam.width, false);
    Beam {
        paths,
        width: beam.width,
    }
}

/// Gradient points emitted at one search step, aligned with `paths`.
/// For the local strategy `paths` is empty.
#[derive(Debug, Clone)]
pub struct StepEmission {
    pub direction: Direction,
    pub position: usize,
    pub paths: Vec<PartialAssignment>,
    pub points: Vec<GradientPoint>,
}

/// Everything one document contributes to an epoch.
#[derive(Debug, Clone)]
pub struct DocGradients {
    pub steps: Vec<StepEmission>,
    /// `log Z − S(gold)` with `Z` over the final (or emission) beam.
    pub nll: f64,
}

impl DocGradients {
    pub fn point_count(&self) -> usize {
        self.steps.iter().map(|s| s.points.len()).sum()
    }

    pub fn into_points(self) -> impl Iterator<Item = GradientPoint> {
        self.steps.into_iter().flat_map(|s| s.points)
    }
}

struct Pass {
    /// `beams[k]` covers `k` decisions; `beams[0]` is the start beam.
    beams: Vec<Beam>,
    steps: Vec<StepEmission>,
}

/// A full pass in one direction. `opposing[j]` is the other direction's beam
/// after `j` decisions; a step with `k` decisions so far reads
/// `opposing[T - 1 - k]`. `store` turns on gradient emission.
fn run_pass(
    scorer: &impl FactorScorer,
    doc: &Document,
    direction: Direction,
    width: usize,
    keep_gold: bool,
    opposing: Option<&[Beam]>,
    store: Option<&PairwiseFeatureStore>,
) -> Result<Pass> {
    let t_len = doc.len();
    let mut beams = Vec::with_capacity(t_len + 1);
    beams.push(Beam::start(direction, width));
    let mut steps = Vec::new();
    for k in 0..t_len {
        let current = &beams[k];
        let position = match direction {
            Direction::Forward => k,
            Direction::Backward => t_len - 1 - k,
        };
        let bonus = opposing.map(|opp| opposing_bonus(scorer, doc, &opp[t_len - 1 - k].paths, position));
        let scored = expand_all(scorer, doc, &current.paths, bonus.as_deref());
        let (paths, _) = select(scored, width, keep_gold);
        if let Some(store) = store {
            let points = functional_gradients(doc, store, &paths)?;
            steps.push(StepEmission {
                direction,
                position,
                paths: paths.clone(),
                points,
            });
        }
        beams.push(Beam { paths, width });
    }
    Ok(Pass { beams, steps })
}

fn beam_nll(beam: &[PartialAssignment]) -> f64 {
    let scores: Vec<f64> = beam.iter().map(|p| p.score()).collect();
    let gold = beam
        .iter()
        .find(|p| p.is_gold())
        .map_or(f64::NEG_INFINITY, |p| p.score());
    log_sum_exp(&scores) - gold
}

fn local_scores(scorer: &impl FactorScorer, doc: &Document, position: usize) -> Vec<f64> {
    (0..doc.mentions[position].candidates.len())
        .map(|candidate| scorer.factor(doc, Decision { position, candidate }, &[]))
        .collect()
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// The predicted candidate index for every mention.
pub fn decode(scorer: &impl FactorScorer, doc: &Document, config: &SearchConfig) -> Vec<usize> {
    let width = config.beam_width;
    match config.strategy {
        Strategy::Local => (0..doc.len())
            .map(|t| argmax_first(&local_scores(scorer, doc, t)))
            .collect(),
        Strategy::EarlyUpdate | Strategy::Bsg => {
            let pass = run_pass(scorer, doc, Direction::Forward, width, false, None, None).expect("no emission");
            let last = pass.beams.last().expect("non-empty");
            last.best().expect("non-empty beam").choices_by_position()
        }
        Strategy::BiBsg => decode_bidirectional(scorer, doc, width, config.bibsg_rounds).assignment,
    }
}

/// Details of a bidirectional decode.
#[derive(Debug, Clone)]
pub struct BidirectionalDecode {
    pub assignment: Vec<usize>,
    pub forward_best: Vec<usize>,
    pub backward_best: Vec<usize>,
    /// `p(y | x)` of the two candidates, normalized over the union of both
    /// final beams.
    pub forward_prob: f64,
    pub backward_prob: f64,
}

pub fn decode_bidirectional(
    scorer: &impl FactorScorer,
    doc: &Document,
    width: usize,
    rounds: usize,
) -> BidirectionalDecode {
    let mut backward: Option<Pass> = None;
    let mut forward: Option<Pass> = None;
    for _ in 0..rounds.max(1) {
        let fwd = run_pass(
            scorer,
            doc,
            Direction::Forward,
            width,
            false,
            backward.as_ref().map(|p| p.beams.as_slice()),
            None,
        )
        .expect("no emission");
        let bwd =
            run_pass(scorer, doc, Direction::Backward, width, false, Some(&fwd.beams), None).expect("no emission");
        forward = Some(fwd);
        backward = Some(bwd);
    }
    let (fwd, bwd) = (forward.expect("ran"), backward.expect("ran"));
    let fwd_final = fwd.beams.last().expect("non-empty");
    let bwd_final = bwd.beams.last().expect("non-empty");
    let forward_best = fwd_final.best().expect("non-empty").choices_by_position();
    let backward_best = bwd_final.best().expect("non-empty").choices_by_position();

    // Compare under the model's own joint score, normalized over the union.
    let mut union: Vec<Vec<usize>> = fwd_final
        .paths
        .iter()
        .chain(&bwd_final.paths)
        .map(|p| p.choices_by_position())
        .collect();
    union.sort();
    union.dedup();
    let scores: Vec<f64> = union.iter().map(|y| sequence_score(scorer, doc, y)).collect();
    let log_z = log_sum_exp(&scores);
    let prob = |y: &Vec<usize>| {
        let i = union.binary_search(y).expect("member of union");
        (scores[i] - log_z).exp()
    };
    let forward_prob = prob(&forward_best);
    let backward_prob = prob(&backward_best);
    let assignment = match backward_prob.total_cmp(&forward_prob) {
        Ordering::Greater => backward_best.clone(),
        Ordering::Less => forward_best.clone(),
        Ordering::Equal => forward_best.clone().min(backward_best.clone()),
    };
    BidirectionalDecode {
        assignment,
        forward_best,
        backward_best,
        forward_prob,
        backward_prob,
    }
}

/// Forward search that emits once: at the first step where gold is pruned
/// (over the top `width` plus gold) or at the last step.
pub fn collect_gradients_early_update(
    scorer: &impl FactorScorer,
    store: &PairwiseFeatureStore,
    doc: &Document,
    width: usize,
) -> Result<DocGradients> {
    let mut beam = Beam::start(Direction::Forward, width).paths;
    for position in 0..doc.len() {
        let scored = expand_all(scorer, doc, &beam, None);
        let (paths, survived) = select(scored, width, true);
        if !survived || position + 1 == doc.len() {
            let points = functional_gradients(doc, store, &paths)?;
            let nll = beam_nll(&paths);
            return Ok(DocGradients {
                steps: vec![StepEmission {
                    direction: Direction::Forward,
                    position,
                    paths,
                    points,
                }],
                nll,
            });
        }
        beam = paths;
    }
    Err(Error::Empty("document"))
}

/// Forward search keeping gold in the beam, emitting at every step.
pub fn collect_gradients_bsg(
    scorer: &impl FactorScorer,
    store: &PairwiseFeatureStore,
    doc: &Document,
    width: usize,
) -> Result<DocGradients> {
    let pass = run_pass(scorer, doc, Direction::Forward, width, true, None, Some(store))?;
    let nll = beam_nll(&pass.beams.last().expect("non-empty").paths);
    Ok(DocGradients { steps: pass.steps, nll })
}

/// `rounds` of forward then backward gold-keeping passes. Forward selection
/// reads the previous round's backward beams (none in round one); backward
/// selection reads the current round's forward beams. Each step's gradients
/// are normalized over that direction's beam only.
pub fn collect_gradients_bibsg(
    scorer: &impl FactorScorer,
    store: &PairwiseFeatureStore,
    doc: &Document,
    width: usize,
    rounds: usize,
) -> Result<DocGradients> {
    let mut steps = Vec::new();
    let mut backward: Option<Pass> = None;
    let mut nll = f64::NAN;
    for _ in 0..rounds.max(1) {
        let fwd = run_pass(
            scorer,
            doc,
            Direction::Forward,
            width,
            true,
            backward.as_ref().map(|p| p.beams.as_slice()),
            Some(store),
        )?;
        let bwd = run_pass(
            scorer,
            doc,
            Direction::Backward,
            width,
            true,
            Some(&fwd.beams),
            Some(store),
        )?;
        nll = beam_nll(&fwd.beams.last().expect("non-empty").paths);
        steps.extend(fwd.steps);
        steps.extend(bwd.steps.iter().cloned());
        backward = Some(bwd);
    }
    Ok(DocGradients { steps, nll })
}

/// Independent per-mention softmax over candidates with an empty history.
pub fn collect_gradients_local(
    scorer: &impl FactorScorer,
    store: &PairwiseFeatureStore,
    doc: &Document,
) -> Result<DocGradients> {
    let mut steps = Vec::with_capacity(doc.len());
    let mut nll = 0.0;
    for (position, mention) in doc.mentions.iter().enumerate() {
        let scores = local_scores(scorer, doc, position);
        let log_z = log_sum_exp(&scores);
        nll += log_z - scores[mention.gold_index];
        let points = mention
            .candidates
            .iter()
            .enumerate()
            .map(|(c, cand)| {
                let mut features = Vec::new();
                write_joint(
                    &mut features,
                    &cand.local_features,
                    &cand.entity_id,
                    std::iter::empty(),
                    store,
                );
                let indicator = if c == mention.gold_index { 1.0 } else { 0.0 };
                GradientPoint {
                    features,
                    residual: indicator - (scores[c] - log_z).exp(),
                }
            })
            .collect();
        steps.push(StepEmission {
            direction: Direction::Forward,
            position,
            paths: Vec::new(),
            points,
        });
    }
    Ok(DocGradients { steps, nll })
}

pub fn collect_gradients(
    scorer: &impl FactorScorer,
    store: &PairwiseFeatureStore,
    doc: &Document,
    config: &SearchConfig,
) -> Result<DocGradients> {
    match config.strategy {
        Strategy::Local => collect_gradients_local(scorer, store, doc),
        Strategy::EarlyUpdate => collect_gradients_early_update(scorer, store, doc, config.beam_width),
        Strategy::Bsg => collect_gradients_bsg(scorer, store, doc, config.beam_width),
        Strategy::BiBsg => collect_gradients_bibsg(scorer, store, doc, config.beam_width, config.bibsg_rounds),
    }
}

/// Probabilities of a beam's paths, exposed for diagnostics.
pub fn beam_probabilities(beam: &Beam) -> Result<Vec<f64>> {
    beam_distribution(&beam.paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{exact_enumerate, FnScorer};
    use crate::data::{Candidate, Mention};

    fn doc(sizes: &[usize], gold: &[usize]) -> Document {
        Document {
            doc_id: "d".into(),
            mentions: sizes
                .iter()
                .zip(gold)
                .enumerate()
                .map(|(t, (&k, &g))| Mention {
                    mention_id: format!("m{t}"),
                    gold_index: g,
                    candidates: (0..k)
                        .map(|c| Candidate {
                            entity_id: format!("e{t}_{c}"),
                            local_features: vec![c as f64],
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn zero() -> FnScorer<impl Fn(&Document, Decision, &[Decision]) -> f64> {
        FnScorer(|_: &Document, _: Decision, _: &[Decision]| 0.0)
    }

    fn toy() -> FnScorer<impl Fn(&Document, Decision, &[Decision]) -> f64> {
        FnScorer(|_: &Document, d: Decision, h: &[Decision]| {
            let c = d.candidate as f64;
            (1.3 * c + 0.7 * d.position as f64).sin()
                + h.iter()
                    .map(|x| ((x.candidate * 3 + d.candidate) as f64 * 0.9 + x.position as f64).cos() * 0.6)
                    .sum::<f64>()
        })
    }

    fn store() -> PairwiseFeatureStore {
        PairwiseFeatureStore::new(1)
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("beam".parse::<Strategy>().is_err());
    }

    #[test]
    fn unbounded_beam_keeps_everything() {
        let d = doc(&[2, 2], &[0, 0]);
        let mut beam = Beam::start(Direction::Forward, 100);
        for _ in 0..2 {
            beam = expand_step(&toy(), &d, &beam, None);
        }
        assert_eq!(beam.paths.len(), 4);
    }

    #[test]
    fn ties_keep_the_lexicographically_first_prefix() {
        let d = doc(&[3, 3], &[2, 2]);
        let beam = expand_step(&zero(), &d, &Beam::start(Direction::Forward, 1), None);
        assert_eq!(beam.paths[0].choices_by_position(), vec![0]);
    }

    #[test]
    fn width_one_picks_the_best_candidate() {
        let d = doc(&[3], &[0]);
        let s = FnScorer(|_: &Document, dd: Decision, _: &[Decision]| [0.1, 0.9, 0.3][dd.candidate]);
        let beam = expand_step(&s, &d, &Beam::start(Direction::Forward, 1), None);
        assert_eq!(beam.paths[0].choices_by_position(), vec![1]);
    }

    #[test]
    fn bonus_changes_selection_but_not_scores() {
        let d = doc(&[3], &[0]);
        let s = FnScorer(|_: &Document, dd: Decision, _: &[Decision]| [0.1, 0.9, 0.3][dd.candidate]);
        let bonus = [0.0, 0.0, 1.0];
        let beam = expand_step(&s, &d, &Beam::start(Direction::Forward, 1), Some(&bonus));
        assert_eq!(beam.paths[0].choices_by_position(), vec![2]);
        assert_eq!(beam.paths[0].score(), 0.3);
    }

    #[test]
    fn decode_single_mention_is_argmax() {
        let d = doc(&[4], &[0]);
        let s = FnScorer(|_: &Document, dd: Decision, _: &[Decision]| [0.1, 0.9, 0.95, -1.0][dd.candidate]);
        for strategy in Strategy::ALL {
            assert_eq!(decode(&s, &d, &SearchConfig::new(strategy, 1)), vec![2], "{strategy}");
        }
    }

    #[test]
    fn decode_all_ties_is_first_assignment() {
        let d = doc(&[3, 2, 4], &[1, 1, 1]);
        for strategy in Strategy::ALL {
            assert_eq!(
                decode(&zero(), &d, &SearchConfig::new(strategy, 2)),
                vec![0, 0, 0],
                "{strategy}"
            );
        }
    }

    #[test]
    fn full_width_decode_matches_exact_argmax() {
        let d = doc(&[3, 2, 3], &[0, 1, 2]);
        let exact = exact_enumerate(&toy(), &d, 1000).unwrap();
        for strategy in [Strategy::EarlyUpdate, Strategy::Bsg, Strategy::BiBsg] {
            assert_eq!(
                decode(&toy(), &d, &SearchConfig::new(strategy, 18)),
                exact.argmax,
                "{strategy}"
            );
        }
    }

    #[test]
    fn early_update_full_width_emits_at_the_end() {
        let d = doc(&[2, 2], &[1, 0]);
        let g = collect_gradients_early_update(&zero(), &store(), &d, 4).unwrap();
        assert_eq!(g.steps.len(), 1);
        assert_eq!(g.steps[0].position, 1);
        assert_eq!(g.point_count(), 4);
    }

    #[test]
    fn early_update_stops_when_gold_is_pruned() {
        // Gold is candidate 2 at t=0; with width 1 and all ties, it is pruned.
        let d = doc(&[3, 3], &[2, 0]);
        let g = collect_gradients_early_update(&zero(), &store(), &d, 1).unwrap();
        assert_eq!(g.steps.len(), 1);
        let step = &g.steps[0];
        assert_eq!(step.position, 0);
        assert!(step.paths.iter().all(|p| p.len() == 1));
        assert_eq!(step.paths.len(), 2);
        let sum: f64 = step.points.iter().map(|p| p.residual).sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn bsg_point_count_and_signs() {
        let d = doc(&[2, 2], &[1, 0]);
        let g = collect_gradients_bsg(&toy(), &store(), &d, 4).unwrap();
        assert_eq!(g.point_count(), 6);

        let d = doc(&[4, 3, 5], &[3, 2, 4]);
        let g = collect_gradients_bsg(&toy(), &store(), &d, 2).unwrap();
        for step in &g.steps {
            assert!(step.paths.len() <= 3);
            assert_eq!(step.paths.iter().filter(|p| p.is_gold()).count(), 1);
            for (path, point) in step.paths.iter().zip(&step.points) {
                if path.is_gold() {
                    assert!(point.residual >= 0.0);
                } else {
                    assert!(point.residual <= 0.0);
                }
            }
            let sum: f64 = step.points.iter().map(|p| p.residual).sum();
            assert!(sum.abs() < 1e-12);
        }
        assert_eq!(g.point_count(), g.steps.iter().map(|s| s.paths.len()).sum::<usize>());
    }

    #[test]
    fn one_round_bibsg_forward_equals_bsg() {
        let d = doc(&[4, 3, 5, 2], &[3, 2, 4, 0]);
        let bsg = collect_gradients_bsg(&toy(), &store(), &d, 2).unwrap();
        let bi = collect_gradients_bibsg(&toy(), &store(), &d, 2, 1).unwrap();
        let fwd: Vec<_> = bi.steps.iter().filter(|s| s.direction == Direction::Forward).collect();
        assert_eq!(fwd.len(), bsg.steps.len());
        for (a, b) in fwd.iter().zip(&bsg.steps) {
            assert_eq!(a.paths, b.paths);
            assert_eq!(a.points, b.points);
        }
        assert_eq!(bi.steps.len(), 8);
    }

    #[test]
    fn single_mention_bibsg_directions_agree() {
        let d = doc(&[3], &[1]);
        let bi = collect_gradients_bibsg(&toy(), &store(), &d, 2, 1).unwrap();
        assert_eq!(bi.steps.len(), 2);
        assert_eq!(bi.steps[0].points, bi.steps[1].points);
    }

    #[test]
    fn backward_pass_keeps_gold_suffix() {
        let d = doc(&[4, 3, 5, 2], &[3, 2, 4, 1]);
        let bi = collect_gradients_bibsg(&toy(), &store(), &d, 1, 2).unwrap();
        for step in &bi.steps {
            assert_eq!(step.paths.iter().filter(|p| p.is_gold()).count(), 1);
            assert!(step.paths.len() <= 2);
        }
        assert_eq!(bi.steps.len(), 16);
    }

    #[test]
    fn local_gradients_are_per_mention_softmax() {
        let d = doc(&[2, 4], &[1, 0]);
        let g = collect_gradients_local(&zero(), &store(), &d).unwrap();
        assert_eq!(g.point_count(), 6);
        assert_eq!(g.steps[0].points[1].residual, 0.5);
        assert_eq!(g.steps[1].points[0].residual, 0.75);
        assert_eq!(g.steps[1].points[2].residual, -0.25);
        assert!((g.nll - (2f64.ln() + 4f64.ln())).abs() < 1e-12);
    }
}
