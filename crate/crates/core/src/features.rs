//! Feature composition: `φ = φ_L ⊕ φ_G`, where the global block aggregates
//! pairwise entity features against the already-decided entities as
//! `mean ⊕ max`.

use crate::data::{Document, PairwiseFeatureStore};
use crate::error::{Error, Result};

/// `[mean_d φ_E(c, d) ‖ max_d φ_E(c, d)]` over the decided entities.
///
/// `decided` is a multiset: an entity decided for two mentions counts twice
/// in the mean. An empty history gives all zeros. The result is bit-identical
/// under any permutation of `decided` because each mean component is summed
/// in sorted order.
pub fn global_features(candidate: &str, decided: &[&str], store: &PairwiseFeatureStore) -> Vec<f64> {
    let mut out = vec![0.0; 2 * store.dim()];
    write_global(&mut out, candidate, decided.iter().copied(), store);
    out
}

pub(crate) fn write_global<'a>(
    out: &mut [f64],
    candidate: &str,
    decided: impl Iterator<Item = &'a str>,
    store: &PairwiseFeatureStore,
) {
    let dim = store.dim();
    debug_assert_eq!(out.len(), 2 * dim);
    let rows: Vec<&[f64]> = decided.map(|d| store.lookup(candidate, d)).collect();
    if rows.is_empty() {
        out.fill(0.0);
        return;
    }
    let n = rows.len() as f64;
    let mut column = Vec::with_capacity(rows.len());
    for k in 0..dim {
        column.clear();
        column.extend(rows.iter().map(|r| r[k]));
        column.sort_unstable_by(f64::total_cmp);
        out[k] = column.iter().sum::<f64>() / n;
        out[dim + k] = column[column.len() - 1];
    }
}

/// `[local features of the candidate ‖ global_features(...)]`, length `D_L + 2·D_E`.
pub fn joint_features(
    doc: &Document,
    position: usize,
    candidate_index: usize,
    decided: &[&str],
    store: &PairwiseFeatureStore,
) -> Result<Vec<f64>> {
    let mention = doc.mentions.get(position).ok_or(Error::IndexOutOfRange {
        what: "position",
        index: position,
        len: doc.mentions.len(),
    })?;
    let cand = mention.candidates.get(candidate_index).ok_or(Error::IndexOutOfRange {
        what: "candidate",
        index: candidate_index,
        len: mention.candidates.len(),
    })?;
    let mut out = Vec::new();
    write_joint(
        &mut out,
        &cand.local_features,
        &cand.entity_id,
        decided.iter().copied(),
        store,
    );
    Ok(out)
}

pub(crate) fn write_joint<'a>(
    out: &mut Vec<f64>,
    local: &[f64],
    candidate: &str,
    decided: impl Iterator<Item = &'a str>,
    store: &PairwiseFeatureStore,
) {
    out.clear();
    out.extend_from_slice(local);
    let start = out.len();
    out.resize(start + 2 * store.dim(), 0.0);
    write_global(&mut out[start..], candidate, decided, store);
}
