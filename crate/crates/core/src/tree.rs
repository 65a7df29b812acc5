//! Axis-aligned least-squares regression trees.
//!
//! Splits are chosen greedily by squared-error reduction over midpoints of
//! consecutive distinct feature values; routing sends `x[f] <= threshold`
//! to the left child. Ties between equal gains go to the lowest feature
//! index, then the lowest threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPoint {
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes are stored in preorder; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeRecord", try_from = "TreeRecord")]
pub struct RegressionTree {
    n_features: usize,
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(n_features: usize, value: f64) -> Self {
        RegressionTree {
            n_features,
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Builds a tree from a preorder list of nodes, checking structure.
    pub fn from_nodes(n_features: usize, nodes: Vec<Node>) -> Result<Self> {
        let tree = RegressionTree { n_features, nodes };
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(msg));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        // Every node other than the root must be referenced exactly once,
        // and children come after their parent in preorder.
        let mut refs = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= self.n_features {
                        return bad(format!("split feature {feature} >= {}", self.n_features));
                    }
                    if !threshold.is_finite() {
                        return bad("non-finite threshold".into());
                    }
                    if left <= i || right <= i || left >= self.nodes.len() || right >= self.nodes.len() {
                        return bad(format!("node {i} has invalid children"));
                    }
                    refs[left] += 1;
                    refs[right] += 1;
                }
                Node::Leaf { value } => {
                    if !value.is_finite() {
                        return bad("non-finite leaf value".into());
                    }
                }
            }
        }
        if refs[0] != 0 || refs[1..].iter().any(|&r| r != 1) {
            return bad("nodes do not form a tree".into());
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                what: "tree input",
                expected: self.n_features,
                found: features.len(),
            });
        }
        Ok(self.eval(features))
    }

    /// Routing without the length check.
    pub(crate) fn eval(&self, features: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if features[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
enum NodeRecord {
    #[serde(rename = "split")]
    Split(usize, f64),
    #[serde(rename = "leaf")]
    Leaf(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeRecord {
    format_version: u32,
    n_features: usize,
    nodes: Vec<NodeRecord>,
}

impl From<RegressionTree> for TreeRecord {
    fn from(tree: RegressionTree) -> Self {
        fn walk(nodes: &[Node], i: usize, out: &mut Vec<NodeRecord>) {
            match nodes[i] {
                Node::Leaf { value } => out.push(NodeRecord::Leaf(value)),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(NodeRecord::Split(feature, threshold));
                    walk(nodes, left, out);
                    walk(nodes, right, out);
                }
            }
        }
        let mut nodes = Vec::with_capacity(tree.nodes.len());
        walk(&tree.nodes, 0, &mut nodes);
        TreeRecord {
            format_version: TREE_FORMAT_VERSION,
            n_features: tree.n_features,
            nodes,
        }
    }
}

impl TryFrom<TreeRecord> for RegressionTree {
    type Error = Error;

    fn try_from(rec: TreeRecord) -> Result<Self> {
        if rec.format_version != TREE_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported tree format_version {}",
                rec.format_version
            )));
        }
        // Rebuild child links from the preorder record list.
        fn build(records: &[NodeRecord], pos: &mut usize, nodes: &mut Vec<Node>) -> Result<usize> {
            let rec = *records
                .get(*pos)
                .ok_or_else(|| Error::Model("truncated node list".into()))?;
            *pos += 1;
            let me = nodes.len();
            match rec {
                NodeRecord::Leaf(value) => nodes.push(Node::Leaf { value }),
                NodeRecord::Split(feature, threshold) => {
                    nodes.push(Node::Leaf { value: 0.0 });
                    let left = build(records, pos, nodes)?;
                    let right = build(records, pos, nodes)?;
                    nodes[me] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                }
            }
            Ok(me)
        }
        let mut nodes = Vec::with_capacity(rec.nodes.len());
        let mut pos = 0;
        build(&rec.nodes, &mut pos, &mut nodes)?;
        if pos != rec.nodes.len() {
            return Err(Error::Model("trailing nodes after a complete tree".into()));
        }
        RegressionTree::from_nodes(rec.n_features, nodes)
    }
}

/// Greedy top-down least-squares fit.
pub fn fit_tree(points: &[TrainingPoint], params: &TreeParams) -> Result<RegressionTree> {
    let first = points.first().ok_or(Error::Empty("training points"))?;
    if params.max_depth < 1 || params.min_leaf < 1 {
        return Err(Error::Config("max_depth and min_leaf must be at least 1".into()));
    }
    let n_features = first.features.len();
    for p in points {
        if p.features.len() != n_features {
            return Err(Error::DimensionMismatch {
                what: "training point",
                expected: n_features,
                found: p.features.len(),
            });
        }
        if !p.target.is_finite() || p.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite training point".into()));
        }
    }

    let members: Vec<u32> = (0..points.len() as u32).collect();
    let sorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut idx = members.clone();
            // Stable sort keeps ascending point index among equal values.
            idx.sort_by(|&a, &b| points[a as usize].features[f].total_cmp(&points[b as usize].features[f]));
            idx
        })
        .collect();

    let mut fitter = Fitter {
        points,
        params: *params,
        nodes: Vec::new(),
        goes_left: vec![false; points.len()],
    };
    fitter.build(members, sorted, 0);
    Ok(RegressionTree {
        n_features,
        nodes: fitter.nodes,
    })
}

struct Fitter<'a> {
    points: &'a [TrainingPoint],
    params: TreeParams,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Fitter<'_> {
    fn target(&self, i: u32) -> f64 {
        self.points[i as usize].target
    }

    fn value(&self, i: u32, f: usize) -> f64 {
        self.points[i as usize].features[f]
    }

    /// `members` is in ascending point order; `sorted[f]` holds the same
    /// points ordered by feature `f`.
    fn build(&mut self, members: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let n = members.len();
        let sum: f64 = members.iter().map(|&i| self.target(i)).sum();
        let mean = sum / n as f64;
        let first = self.target(members[0]);
        let constant = members.iter().all(|&i| self.target(i) == first);

        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf || constant {
            return me;
        }
        let Some(best) = self.best_split(&sorted, sum) else {
            return me;
        };

        for &i in &members {
            self.goes_left[i as usize] = self.value(i, best.feature) <= best.threshold;
        }
        let (left_members, right_members): (Vec<u32>, Vec<u32>) =
            members.iter().partition(|&&i| self.goes_left[i as usize]);
        let mut left_sorted = Vec::with_capacity(sorted.len());
        let mut right_sorted = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| self.goes_left[i as usize]);
            left_sorted.push(l);
            right_sorted.push(r);
        }
        let left = self.build(left_members, left_sorted, depth + 1);
        let right = self.build(right_members, right_sorted, depth + 1);
        self.nodes[me] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        me
    }

    fn best_split(&self, sorted: &[Vec<u32>], total: f64) -> Option<BestSplit> {
        let n = sorted[0].len();
        let min_leaf = self.params.min_leaf;
        let base = total * total / n as f64;
        let sum_sq: f64 = sorted[0].iter().map(|&i| self.target(i).powi(2)).sum();
        let tol = 1e-12 * sum_sq;
        let mut best: Option<BestSplit> = None;

        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.target(order[k]);
                let n_left = k + 1;
                let n_right = n - n_left;
                let lo = self.value(order[k], f);
                let hi = self.value(order[k + 1], f);
                if lo == hi || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - base;
                if gain <= tol {
                    continue;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// A threshold `t` with `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}
