//! Per-input salience maps.
//!
//! Each leaf `t = [b_1..b_L]` carries the cumulative rank-score
//! `c_t = (Σ|b_l|) · Π sign(b_l)`; an input node's salience aggregates the
//! scores of the leaves that map onto it.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{NetError, Network, NodeRef};
use crate::tree::{RankProjectionTree, TreePath};

#[derive(Debug, Error)]
pub enum SalienceError {
    #[error("path {path} has length {len}, leaves have length {depth}")]
    NotALeaf {
        path: TreePath,
        len: usize,
        depth: usize,
    },
    #[error("k = {k} is outside 1..={n}")]
    TopK { k: usize, n: usize },
    #[error("gradient salience needs at least one reference input")]
    NoReferenceInputs,
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Signed,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Sum,
    Average,
    Max,
    Min,
}

/// The nine ways of folding leaf scores into a node score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aggregator {
    Fold(Family, Op),
    Count,
}

impl Aggregator {
    pub const ALL: [Aggregator; 9] = [
        Aggregator::Fold(Family::Absolute, Op::Sum),
        Aggregator::Fold(Family::Absolute, Op::Average),
        Aggregator::Fold(Family::Absolute, Op::Max),
        Aggregator::Fold(Family::Absolute, Op::Min),
        Aggregator::Fold(Family::Signed, Op::Sum),
        Aggregator::Fold(Family::Signed, Op::Average),
        Aggregator::Fold(Family::Signed, Op::Max),
        Aggregator::Fold(Family::Signed, Op::Min),
        Aggregator::Count,
    ];

    pub fn name(self) -> &'static str {
        use Family::*;
        use Op::*;
        match self {
            Aggregator::Fold(Absolute, Sum) => "abs-sum",
            Aggregator::Fold(Absolute, Average) => "abs-average",
            Aggregator::Fold(Absolute, Max) => "abs-max",
            Aggregator::Fold(Absolute, Min) => "abs-min",
            Aggregator::Fold(Signed, Sum) => "signed-sum",
            Aggregator::Fold(Signed, Average) => "signed-average",
            Aggregator::Fold(Signed, Max) => "signed-max",
            Aggregator::Fold(Signed, Min) => "signed-min",
            Aggregator::Count => "count",
        }
    }

    /// Aggregates non-empty `scores`.
    fn apply(self, scores: &[i64]) -> f64 {
        let (family, op) = match self {
            Aggregator::Count => return scores.len() as f64,
            Aggregator::Fold(f, o) => (f, o),
        };
        let values = scores.iter().map(|&c| match family {
            Family::Signed => c,
            Family::Absolute => c.abs(),
        });
        match op {
            Op::Sum => values.sum::<i64>() as f64,
            Op::Average => values.sum::<i64>() as f64 / scores.len() as f64,
            Op::Max => values.max().expect("non-empty") as f64,
            Op::Min => values.min().expect("non-empty") as f64,
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Aggregator::ALL.iter().map(|a| a.name()).collect();
                format!(
                    "unknown aggregator `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// What produced a salience map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SalienceMethod {
    Tree(Aggregator),
    /// Mean absolute gradient of the output, no tree involved.
    GradientMagnitude,
}

impl SalienceMethod {
    pub fn name(self) -> &'static str {
        match self {
            SalienceMethod::Tree(a) => a.name(),
            SalienceMethod::GradientMagnitude => "gradient-magnitude",
        }
    }

    /// Signed maps are ranked by magnitude.
    fn ranks_by_magnitude(self) -> bool {
        matches!(
            self,
            SalienceMethod::Tree(Aggregator::Fold(Family::Signed, _))
        )
    }
}

impl FromStr for SalienceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "gradient-magnitude" {
            Ok(SalienceMethod::GradientMagnitude)
        } else {
            s.parse().map(SalienceMethod::Tree)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMap {
    pub method: SalienceMethod,
    /// `scores[n - 1]` is the score of input node `n`.
    pub scores: Vec<f64>,
    /// Whether input node `n` has a non-empty pre-image.
    pub covered: Vec<bool>,
}

impl SalienceMap {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, n: usize) -> f64 {
        self.scores[n - 1]
    }

    pub fn is_covered(&self, n: usize) -> bool {
        self.covered[n - 1]
    }
}

/// `c_t` for a leaf of a depth-`depth` tree.
pub fn cumulative_score(path: &TreePath, depth: usize) -> Result<i64, SalienceError> {
    if path.len() != depth {
        return Err(SalienceError::NotALeaf {
            path: path.clone(),
            len: path.len(),
            depth,
        });
    }
    let total: i64 = path.indices().iter().map(|b| b.abs()).sum();
    Ok(total * path.sign())
}

/// `π(n)` for every input node. Unreached nodes score 0 and are not covered.
pub fn salience_map(tree: &RankProjectionTree, aggregator: Aggregator) -> SalienceMap {
    let depth = tree.depth();
    let preimage = tree.preimage();
    let mut scores = Vec::with_capacity(preimage.len());
    let mut covered = Vec::with_capacity(preimage.len());
    for leaves in preimage.values() {
        if leaves.is_empty() {
            scores.push(0.0);
            covered.push(false);
            continue;
        }
        let c: Vec<i64> = leaves
            .iter()
            .map(|t| cumulative_score(t, depth).expect("pre-image holds leaves"))
            .collect();
        scores.push(aggregator.apply(&c));
        covered.push(true);
    }
    SalienceMap {
        method: SalienceMethod::Tree(aggregator),
        scores,
        covered,
    }
}

/// Top `k` inputs as `(index, score)`, best first.
///
/// Signed maps are ordered by `|score|` (the sign is kept in the output), all
/// others by raw score; ties go to the lower index.
pub fn rank_inputs(map: &SalienceMap, k: usize) -> Result<Vec<(usize, f64)>, SalienceError> {
    let n = map.len();
    if k == 0 || k > n {
        return Err(SalienceError::TopK { k, n });
    }
    let key = |s: f64| {
        if map.method.ranks_by_magnitude() {
            s.abs()
        } else {
            s
        }
    };
    let mut idx: Vec<usize> = (1..=n).collect();
    idx.sort_by(|&a, &b| {
        key(map.score(b))
            .partial_cmp(&key(map.score(a)))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(idx.into_iter().take(k).map(|i| (i, map.score(i))).collect())
}

/// Baseline: mean over `reference_inputs` of `|∂a_0/∂x_n|`.
pub fn gradient_salience(
    net: &Network,
    reference_inputs: &[Vec<f64>],
) -> Result<SalienceMap, SalienceError> {
    if reference_inputs.is_empty() {
        return Err(SalienceError::NoReferenceInputs);
    }
    let mut scores = vec![0.0; net.input_size()];
    for x in reference_inputs {
        let g = net.gradient(NodeRef::output(), net.depth(), x)?;
        for (s, v) in scores.iter_mut().zip(g) {
            *s += v.abs();
        }
    }
    let count = reference_inputs.len() as f64;
    scores.iter_mut().for_each(|s| *s /= count);
    Ok(SalienceMap {
        method: SalienceMethod::GradientMagnitude,
        covered: vec![true; scores.len()],
        scores,
    })
}
