//! Ranking functions `r_{i,l,m}` and their quasi-inverse.
//!
//! A [`Ranking`] orders every node of a target layer by its score with respect
//! to a source node on a lower-indexed layer, best first. Ties are broken by
//! ascending node index so every ranking is a total order.
//!
//! The random kind derives a permutation from `(seed, source.layer,
//! source.index, target_layer)` as follows, so that other implementations can
//! reproduce it exactly:
//!
//! 1. key = SHA-256 of the ASCII tag `rpt-random-rank/v1` followed by
//!    `seed`, `source.layer`, `source.index` and `target_layer`, each as a
//!    little-endian `u64`;
//! 2. the 32-byte key seeds a ChaCha8 stream (`rand_chacha::ChaCha8Rng::from_seed`);
//! 3. starting from the identity `[1..N_m]`, a Fisher-Yates shuffle runs for
//!    `k = N_m - 1` down to `1`, swapping position `k` with position
//!    `j = uniform(0..=k)`, where `uniform` draws `next_u64` values, rejects
//!    any below `(2^64 - (k+1)) mod (k+1)` and returns the accepted value
//!    modulo `k + 1`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netmodel::{NetError, Network, NodeRef};

/// Seed used whenever the caller does not provide one.
pub const DEFAULT_SEED: u64 = 20180601;

const RANDOM_TAG: &[u8] = b"rpt-random-rank/v1";

#[derive(Debug, Error)]
pub enum RankError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("weight ranking needs adjacent layers, got source layer {source_layer} and target layer {target}")]
    NotAdjacent { source_layer: usize, target: usize },
    #[error("target layer {target} must lie strictly below source layer {source_layer} and within the network")]
    LayerOrder { source_layer: usize, target: usize },
    #[error("gradient ranking needs at least one reference input")]
    MissingReferenceInputs,
    #[error("branching index must be nonzero")]
    ZeroBranch,
    #[error("branching index {b} is too large for a layer of {size} nodes (need |b| < {size}/2)")]
    BranchTooLarge { b: i64, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKind {
    Weights,
    Gradient,
    Random,
}

impl FromStr for RankKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weights" => Ok(RankKind::Weights),
            "gradient" => Ok(RankKind::Gradient),
            "random" => Ok(RankKind::Random),
            other => Err(format!("unknown ranking kind `{other}`")),
        }
    }
}

impl fmt::Display for RankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankKind::Weights => "weights",
            RankKind::Gradient => "gradient",
            RankKind::Random => "random",
        })
    }
}

/// Which ranking function to use, plus the inputs some kinds need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSpec {
    pub kind: RankKind,
    /// Only consulted by [`RankKind::Random`], always recorded.
    pub seed: u64,
    /// Points at which gradients are averaged; only used by [`RankKind::Gradient`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reference_inputs: Vec<Vec<f64>>,
}

impl RankingSpec {
    pub fn weights() -> Self {
        RankingSpec {
            kind: RankKind::Weights,
            seed: DEFAULT_SEED,
            reference_inputs: Vec::new(),
        }
    }

    pub fn random(seed: u64) -> Self {
        RankingSpec {
            kind: RankKind::Random,
            seed,
            reference_inputs: Vec::new(),
        }
    }

    pub fn gradient(reference_inputs: Vec<Vec<f64>>) -> Self {
        RankingSpec {
            kind: RankKind::Gradient,
            seed: DEFAULT_SEED,
            reference_inputs,
        }
    }

    pub fn validate(&self) -> Result<(), RankError> {
        if self.kind == RankKind::Gradient && self.reference_inputs.is_empty() {
            return Err(RankError::MissingReferenceInputs);
        }
        Ok(())
    }
}

/// Ordering of a target layer with respect to one source node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub source: NodeRef,
    pub target_layer: usize,
    /// `order[p]` is the 1-based node index holding rank `p + 1`.
    order: Vec<usize>,
}

impl Ranking {
    /// Wraps an explicit order, checking that it is a permutation of `1..=n`.
    pub fn from_order(source: NodeRef, target_layer: usize, order: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; order.len()];
        for &j in &order {
            if j == 0 || j > order.len() || seen[j - 1] {
                return None;
            }
            seen[j - 1] = true;
        }
        Some(Ranking {
            source,
            target_layer,
            order,
        })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based rank of node `j`.
    pub fn rank_of(&self, j: usize) -> Option<usize> {
        self.order.iter().position(|&n| n == j).map(|p| p + 1)
    }

    /// `r^{-1}(b)`: rank `b` for positive `b`, rank `N_m + b + 1` for negative `b`.
    pub fn quasi_inverse(&self, b: i64) -> Result<NodeRef, RankError> {
        let size = self.order.len();
        if b == 0 {
            return Err(RankError::ZeroBranch);
        }
        if 2 * b.unsigned_abs() >= size as u64 {
            return Err(RankError::BranchTooLarge { b, size });
        }
        let rank = if b > 0 {
            b as usize
        } else {
            (size as i64 + b + 1) as usize
        };
        Ok(NodeRef::new(self.target_layer, self.order[rank - 1]))
    }
}

/// Ranks layer `target_layer` with respect to `source` under `spec`.
pub fn rank(
    net: &Network,
    spec: &RankingSpec,
    source: NodeRef,
    target_layer: usize,
) -> Result<Ranking, RankError> {
    net.check_node(source)?;
    if target_layer <= source.layer || target_layer > net.depth() {
        return Err(RankError::LayerOrder {
            source_layer: source.layer,
            target: target_layer,
        });
    }
    let size = net.layer_size(target_layer).expect("checked above");
    let order = match spec.kind {
        RankKind::Weights => {
            if target_layer != source.layer + 1 {
                return Err(RankError::NotAdjacent {
                    source_layer: source.layer,
                    target: target_layer,
                });
            }
            let row = net.layer(source.layer).row(source.index - 1);
            order_by_score(row)
        }
        RankKind::Gradient => {
            spec.validate()?;
            let mut mean = vec![0.0; size];
            for x in &spec.reference_inputs {
                let g = net.gradient(source, target_layer, x)?;
                for (m, v) in mean.iter_mut().zip(g) {
                    *m += v;
                }
            }
            let count = spec.reference_inputs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= count);
            order_by_score(&mean)
        }
        RankKind::Random => random_order(spec.seed, source, target_layer, size),
    };
    Ok(Ranking {
        source,
        target_layer,
        order,
    })
}

/// 1-based indices sorted by score descending, ties by ascending index.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=scores.len()).collect();
    order.sort_by(|&a, &b| descending(scores[a - 1], scores[b - 1]).then(a.cmp(&b)));
    order
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or_else(|| b.total_cmp(&a))
}

fn random_order(seed: u64, source: NodeRef, target_layer: usize, size: usize) -> Vec<usize> {
    let mut hasher = Sha256::new();
    hasher.update(RANDOM_TAG);
    for v in [
        seed,
        source.layer as u64,
        source.index as u64,
        target_layer as u64,
    ] {
        hasher.update(v.to_le_bytes());
    }
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);

    let mut order: Vec<usize> = (1..=size).collect();
    for k in (1..size).rev() {
        let j = uniform_below(&mut rng, k as u64 + 1) as usize;
        order.swap(k, j);
    }
    order
}

fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let v = rng.next_u64();
        if v >= threshold {
            return v % bound;
        }
    }
}
