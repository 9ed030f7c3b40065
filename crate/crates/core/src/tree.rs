//! Rank projection trees.
//!
//! A tree node is a path of signed branching indices `[b_1, .., b_d]`, each in
//! `{1..B} ∪ {-1..-B}`. The root maps to the output node; a node at depth `d`
//! mapped to network node `n` gets its `2B` children by ranking layer `d + 1`
//! with respect to `n` and taking the top `B` and bottom `B` entries. The
//! parent's image (not the parent path itself) is the ranking source.
//!
//! Children are always enumerated `+1, +2, .., +B, -1, -2, .., -B`, and paths
//! are ordered lexicographically under that ordering. The tree is stored level
//! by level in that order, so the node at position `p` of depth `d` has its
//! children at positions `p * 2B .. (p + 1) * 2B` of depth `d + 1`.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{Network, NodeRef};
use crate::ranking::{rank, RankError, Ranking, RankingSpec};

/// Leaf cap used when the caller does not configure one.
pub const DEFAULT_LEAF_CAP: u64 = 1_000_000;

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("half branching factor must be at least 1")]
    ZeroBranching,
    #[error("half branching factor {b} too large: layer {layer} has {size} nodes and needs B < {size}/2")]
    BranchingTooLarge { b: usize, layer: usize, size: usize },
    #[error("tree would have (2*{b})^{depth} = {leaves} leaves, above the cap of {cap}")]
    LeafCap {
        b: usize,
        depth: usize,
        leaves: String,
        cap: u64,
    },
    #[error("invalid tree path {0}")]
    BadPath(TreePath),
    #[error("input node {0} has no entry in the module map")]
    UnmappedInput(usize),
    #[error("malformed tree file: {0}")]
    Malformed(String),
}

/// A tree node, identified by its branching indices from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreePath(pub Vec<i64>);

impl TreePath {
    pub fn root() -> Self {
        TreePath(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[i64] {
        &self.0
    }

    pub fn parent(&self) -> Option<TreePath> {
        if self.0.is_empty() {
            None
        } else {
            Some(TreePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn child(&self, b: i64) -> TreePath {
        let mut v = self.0.clone();
        v.push(b);
        TreePath(v)
    }

    /// +1 when the product of the branching indices is positive, -1 otherwise.
    pub fn sign(&self) -> i64 {
        if self.0.iter().filter(|&&b| b < 0).count() % 2 == 0 {
            1
        } else {
            -1
        }
    }
}

impl fmt::Display for TreePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "]")
    }
}

/// Branching index for child slot `slot` (0-based) under half branching `b`.
fn branch_of_slot(slot: usize, b: usize) -> i64 {
    if slot < b {
        slot as i64 + 1
    } else {
        -((slot - b) as i64 + 1)
    }
}

fn slot_of_branch(branch: i64, b: usize) -> Option<usize> {
    let mag = branch.unsigned_abs() as usize;
    if branch == 0 || mag > b {
        None
    } else if branch > 0 {
        Some(mag - 1)
    } else {
        Some(b + mag - 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub leaf_cap: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            leaf_cap: DEFAULT_LEAF_CAP,
        }
    }
}

/// Fully materialized tree together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RankProjectionTree {
    half_branch: usize,
    layer_sizes: Vec<usize>,
    spec: RankingSpec,
    network_digest: String,
    /// `levels[d][p]` is the image of the `p`-th depth-`d` path.
    levels: Vec<Vec<NodeRef>>,
}

/// Largest `B` with `2B < N_l` for every non-output layer, or 0 if none exists.
pub fn max_half_branch(layer_sizes: &[usize]) -> usize {
    layer_sizes[1..]
        .iter()
        .map(|&n| n.saturating_sub(1) / 2)
        .min()
        .unwrap_or(0)
}

fn check_branching(layer_sizes: &[usize], b: usize) -> Result<(), TreeError> {
    if b == 0 {
        return Err(TreeError::ZeroBranching);
    }
    for (layer, &size) in layer_sizes.iter().enumerate().skip(1) {
        if 2 * b >= size {
            return Err(TreeError::BranchingTooLarge { b, layer, size });
        }
    }
    Ok(())
}

fn leaf_count(b: usize, depth: usize, cap: u64) -> Result<usize, TreeError> {
    let width = 2 * b as u64;
    match width.checked_pow(depth as u32) {
        Some(n) if n <= cap => Ok(n as usize),
        other => Err(TreeError::LeafCap {
            b,
            depth,
            leaves: match other {
                Some(n) => n.to_string(),
                None => format!("more than {}", u64::MAX),
            },
            cap,
        }),
    }
}

/// Builds the full tree for `net` with half branching factor `b`.
pub fn build_tree(
    net: &Network,
    spec: &RankingSpec,
    b: usize,
    options: BuildOptions,
) -> Result<RankProjectionTree, TreeError> {
    let sizes = net.layer_sizes();
    let depth = net.depth();
    check_branching(&sizes, b)?;
    leaf_count(b, depth, options.leaf_cap)?;
    spec.validate()?;

    let mut levels: Vec<Vec<NodeRef>> = Vec::with_capacity(depth + 1);
    levels.push(vec![NodeRef::output()]);
    // The same network node can be reached by many tree nodes; rank it once.
    let mut cache: HashMap<NodeRef, Ranking> = HashMap::new();
    for d in 0..depth {
        let mut next = Vec::with_capacity(levels[d].len() * 2 * b);
        for &node in &levels[d] {
            let ranking = match cache.entry(node) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(rank(net, spec, node, d + 1)?),
            };
            for slot in 0..2 * b {
                next.push(ranking.quasi_inverse(branch_of_slot(slot, b))?);
            }
        }
        levels.push(next);
    }
    Ok(RankProjectionTree {
        half_branch: b,
        layer_sizes: sizes,
        spec: spec.clone(),
        network_digest: net.digest(),
        levels,
    })
}

impl RankProjectionTree {
    pub fn half_branch(&self) -> usize {
        self.half_branch
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn spec(&self) -> &RankingSpec {
        &self.spec
    }

    pub fn network_digest(&self) -> &str {
        &self.network_digest
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// Images of all depth-`d` paths in enumeration order.
    pub fn level(&self, d: usize) -> &[NodeRef] {
        &self.levels[d]
    }

    fn width(&self) -> usize {
        2 * self.half_branch
    }

    fn position(&self, path: &TreePath) -> Option<usize> {
        if path.len() > self.depth() {
            return None;
        }
        path.indices().iter().try_fold(0usize, |pos, &b| {
            slot_of_branch(b, self.half_branch).map(|s| pos * self.width() + s)
        })
    }

    fn path_at(&self, depth: usize, mut pos: usize) -> TreePath {
        let mut v = vec![0i64; depth];
        for slot in v.iter_mut().rev() {
            *slot = branch_of_slot(pos % self.width(), self.half_branch);
            pos /= self.width();
        }
        TreePath(v)
    }

    /// `φ(t)`, or `None` when `path` is not a node of this tree.
    pub fn phi(&self, path: &TreePath) -> Option<NodeRef> {
        self.position(path).map(|p| self.levels[path.len()][p])
    }

    /// Every `(path, φ(path))`, root first, then depth by depth in enumeration order.
    pub fn nodes(&self) -> impl Iterator<Item = (TreePath, NodeRef)> + '_ {
        self.levels.iter().enumerate().flat_map(move |(d, level)| {
            level
                .iter()
                .enumerate()
                .map(move |(p, &n)| (self.path_at(d, p), n))
        })
    }

    /// All `(2B)^L` leaf paths in enumeration order.
    pub fn leaves(&self) -> Vec<TreePath> {
        let d = self.depth();
        (0..self.levels[d].len())
            .map(|p| self.path_at(d, p))
            .collect()
    }

    /// `φ^{-1}(n)` for every input node `n` in `1..=N_L` (empty when unreached).
    pub fn preimage(&self) -> BTreeMap<usize, Vec<TreePath>> {
        let mut map: BTreeMap<usize, Vec<TreePath>> =
            (1..=self.input_size()).map(|n| (n, Vec::new())).collect();
        let d = self.depth();
        for (p, node) in self.levels[d].iter().enumerate() {
            map.get_mut(&node.index)
                .expect("leaf images lie on the input layer")
                .push(self.path_at(d, p));
        }
        map
    }

    /// `S⁺_t` and `S⁻_t` for every tree node above the leaves.
    ///
    /// Records are emitted per tree node, so identical groupings reached
    /// through different paths appear more than once.
    pub fn extract_groups(&self) -> Vec<GroupRecord> {
        let depth = self.depth();
        let leaves = &self.levels[depth];
        let leaf_signs: Vec<i64> = (0..leaves.len())
            .map(|p| self.path_at(depth, p).sign())
            .collect();
        let mut out = Vec::new();
        for d in 0..depth {
            let span = self.width().pow((depth - d) as u32);
            for (p, &node) in self.levels[d].iter().enumerate() {
                let path = self.path_at(d, p);
                // The product below t has the sign of the whole leaf path divided by t's own sign.
                let prefix = path.sign();
                let mut s_plus = BTreeSet::new();
                let mut s_minus = BTreeSet::new();
                for q in p * span..(p + 1) * span {
                    if leaf_signs[q] * prefix > 0 {
                        s_plus.insert(leaves[q].index);
                    } else {
                        s_minus.insert(leaves[q].index);
                    }
                }
                out.push(GroupRecord {
                    path,
                    layer: d,
                    node_index: node.index,
                    s_plus,
                    s_minus,
                });
            }
        }
        out
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            format_version: TREE_FORMAT_VERSION,
            network_digest: self.network_digest.clone(),
            spec: self.spec.clone(),
            half_branch: self.half_branch,
            layer_sizes: self.layer_sizes.clone(),
            nodes: self
                .nodes()
                .map(|(path, n)| TreeFileNode {
                    layer: path.len(),
                    path,
                    node_index: n.index,
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from its file form, checking every structural law.
    pub fn from_file(file: TreeFile) -> Result<Self, TreeError> {
        let bad = |msg: String| TreeError::Malformed(msg);
        if file.format_version != TREE_FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let sizes = file.layer_sizes;
        if sizes.len() < 2 || sizes[0] != 1 || sizes.contains(&0) {
            return Err(bad(format!("invalid layer_sizes {sizes:?}")));
        }
        let b = file.half_branch;
        check_branching(&sizes, b)?;
        let depth = sizes.len() - 1;
        let expected_nodes: usize = (0..=depth).map(|d| (2 * b).pow(d as u32)).sum();
        if file.nodes.len() != expected_nodes {
            return Err(bad(format!(
                "expected {expected_nodes} nodes, found {}",
                file.nodes.len()
            )));
        }
        let mut tree = RankProjectionTree {
            half_branch: b,
            layer_sizes: sizes,
            spec: file.spec,
            network_digest: file.network_digest,
            levels: (0..=depth).map(|_| Vec::new()).collect(),
        };
        for entry in file.nodes {
            let d = entry.path.len();
            if d > depth || entry.layer != d {
                return Err(TreeError::BadPath(entry.path));
            }
            let expected = tree.path_at(d, tree.levels[d].len());
            if entry.path != expected {
                return Err(bad(format!(
                    "node {} out of order (expected {expected})",
                    entry.path
                )));
            }
            if entry.node_index == 0 || entry.node_index > tree.layer_sizes[d] {
                return Err(bad(format!(
                    "node index {} out of range on layer {d}",
                    entry.node_index
                )));
            }
            tree.levels[d].push(NodeRef::new(d, entry.node_index));
        }
        if tree.levels[0][0] != NodeRef::output() {
            return Err(bad("root must map to the output node".into()));
        }
        Ok(tree)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("tree file always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let file: TreeFile =
            serde_json::from_str(text).map_err(|e| TreeError::Malformed(e.to_string()))?;
        Self::from_file(file)
    }
}

/// Serialized tree: nodes listed root first, then level by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub format_version: u32,
    pub network_digest: String,
    pub spec: RankingSpec,
    pub half_branch: usize,
    /// `N_0 .. N_L`, output first.
    pub layer_sizes: Vec<usize>,
    pub nodes: Vec<TreeFileNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFileNode {
    pub path: TreePath,
    pub layer: usize,
    pub node_index: usize,
}

/// Positive and negative input groupings of one tree node.
///
/// `M` is the member type: input node indices after extraction, gene names
/// after [`expand_with_modules`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord<M: Ord = usize> {
    pub path: TreePath,
    pub layer: usize,
    /// Index of `φ(path)` on `layer`.
    pub node_index: usize,
    pub s_plus: BTreeSet<M>,
    pub s_minus: BTreeSet<M>,
}

impl<M: Ord> GroupRecord<M> {
    pub fn mapped_node(&self) -> NodeRef {
        NodeRef::new(self.layer, self.node_index)
    }
}

/// One input node's entry in a module map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleEntry {
    pub module_id: String,
    pub genes: Vec<String>,
}

/// Input node index (1-based) to module membership.
pub type ModuleMap = BTreeMap<usize, ModuleEntry>;

/// Replaces each input index in the groupings by the genes of its module.
pub fn expand_with_modules(
    groups: &[GroupRecord],
    modules: &ModuleMap,
) -> Result<Vec<GroupRecord<String>>, TreeError> {
    let expand = |set: &BTreeSet<usize>| -> Result<BTreeSet<String>, TreeError> {
        let mut genes = BTreeSet::new();
        for idx in set {
            let entry = modules.get(idx).ok_or(TreeError::UnmappedInput(*idx))?;
            genes.extend(entry.genes.iter().cloned());
        }
        Ok(genes)
    };
    groups
        .iter()
        .map(|g| {
            Ok(GroupRecord {
                path: g.path.clone(),
                layer: g.layer,
                node_index: g.node_index,
                s_plus: expand(&g.s_plus)?,
                s_minus: expand(&g.s_minus)?,
            })
        })
        .collect()
}
