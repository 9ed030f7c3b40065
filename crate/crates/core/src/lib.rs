//! Rank projection trees over trained feed-forward networks.
//!
//! A tree is grown from the output node by repeatedly ranking the next layer
//! with respect to the current node and keeping the top `B` and bottom `B`
//! nodes. Its leaves land on the input layer and yield per-input salience
//! maps; every internal node yields a positive and a negative input grouping.
//!
//! Modules:
//! - [`netmodel`]: network representation, weight files, forward pass and gradients
//! - [`ranking`]: ranking functions and their quasi-inverse
//! - [`tree`]: tree construction, pre-images and groupings
//! - [`salience`]: cumulative rank-scores and salience aggregation
//! - [`stats`]: ranking distance, enrichment, ECDF and KS tests

pub mod netmodel;
pub mod ranking;
pub mod salience;
pub mod stats;
pub mod tree;

pub use netmodel::{load_network, Activation, DenseLayer, NetError, Network, NodeRef};
pub use ranking::{rank, RankError, RankKind, Ranking, RankingSpec, DEFAULT_SEED};
pub use salience::{
    cumulative_score, gradient_salience, rank_inputs, salience_map, Aggregator, SalienceMap,
    SalienceMethod,
};
pub use tree::{
    build_tree, expand_with_modules, BuildOptions, GroupRecord, ModuleEntry, ModuleMap,
    RankProjectionTree, TreeError, TreePath,
};
