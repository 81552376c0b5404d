//! Weighted random forest of multi-branch regression trees.
//!
//! Every tree sees all features (no random subspace), leaves average their
//! targets after box-plot noise removal, and each tree votes with its
//! out-of-bag accuracy.

mod denoise;
mod ensemble;
mod io;
mod matrix;
mod split;
mod tree;

pub use denoise::{denoise_leaf, leaf_value, median, tukey_hinges, Denoised, FENCE_FACTOR};
pub use ensemble::{
    band_accuracy, bootstrap_split, is_correct, train_forest, train_forest_with, tree_accuracy, BootstrapRound,
    Execution, ForestModel, WeightedTree, EMPTY_OOB_ACCURACY, TARGET_SYMBOL,
};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use matrix::FeatureMatrix;
pub use split::{
    best_split, best_split_min, best_twoing_cut, node_sse, split_partition, twoing_score, SplitCandidate, SplitRule,
    TargetBins, TwoingScore,
};
pub use tree::{extend_multibranch, make_leaf, train_tree, Branch, BranchDomain, Leaf, PendingBranch, TreeNode};

use serde::{Deserialize, Serialize};

use crate::error::ForestError;

/// How tree outputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// `(1/k)·Σ CA_i·h_i(x)`.
    Literal,
    /// `Σ CA_i·h_i(x) / Σ CA_i`.
    #[default]
    Normalized,
    /// Plain average; ignores the accuracy weights.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of trees.
    pub k: usize,
    pub min_leaf: usize,
    pub max_depth: usize,
    /// Classes for the twoing score.
    pub target_bins: usize,
    /// Relative error band counted as a correct prediction.
    pub accuracy_epsilon: f64,
    pub weighting_mode: WeightingMode,
    /// Box-plot noise removal in leaves.
    pub denoise_leaves: bool,
    /// Upper bound on branches of one multi-branch node.
    pub max_branches: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 100,
            min_leaf: 50,
            max_depth: 16,
            target_bins: 8,
            accuracy_epsilon: 0.20,
            weighting_mode: WeightingMode::Normalized,
            denoise_leaves: true,
            max_branches: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The comparison forest: plain leaf means and unweighted voting.
    pub fn ablated(&self) -> TrainConfig {
        TrainConfig {
            denoise_leaves: false,
            weighting_mode: WeightingMode::Uniform,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        let fail = |m: &str| Err(ForestError::Config(m.to_string()));
        if self.k < 1 {
            return fail("k must be at least 1");
        }
        if self.min_leaf < 1 {
            return fail("min_leaf must be at least 1");
        }
        if self.target_bins < 2 {
            return fail("target_bins must be at least 2");
        }
        if !(self.accuracy_epsilon > 0.0 && self.accuracy_epsilon <= 1.0) {
            return fail("accuracy_epsilon must lie in (0, 1]");
        }
        if self.max_branches < 2 {
            return fail("max_branches must be at least 2");
        }
        Ok(())
    }
}
