use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use super::tree::{train_tree, TreeNode};
use super::{TrainConfig, WeightingMode};
use crate::error::ForestError;
use crate::records::{Dataset, FeatureInput, FeatureKind, Schema};

/// Weight given to a tree whose bootstrap sample drew every row.
pub const EMPTY_OOB_ACCURACY: f64 = 0.5;

/// The regression target of every model in this crate.
pub const TARGET_SYMBOL: &str = "duration_s";

/// One bootstrap round: `train` holds `n` draws with replacement (in draw
/// order), `oob` the ascending indices never drawn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapRound {
    pub train: Vec<u32>,
    pub oob: Vec<u32>,
}

pub fn bootstrap_split(n: usize, k: usize, seed: u64) -> Result<Vec<BootstrapRound>, ForestError> {
    if k < 1 {
        return Err(ForestError::Config("k must be at least 1".into()));
    }
    if n == 0 {
        return Err(ForestError::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rounds = (0..k)
        .map(|_| {
            let mut drawn = vec![false; n];
            let train: Vec<u32> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    drawn[i] = true;
                    i as u32
                })
                .collect();
            let oob = (0..n as u32).filter(|&i| !drawn[i as usize]).collect();
            BootstrapRound { train, oob }
        })
        .collect();
    Ok(rounds)
}

/// A prediction is correct when its error is within `epsilon` of the target
/// (targets under one second are treated as one second).
#[inline]
pub fn is_correct(prediction: f64, target: f64, epsilon: f64) -> bool {
    (prediction - target).abs() <= epsilon * target.max(1.0)
}

/// Fraction of correct predictions; `None` for an empty sample.
pub fn band_accuracy(predictions: &[f64], targets: &[f64], epsilon: f64) -> Option<f64> {
    if targets.is_empty() {
        return None;
    }
    let correct = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| is_correct(**p, **t, epsilon))
        .count();
    Some(correct as f64 / targets.len() as f64)
}

/// Out-of-bag accuracy `correct / (correct + incorrect)` of one tree.
pub fn tree_accuracy(tree: &TreeNode, m: &FeatureMatrix, oob: &[u32], epsilon: f64) -> f64 {
    if oob.is_empty() {
        return EMPTY_OOB_ACCURACY;
    }
    let correct = oob
        .iter()
        .filter(|&&r| is_correct(tree.predict(&m.row(r)), m.target(r), epsilon))
        .count();
    correct as f64 / oob.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    pub accuracy: f64,
    pub root: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub task: String,
    pub target: String,
    pub config: TrainConfig,
    pub schema: Schema,
    pub trees: Vec<WeightedTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Trains `config.k` trees in parallel. See [`train_forest_with`].
pub fn train_forest(data: &Dataset, config: &TrainConfig) -> Result<ForestModel, ForestError> {
    train_forest_with(data, config, Execution::Parallel)
}

/// Bootstraps, grows and scores every tree. All randomness is drawn up front
/// from `config.seed`, so the model does not depend on `execution`.
pub fn train_forest_with(data: &Dataset, config: &TrainConfig, execution: Execution) -> Result<ForestModel, ForestError> {
    config.validate()?;
    let m = FeatureMatrix::from_dataset(data);
    let rounds = bootstrap_split(m.n_rows(), config.k, config.seed)?;
    let build = |round: &BootstrapRound| {
        let root = train_tree(&m, &round.train, config);
        let accuracy = tree_accuracy(&root, &m, &round.oob, config.accuracy_epsilon);
        WeightedTree { accuracy, root }
    };
    let trees = match execution {
        Execution::Serial => rounds.iter().map(build).collect(),
        Execution::Parallel => rounds.par_iter().map(build).collect(),
    };
    Ok(ForestModel {
        task: data.task.clone(),
        target: TARGET_SYMBOL.to_string(),
        config: config.clone(),
        schema: data.schema.clone(),
        trees,
    })
}

impl ForestModel {
    fn check(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.schema.len() {
            return Err(ForestError::SchemaMismatch {
                expected: self.schema.len(),
                got: x.len(),
            });
        }
        for (spec, &v) in self.schema.features.iter().zip(x) {
            let ok = match spec.kind {
                FeatureKind::Categorical => v >= 0.0 && v.fract() == 0.0,
                FeatureKind::Numeric | FeatureKind::CyclicOrdinal => v.is_finite(),
            };
            if !ok {
                return Err(ForestError::InvalidFeature {
                    feature: spec.name.clone(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn tree_outputs(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.root.predict(x)).collect())
    }

    /// Weighted ensemble output in seconds.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ForestError> {
        let outputs = self.tree_outputs(x)?;
        Ok(self.combine(&outputs))
    }

    pub fn predict_input(&self, input: &FeatureInput) -> Result<f64, ForestError> {
        self.predict(&self.schema.encode(input))
    }

    /// Combines per-tree outputs (in tree order) under the model's weighting mode.
    pub fn combine(&self, outputs: &[f64]) -> f64 {
        let k = outputs.len() as f64;
        let plain = || outputs.iter().sum::<f64>() / k;
        let weighted = || {
            self.trees
                .iter()
                .zip(outputs)
                .map(|(t, h)| t.accuracy * h)
                .sum::<f64>()
        };
        match self.config.weighting_mode {
            WeightingMode::Uniform => plain(),
            WeightingMode::Literal => weighted() / k,
            WeightingMode::Normalized => {
                let total: f64 = self.trees.iter().map(|t| t.accuracy).sum();
                if total > 0.0 {
                    weighted() / total
                } else {
                    plain()
                }
            }
        }
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.trees.iter().map(|t| t.accuracy).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tree::make_leaf;
    use crate::records::FeatureSpec;
    use std::collections::BTreeMap;

    fn stub_model(outputs_and_weights: &[(f64, f64)], mode: WeightingMode) -> ForestModel {
        ForestModel {
            task: "t".into(),
            target: TARGET_SYMBOL.into(),
            config: TrainConfig {
                k: outputs_and_weights.len(),
                weighting_mode: mode,
                ..TrainConfig::default()
            },
            schema: Schema {
                features: vec![FeatureSpec {
                    name: "x".into(),
                    kind: FeatureKind::Numeric,
                }],
                dictionaries: BTreeMap::new(),
            },
            trees: outputs_and_weights
                .iter()
                .map(|&(h, ca)| WeightedTree {
                    accuracy: ca,
                    root: TreeNode::Leaf(make_leaf(&[h], false)),
                })
                .collect(),
        }
    }

    #[test]
    fn weighted_vote_modes() {
        let lit = stub_model(&[(100.0, 0.8), (200.0, 1.0)], WeightingMode::Literal);
        assert!((lit.predict(&[0.0]).unwrap() - 140.0).abs() < 1e-9);
        let norm = stub_model(&[(100.0, 0.8), (200.0, 1.0)], WeightingMode::Normalized);
        assert!((norm.predict(&[0.0]).unwrap() - 280.0 / 1.8).abs() < 1e-9);
        let uni = stub_model(&[(100.0, 0.8), (200.0, 1.0)], WeightingMode::Uniform);
        assert_eq!(uni.predict(&[0.0]).unwrap(), 150.0);
    }

    #[test]
    fn single_full_accuracy_tree_is_identity() {
        for mode in [WeightingMode::Literal, WeightingMode::Normalized] {
            let m = stub_model(&[(321.0, 1.0)], mode);
            assert_eq!(m.predict(&[5.0]).unwrap(), 321.0);
        }
    }

    #[test]
    fn zero_weights_fall_back_to_mean() {
        let m = stub_model(&[(100.0, 0.0), (300.0, 0.0)], WeightingMode::Normalized);
        assert_eq!(m.predict(&[0.0]).unwrap(), 200.0);
    }

    #[test]
    fn schema_mismatch_is_error() {
        let m = stub_model(&[(1.0, 1.0)], WeightingMode::Normalized);
        assert!(matches!(
            m.predict(&[1.0, 2.0]),
            Err(ForestError::SchemaMismatch { expected: 1, got: 2 })
        ));
        assert!(matches!(m.predict(&[f64::NAN]), Err(ForestError::InvalidFeature { .. })));
    }

    #[test]
    fn bootstrap_sizes() {
        let rounds = bootstrap_split(50, 3, 1).unwrap();
        for r in &rounds {
            assert_eq!(r.train.len(), 50);
            assert!(r.oob.iter().all(|i| !r.train.contains(i)));
            let mut seen: Vec<u32> = r.train.clone();
            seen.extend(&r.oob);
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 50);
        }
        let one = bootstrap_split(1, 1, 9).unwrap();
        assert_eq!(one[0], BootstrapRound { train: vec![0], oob: vec![] });
        assert!(bootstrap_split(10, 0, 1).is_err());
        assert!(bootstrap_split(0, 1, 1).is_err());
        assert_eq!(bootstrap_split(50, 3, 1).unwrap(), rounds);
    }

    #[test]
    fn accuracy_counts() {
        let m = FeatureMatrix::new(vec![vec![0.0; 4]], vec![100.0, 100.0, 130.0, 70.0], vec![FeatureKind::Numeric]);
        let tree = TreeNode::Leaf(make_leaf(&[100.0], false));
        assert_eq!(tree_accuracy(&tree, &m, &[0, 1], 0.2), 1.0);
        assert_eq!(tree_accuracy(&tree, &m, &[0, 1, 2, 3], 0.2), 0.5);
        assert_eq!(tree_accuracy(&tree, &m, &[], 0.2), EMPTY_OOB_ACCURACY);
        // 1 s floor on tiny targets
        assert!(is_correct(0.1, 0.0, 0.2));
    }
}
