//! Multi-branch regression trees.
//!
//! A node is first cut in two by least squares. Each side is then re-searched
//! on the same feature by twoing score; a side whose best score reaches the
//! node's own score is cut again and its halves become siblings of the
//! remaining branches, so one feature can fan out into several intervals (or
//! category blocks) at a single node. A feature used at a node is not offered
//! again further down that path.

use serde::{Deserialize, Serialize};

use super::denoise::{denoise_leaf, leaf_value, median};
use super::matrix::FeatureMatrix;
use super::split::{best_split_min, best_twoing_cut, split_partition, twoing_score, SplitRule, TargetBins};
use super::TrainConfig;

/// The part of a feature's domain handled by one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchDomain {
    /// `lower < value <= upper`; `None` bounds are unbounded.
    Interval { lower: Option<f64>, upper: Option<f64> },
    Categories(Vec<u32>),
}

impl BranchDomain {
    pub fn contains(&self, value: f64) -> bool {
        match self {
            BranchDomain::Interval { lower, upper } => {
                lower.is_none_or(|lo| value > lo) && upper.is_none_or(|hi| value <= hi)
            }
            BranchDomain::Categories(ids) => ids.iter().any(|&c| c as f64 == value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub mean_s: f64,
    pub kept_count: usize,
    pub removed_count: usize,
    pub il: f64,
    pub ol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub domain: BranchDomain,
    pub child: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        /// Branch taken by values no branch claims (unseen categories, NaN):
        /// the one that received the most training rows.
        default_branch: usize,
        branches: Vec<Branch>,
    },
    Leaf(Leaf),
}

impl TreeNode {
    pub fn route(&self, x: &[f64]) -> &Leaf {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(leaf) => return leaf,
                TreeNode::Internal {
                    feature,
                    default_branch,
                    branches,
                } => {
                    let v = x[*feature];
                    let i = branches
                        .iter()
                        .position(|b| b.domain.contains(v))
                        .unwrap_or(*default_branch);
                    node = &branches[i].child;
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.route(x).mean_s
    }

    pub fn leaves(&self) -> Vec<&Leaf> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf(l) => out.push(l),
                TreeNode::Internal { branches, .. } => {
                    stack.extend(branches.iter().rev().map(|b| &b.child))
                }
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Internal { branches, .. } => {
                1 + branches.iter().map(|b| b.child.depth()).max().unwrap_or(0)
            }
        }
    }

    /// Visits every internal node as `(feature, branches)`.
    pub fn for_each_internal(&self, f: &mut impl FnMut(usize, &[Branch])) {
        if let TreeNode::Internal {
            feature, branches, ..
        } = self
        {
            f(*feature, branches);
            for b in branches {
                b.child.for_each_internal(f);
            }
        }
    }
}

/// Builds a leaf from the targets that reached it.
pub fn make_leaf(targets: &[f64], denoise: bool) -> Leaf {
    if targets.is_empty() {
        return Leaf {
            mean_s: 0.0,
            kept_count: 0,
            removed_count: 0,
            il: 0.0,
            ol: 0.0,
        };
    }
    if denoise {
        let d = denoise_leaf(targets);
        let mean_s = if d.kept.is_empty() {
            median(targets)
        } else {
            leaf_value(&d.kept)
        };
        Leaf {
            mean_s,
            kept_count: d.kept.len(),
            removed_count: d.removed(targets.len()),
            il: d.il,
            ol: d.ol,
        }
    } else {
        let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Leaf {
            mean_s: leaf_value(targets),
            kept_count: targets.len(),
            removed_count: 0,
            il: lo,
            ol: hi,
        }
    }
}

/// A branch whose domain is fixed but whose subtree is not grown yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingBranch {
    pub domain: BranchDomain,
    pub rows: Vec<u32>,
}

fn split_domain(domain: &BranchDomain, rule: &SplitRule) -> (BranchDomain, BranchDomain) {
    match (domain, rule) {
        (BranchDomain::Interval { lower, upper }, SplitRule::Threshold(t)) => (
            BranchDomain::Interval {
                lower: *lower,
                upper: Some(*t),
            },
            BranchDomain::Interval {
                lower: Some(*t),
                upper: *upper,
            },
        ),
        (BranchDomain::Categories(_), SplitRule::CategoryCut { order, position }) => {
            let mut left = order[..*position].to_vec();
            let mut right = order[*position..].to_vec();
            left.sort_unstable();
            right.sort_unstable();
            (BranchDomain::Categories(left), BranchDomain::Categories(right))
        }
        _ => unreachable!("rule kind always matches the feature kind"),
    }
}

/// Widens a freshly cut node into a multi-branch node. Each branch is
/// re-searched on `feature` by twoing score under the node's classes `bins`;
/// when its best score is positive and at least `parent_score`, the branch is
/// replaced by its two halves and the left half is examined next. Stops at
/// `config.max_branches`.
#[allow(clippy::too_many_arguments)]
pub fn extend_multibranch(
    m: &FeatureMatrix,
    feature: usize,
    rule: &SplitRule,
    left_rows: Vec<u32>,
    right_rows: Vec<u32>,
    bins: &TargetBins,
    parent_score: f64,
    config: &TrainConfig,
) -> Vec<PendingBranch> {
    let whole = match rule {
        SplitRule::Threshold(_) => BranchDomain::Interval {
            lower: None,
            upper: None,
        },
        SplitRule::CategoryCut { order, .. } => BranchDomain::Categories(order.clone()),
    };
    let (l, r) = split_domain(&whole, rule);
    let mut branches = vec![
        PendingBranch {
            domain: l,
            rows: left_rows,
        },
        PendingBranch {
            domain: r,
            rows: right_rows,
        },
    ];

    let min_leaf = config.min_leaf.max(1);
    let mut i = 0;
    while i < branches.len() && branches.len() < config.max_branches {
        let rows = &branches[i].rows;
        let resplit = if rows.len() >= 2 * min_leaf {
            best_twoing_cut(m, rows, feature, bins, min_leaf)
                .filter(|(_, phi)| *phi > 0.0 && *phi >= parent_score - 1e-12)
        } else {
            None
        };
        match resplit {
            Some((rule, _)) => {
                let branch = branches.remove(i);
                let (ld, rd) = split_domain(&branch.domain, &rule);
                let (lr, rr): (Vec<u32>, Vec<u32>) = branch
                    .rows
                    .iter()
                    .partition(|&&r| rule.goes_left(m.value(r, feature)));
                branches.insert(i, PendingBranch { domain: rd, rows: rr });
                branches.insert(i, PendingBranch { domain: ld, rows: lr });
            }
            None => i += 1,
        }
    }
    branches
}

/// Grows one tree on `rows` (a bootstrap sample, possibly with repeats).
pub fn train_tree(m: &FeatureMatrix, rows: &[u32], config: &TrainConfig) -> TreeNode {
    let mut used = vec![false; m.n_features()];
    grow(m, rows.to_vec(), 0, &mut used, config)
}

fn grow(m: &FeatureMatrix, rows: Vec<u32>, depth: usize, used: &mut [bool], config: &TrainConfig) -> TreeNode {
    let leaf = |rows: &[u32]| TreeNode::Leaf(make_leaf(&m.targets_of(rows), config.denoise_leaves));
    let min_leaf = config.min_leaf.max(1);
    if rows.len() < 2 * min_leaf || depth >= config.max_depth {
        return leaf(&rows);
    }
    let allowed: Vec<usize> = (0..m.n_features()).filter(|&f| !used[f]).collect();
    let Some(candidate) = best_split_min(m, &rows, &allowed, min_leaf) else {
        return leaf(&rows);
    };
    let (left, right) = split_partition(m, &rows, &candidate);
    let bins = TargetBins::equal_frequency(&m.targets_of(&rows), config.target_bins);
    let parent_score = twoing_score(&m.targets_of(&left), &m.targets_of(&right), &bins).value;
    let pending = extend_multibranch(m, candidate.feature, &candidate.rule, left, right, &bins, parent_score, config);

    let default_branch = pending
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.rows.len().cmp(&b.1.rows.len()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    used[candidate.feature] = true;
    let branches = pending
        .into_iter()
        .map(|p| Branch {
            domain: p.domain,
            child: grow(m, p.rows, depth + 1, used, config),
        })
        .collect();
    used[candidate.feature] = false;
    TreeNode::Internal {
        feature: candidate.feature,
        default_branch,
        branches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::FeatureKind;

    fn config(min_leaf: usize) -> TrainConfig {
        TrainConfig {
            min_leaf,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_targets_make_single_leaf() {
        let m = FeatureMatrix::new(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![9.0; 4], vec![FeatureKind::Numeric]);
        let t = train_tree(&m, &m.all_rows(), &config(1));
        assert_eq!(t, TreeNode::Leaf(make_leaf(&[9.0; 4], true)));
        assert_eq!(t.predict(&[100.0]), 9.0);
    }

    #[test]
    fn binary_feature_gives_depth_one() {
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let ys: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 100.0 } else { 500.0 } + ((i * 7919) % 11) as f64 * 0.1 - 0.5)
            .collect();
        let m = FeatureMatrix::new(vec![xs], ys, vec![FeatureKind::Categorical]);
        let t = train_tree(&m, &m.all_rows(), &config(50));
        assert_eq!(t.depth(), 1);
        assert!((t.predict(&[0.0]) - 100.0).abs() <= 0.5);
        assert!((t.predict(&[1.0]) - 500.0).abs() <= 0.5);
    }

    #[test]
    fn every_row_reaches_one_leaf() {
        let n = 300u32;
        let cols = vec![
            (0..n).map(|i| (i % 24) as f64).collect(),
            (0..n).map(|i| (i % 3) as f64).collect(),
        ];
        let ys: Vec<f64> = (0..n).map(|i| ((i * 31) % 97) as f64 + (i % 24) as f64 * 10.0).collect();
        let m = FeatureMatrix::new(cols, ys, vec![FeatureKind::CyclicOrdinal, FeatureKind::Categorical]);
        let t = train_tree(&m, &m.all_rows(), &config(5));
        let leaves = t.leaves();
        let mut hits = vec![0usize; leaves.len()];
        for r in m.all_rows() {
            let x = m.row(r);
            let leaf = t.route(&x) as *const Leaf;
            let i = leaves.iter().position(|l| std::ptr::eq(*l, leaf)).unwrap();
            hits[i] += 1;
        }
        assert_eq!(hits.iter().sum::<usize>(), n as usize);
    }

    #[test]
    fn unseen_category_takes_default_branch() {
        let xs = vec![0.0, 0.0, 0.0, 1.0, 1.0];
        let ys = vec![10.0, 10.0, 10.0, 50.0, 50.0];
        let m = FeatureMatrix::new(vec![xs], ys, vec![FeatureKind::Categorical]);
        let t = train_tree(&m, &m.all_rows(), &config(1));
        assert_eq!(t.predict(&[7.0]), 10.0);
        assert_eq!(t.predict(&[f64::NAN]), 10.0);
    }

    #[test]
    fn no_extension_when_children_score_lower() {
        // Left side is pure, right side is split well below the parent score.
        let xs: Vec<f64> = (0..8).map(f64::from).collect();
        let ys = vec![1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 10.5];
        let m = FeatureMatrix::new(vec![xs], ys, vec![FeatureKind::Numeric]);
        let rows = m.all_rows();
        let c = best_split_min(&m, &rows, &[0], 1).unwrap();
        let (l, r) = split_partition(&m, &rows, &c);
        let bins = TargetBins::equal_frequency(&m.targets_of(&rows), 8);
        let phi = twoing_score(&m.targets_of(&l), &m.targets_of(&r), &bins).value;
        let out = extend_multibranch(&m, 0, &c.rule, l, r, &bins, phi, &config(1));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn three_hour_regimes_become_three_branches() {
        let mut hours = Vec::new();
        let mut ys = Vec::new();
        for rep in 0..10 {
            for h in 0..24 {
                hours.push(h as f64);
                let base = match h {
                    0..=7 => 100.0,
                    8..=15 => 500.0,
                    _ => 900.0,
                };
                ys.push(base + (rep % 3) as f64);
            }
        }
        let m = FeatureMatrix::new(vec![hours], ys, vec![FeatureKind::CyclicOrdinal]);
        let t = train_tree(&m, &m.all_rows(), &config(10));
        let TreeNode::Internal { branches, .. } = &t else {
            panic!("expected internal root")
        };
        let domains: Vec<_> = branches.iter().map(|b| b.domain.clone()).collect();
        assert_eq!(
            domains,
            vec![
                BranchDomain::Interval { lower: None, upper: Some(7.5) },
                BranchDomain::Interval { lower: Some(7.5), upper: Some(15.5) },
                BranchDomain::Interval { lower: Some(15.5), upper: None },
            ]
        );
    }
}
