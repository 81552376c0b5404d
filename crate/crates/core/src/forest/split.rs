//! Split search: least-squares binary cuts and the twoing score used to grow
//! multi-branch nodes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use crate::records::FeatureKind;

/// Per-feature split evaluation fans out over threads above this many rows.
const PARALLEL_SPLIT_ROWS: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Left iff `value <= threshold`.
    Threshold(f64),
    /// Categories sorted by mean target; left iff the value is one of the
    /// first `position` entries of `order`.
    CategoryCut { order: Vec<u32>, position: usize },
}

impl SplitRule {
    pub fn goes_left(&self, value: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => value <= *t,
            SplitRule::CategoryCut { order, position } => {
                order[..*position].iter().any(|&c| c as f64 == value)
            }
        }
    }

}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    /// `SSE_left + SSE_right`.
    pub loss: f64,
    pub left_mean: f64,
    pub right_mean: f64,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    fn push(&mut self, y: f64) {
        self.n += 1.0;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn sse(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            (self.sumsq - self.sum * self.sum / self.n).max(0.0)
        }
    }

    fn minus(&self, other: &Moments) -> Moments {
        Moments {
            n: self.n - other.n,
            sum: self.sum - other.sum,
            sumsq: self.sumsq - other.sumsq,
        }
    }
}

fn mean_of(m: &FeatureMatrix, rows: &[u32]) -> f64 {
    rows.iter().map(|&r| m.target(r)).sum::<f64>() / rows.len() as f64
}

/// Sum of squared deviations from the mean of `rows`' targets.
pub fn node_sse(m: &FeatureMatrix, rows: &[u32]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mean = mean_of(m, rows);
    rows.iter().map(|&r| (m.target(r) - mean).powi(2)).sum()
}

/// Minimum-SSE binary cut over `allowed` features, or `None` when no cut
/// lowers the node's SSE.
pub fn best_split(m: &FeatureMatrix, rows: &[u32], allowed: &[usize]) -> Option<SplitCandidate> {
    best_split_min(m, rows, allowed, 1)
}

/// As [`best_split`], considering only cuts that leave at least `min_child`
/// rows on each side.
pub fn best_split_min(
    m: &FeatureMatrix,
    rows: &[u32],
    allowed: &[usize],
    min_child: usize,
) -> Option<SplitCandidate> {
    if rows.is_empty() || allowed.is_empty() {
        return None;
    }
    let parent = node_sse(m, rows);
    if parent <= 0.0 {
        return None;
    }
    let tol = 1e-9 * parent;
    let mean = mean_of(m, rows);
    let min_child = min_child.max(1);

    let search = |&f: &usize| sse_cut(m, rows, f, min_child, mean, tol);
    let per_feature: Vec<Option<SplitCandidate>> = if rows.len() >= PARALLEL_SPLIT_ROWS {
        allowed.par_iter().map(search).collect()
    } else {
        allowed.iter().map(search).collect()
    };

    // Fold in ascending feature order so ties resolve to the lower index no
    // matter how the per-feature searches were scheduled.
    let mut order: Vec<usize> = (0..allowed.len()).collect();
    order.sort_by_key(|&i| allowed[i]);
    let mut best: Option<SplitCandidate> = None;
    for i in order {
        if let Some(c) = &per_feature[i] {
            let better = match &best {
                None => true,
                Some(b) => c.loss < b.loss - tol,
            };
            if better {
                best = Some(c.clone());
            }
        }
    }
    best.filter(|b| b.loss < parent - tol)
}

fn sse_cut(
    m: &FeatureMatrix,
    rows: &[u32],
    feature: usize,
    min_child: usize,
    mean: f64,
    tol: f64,
) -> Option<SplitCandidate> {
    match m.kind(feature) {
        FeatureKind::Categorical => categorical_sse_cut(m, rows, feature, min_child, mean, tol),
        FeatureKind::Numeric | FeatureKind::CyclicOrdinal => {
            ordered_sse_cut(m, rows, feature, min_child, mean, tol)
        }
    }
}

fn ordered_sse_cut(
    m: &FeatureMatrix,
    rows: &[u32],
    feature: usize,
    min_child: usize,
    mean: f64,
    tol: f64,
) -> Option<SplitCandidate> {
    let mut pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|&r| (m.value(r, feature), m.target(r) - mean))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = Moments::default();
    for &(_, y) in &pairs {
        total.push(y);
    }
    let n = pairs.len();
    let mut left = Moments::default();
    let mut best: Option<(f64, f64, Moments)> = None;
    for i in 0..n - 1 {
        left.push(pairs[i].1);
        if pairs[i].0 == pairs[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        if nl < min_child || n - nl < min_child {
            continue;
        }
        let right = total.minus(&left);
        let loss = left.sse() + right.sse();
        if best.is_none_or(|(b, _, _)| loss < b - tol) {
            let threshold = pairs[i].0 + (pairs[i + 1].0 - pairs[i].0) / 2.0;
            best = Some((loss, threshold, left));
        }
    }
    best.map(|(loss, threshold, left)| {
        let right = total.minus(&left);
        SplitCandidate {
            feature,
            rule: SplitRule::Threshold(threshold),
            loss,
            left_mean: mean + left.sum / left.n,
            right_mean: mean + right.sum / right.n,
        }
    })
}

/// Categories present in `rows`, ordered by ascending mean target (ties by id),
/// with their centred moments.
fn categories_by_mean(m: &FeatureMatrix, rows: &[u32], feature: usize, mean: f64) -> Vec<(u32, Moments)> {
    let mut by_cat: BTreeMap<u32, Moments> = BTreeMap::new();
    for &r in rows {
        by_cat
            .entry(m.value(r, feature) as u32)
            .or_default()
            .push(m.target(r) - mean);
    }
    let mut cats: Vec<(u32, Moments)> = by_cat.into_iter().collect();
    cats.sort_by(|a, b| {
        (a.1.sum / a.1.n)
            .total_cmp(&(b.1.sum / b.1.n))
            .then(a.0.cmp(&b.0))
    });
    cats
}

fn categorical_sse_cut(
    m: &FeatureMatrix,
    rows: &[u32],
    feature: usize,
    min_child: usize,
    mean: f64,
    tol: f64,
) -> Option<SplitCandidate> {
    let cats = categories_by_mean(m, rows, feature, mean);
    if cats.len() < 2 {
        return None;
    }
    let mut total = Moments::default();
    for (_, c) in &cats {
        total.n += c.n;
        total.sum += c.sum;
        total.sumsq += c.sumsq;
    }
    let mut left = Moments::default();
    let mut best: Option<(f64, usize, Moments)> = None;
    for (pos, (_, c)) in cats.iter().enumerate().take(cats.len() - 1) {
        left.n += c.n;
        left.sum += c.sum;
        left.sumsq += c.sumsq;
        let right = total.minus(&left);
        if (left.n as usize) < min_child || (right.n as usize) < min_child {
            continue;
        }
        let loss = left.sse() + right.sse();
        if best.is_none_or(|(b, _, _)| loss < b - tol) {
            best = Some((loss, pos + 1, left));
        }
    }
    best.map(|(loss, position, left)| {
        let right = total.minus(&left);
        SplitCandidate {
            feature,
            rule: SplitRule::CategoryCut {
                order: cats.iter().map(|(id, _)| *id).collect(),
                position,
            },
            loss,
            left_mean: mean + left.sum / left.n,
            right_mean: mean + right.sum / right.n,
        }
    })
}

/// Applies a cut: left holds rows with `value <= threshold` (or in the left
/// category block), right holds the rest. Input order is kept on both sides.
pub fn split_partition(m: &FeatureMatrix, rows: &[u32], candidate: &SplitCandidate) -> (Vec<u32>, Vec<u32>) {
    rows.iter()
        .partition(|&&r| candidate.rule.goes_left(m.value(r, candidate.feature)))
}

/// Equal-frequency discretisation of a node's targets, used as the classes of
/// the twoing score.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBins {
    edges: Vec<f64>,
}

impl TargetBins {
    pub fn equal_frequency(targets: &[f64], classes: usize) -> Self {
        let classes = classes.max(1);
        if targets.is_empty() {
            return TargetBins { edges: Vec::new() };
        }
        let mut sorted = targets.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let edges = (1..classes).map(|j| sorted[(j * n / classes).min(n - 1)]).collect();
        TargetBins { edges }
    }

    /// Explicit ascending interior edges; class `j` is `[edge_{j-1}, edge_j)`.
    pub fn from_edges(edges: Vec<f64>) -> Self {
        TargetBins { edges }
    }

    pub fn n_classes(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn class_of(&self, y: f64) -> usize {
        self.edges.partition_point(|&e| e <= y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoingScore {
    pub value: f64,
    pub p_left: f64,
    pub p_right: f64,
    pub class_probs_left: Vec<f64>,
    pub class_probs_right: Vec<f64>,
}

/// `2·P_L·P_R·Σ_j |p(c_j|L) − p(c_j|R)|` with classes given by `bins`.
/// Zero when either side is empty.
pub fn twoing_score(left: &[f64], right: &[f64], bins: &TargetBins) -> TwoingScore {
    let k = bins.n_classes();
    let histogram = |ys: &[f64]| {
        let mut h = vec![0.0; k];
        for &y in ys {
            h[bins.class_of(y)] += 1.0;
        }
        if !ys.is_empty() {
            for p in &mut h {
                *p /= ys.len() as f64;
            }
        }
        h
    };
    let n = (left.len() + right.len()) as f64;
    let (p_left, p_right) = if n == 0.0 {
        (0.5, 0.5)
    } else {
        (left.len() as f64 / n, right.len() as f64 / n)
    };
    let class_probs_left = histogram(left);
    let class_probs_right = histogram(right);
    let value = if left.is_empty() || right.is_empty() {
        0.0
    } else {
        let spread: f64 = class_probs_left
            .iter()
            .zip(&class_probs_right)
            .map(|(a, b)| (a - b).abs())
            .sum();
        2.0 * p_left * p_right * spread
    };
    TwoingScore {
        value,
        p_left,
        p_right,
        class_probs_left,
        class_probs_right,
    }
}

/// Best cut of `rows` on one feature by twoing score under the given classes.
/// Returns the rule and its score.
pub fn best_twoing_cut(
    m: &FeatureMatrix,
    rows: &[u32],
    feature: usize,
    bins: &TargetBins,
    min_child: usize,
) -> Option<(SplitRule, f64)> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let min_child = min_child.max(1);
    let k = bins.n_classes();

    // (sort key, class) per row, with the candidate cut positions in that order.
    let (keyed, order): (Vec<(f64, usize)>, Option<Vec<u32>>) = match m.kind(feature) {
        FeatureKind::Categorical => {
            let cats = categories_by_mean(m, rows, feature, 0.0);
            let rank: BTreeMap<u32, usize> =
                cats.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
            let mut keyed: Vec<(f64, usize)> = rows
                .iter()
                .map(|&r| (rank[&(m.value(r, feature) as u32)] as f64, bins.class_of(m.target(r))))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            (keyed, Some(cats.iter().map(|(id, _)| *id).collect()))
        }
        FeatureKind::Numeric | FeatureKind::CyclicOrdinal => {
            let mut keyed: Vec<(f64, usize)> = rows
                .iter()
                .map(|&r| (m.value(r, feature), bins.class_of(m.target(r))))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            (keyed, None)
        }
    };

    let mut total = vec![0usize; k];
    for &(_, c) in &keyed {
        total[c] += 1;
    }
    let mut left = vec![0usize; k];
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n - 1 {
        left[keyed[i].1] += 1;
        if keyed[i].0 == keyed[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        let nr = n - nl;
        if nl < min_child || nr < min_child {
            continue;
        }
        let spread: f64 = (0..k)
            .map(|j| (left[j] as f64 / nl as f64 - (total[j] - left[j]) as f64 / nr as f64).abs())
            .sum();
        let phi = 2.0 * (nl as f64 / n as f64) * (nr as f64 / n as f64) * spread;
        if best.is_none_or(|(b, _)| phi > b + 1e-12) {
            best = Some((phi, i));
        }
    }
    best.map(|(phi, i)| {
        let rule = match &order {
            Some(order) => SplitRule::CategoryCut {
                order: order.clone(),
                position: keyed[i].0 as usize + 1,
            },
            None => SplitRule::Threshold(keyed[i].0 + (keyed[i + 1].0 - keyed[i].0) / 2.0),
        };
        (rule, phi)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_feature(xs: &[f64], ys: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(vec![xs.to_vec()], ys.to_vec(), vec![FeatureKind::Numeric])
    }

    #[test]
    fn separable_targets() {
        let m = one_feature(&[1.0, 2.0, 3.0, 4.0], &[10.0, 10.0, 20.0, 20.0]);
        let c = best_split(&m, &m.all_rows(), &[0]).unwrap();
        assert_eq!(c.rule, SplitRule::Threshold(2.5));
        assert_eq!(c.loss, 0.0);
        assert_eq!((c.left_mean, c.right_mean), (10.0, 20.0));
        let (l, r) = split_partition(&m, &m.all_rows(), &c);
        assert_eq!((l.len(), r.len()), (2, 2));
    }

    #[test]
    fn constant_targets_have_no_split() {
        let m = one_feature(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]);
        assert!(best_split(&m, &m.all_rows(), &[0]).is_none());
    }

    #[test]
    fn no_features_no_split() {
        let m = one_feature(&[1.0, 2.0], &[1.0, 9.0]);
        assert!(best_split(&m, &m.all_rows(), &[]).is_none());
    }

    #[test]
    fn constant_feature_has_no_split() {
        let m = one_feature(&[3.0, 3.0, 3.0], &[1.0, 2.0, 9.0]);
        assert!(best_split(&m, &m.all_rows(), &[0]).is_none());
    }

    #[test]
    fn cut_below_minimum_sends_everything_right() {
        let m = one_feature(&[1.0, 2.0, 3.0, 4.0], &[10.0, 10.0, 20.0, 20.0]);
        let c = SplitCandidate {
            feature: 0,
            rule: SplitRule::Threshold(0.5),
            loss: 0.0,
            left_mean: 0.0,
            right_mean: 0.0,
        };
        let (l, r) = split_partition(&m, &m.all_rows(), &c);
        assert!(l.is_empty());
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn min_child_limits_cuts() {
        let m = one_feature(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0, 10.0, 10.0, 10.0, 10.0]);
        let c = best_split(&m, &m.all_rows(), &[0]).unwrap();
        assert_eq!(c.rule, SplitRule::Threshold(1.5));
        let c = best_split_min(&m, &m.all_rows(), &[0], 2).unwrap();
        assert_eq!(c.rule, SplitRule::Threshold(2.5));
    }

    #[test]
    fn ties_prefer_lower_feature_then_lower_threshold() {
        // Both features separate the targets identically.
        let m = FeatureMatrix::new(
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0]],
            vec![1.0, 1.0, 5.0, 5.0],
            vec![FeatureKind::Numeric, FeatureKind::Numeric],
        );
        let c = best_split(&m, &m.all_rows(), &[1, 0]).unwrap();
        assert_eq!(c.feature, 0);
        // Symmetric targets: cuts at 1.5 and 3.5 give equal loss.
        let m = one_feature(&[1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 5.0, 10.0]);
        let c = best_split(&m, &m.all_rows(), &[0]).unwrap();
        assert_eq!(c.rule, SplitRule::Threshold(1.5));
    }

    #[test]
    fn categorical_orders_by_mean() {
        let m = FeatureMatrix::new(
            vec![vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]],
            vec![50.0, 50.0, 10.0, 10.0, 48.0, 50.0],
            vec![FeatureKind::Categorical],
        );
        let c = best_split(&m, &m.all_rows(), &[0]).unwrap();
        assert_eq!(
            c.rule,
            SplitRule::CategoryCut {
                order: vec![1, 2, 0],
                position: 1
            }
        );
        assert!(c.rule.goes_left(1.0));
        assert!(!c.rule.goes_left(0.0));
        assert!((c.loss - 3.0).abs() < 1e-9);
    }

    #[test]
    fn twoing_identical_histograms_is_zero() {
        let bins = TargetBins::from_edges(vec![10.0, 20.0]);
        let s = twoing_score(&[5.0, 15.0, 25.0], &[6.0, 16.0, 26.0], &bins);
        assert_eq!(s.value, 0.0);
        assert!((s.p_left + s.p_right - 1.0).abs() < 1e-12);
    }

    #[test]
    fn twoing_disjoint_halves_is_one() {
        let bins = TargetBins::from_edges(vec![10.0]);
        let s = twoing_score(&[1.0, 2.0], &[11.0, 12.0], &bins);
        assert_eq!(s.value, 1.0);
        assert_eq!(s.class_probs_left, vec![1.0, 0.0]);
        assert_eq!(s.class_probs_right, vec![0.0, 1.0]);
    }

    #[test]
    fn twoing_empty_side_is_zero() {
        let bins = TargetBins::from_edges(vec![10.0]);
        assert_eq!(twoing_score(&[], &[1.0, 20.0], &bins).value, 0.0);
    }

    #[test]
    fn equal_frequency_bins() {
        let ys: Vec<f64> = (0..80).map(f64::from).collect();
        let bins = TargetBins::equal_frequency(&ys, 8);
        assert_eq!(bins.n_classes(), 8);
        let mut counts = [0; 8];
        for &y in &ys {
            counts[bins.class_of(y)] += 1;
        }
        assert_eq!(counts, [10; 8]);
    }

    #[test]
    fn twoing_scan_matches_direct_score() {
        let xs: Vec<f64> = (0..40).map(|i| (i % 10) as f64).collect();
        let ys: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 + (i % 10) as f64 * 3.0).collect();
        let m = one_feature(&xs, &ys);
        let rows = m.all_rows();
        let bins = TargetBins::equal_frequency(&ys, 8);
        let (rule, phi) = best_twoing_cut(&m, &rows, 0, &bins, 1).unwrap();
        let mut best = f64::MIN;
        for t in 0..9 {
            let t = t as f64 + 0.5;
            let (l, r): (Vec<f64>, Vec<f64>) = {
                let l = (0..40).filter(|&i| xs[i] <= t).map(|i| ys[i]).collect();
                let r = (0..40).filter(|&i| xs[i] > t).map(|i| ys[i]).collect();
                (l, r)
            };
            best = best.max(twoing_score(&l, &r, &bins).value);
        }
        assert!((phi - best).abs() < 1e-12);
        let SplitRule::Threshold(t) = rule else { panic!() };
        assert_eq!(t.fract(), 0.5);
    }
}
