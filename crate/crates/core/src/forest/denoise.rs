//! Box-plot noise removal for leaf values.

/// Inner and outer fence multiplier on the interquartile range.
pub const FENCE_FACTOR: f64 = 1.5;

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Tukey hinges `(Q1, Q3)`: medians of the lower and upper halves of the
/// sorted data, both halves including the median when `n` is odd.
pub fn tukey_hinges(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "hinges of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let half = n.div_ceil(2);
    (median_sorted(&sorted[..half]), median_sorted(&sorted[n - half..]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub kept: Vec<f64>,
    pub il: f64,
    pub ol: f64,
}

impl Denoised {
    pub fn removed(&self, total: usize) -> usize {
        total - self.kept.len()
    }
}

/// Keeps the values inside `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]`, preserving order.
pub fn denoise_leaf(values: &[f64]) -> Denoised {
    let (q1, q3) = tukey_hinges(values);
    let iqr = q3 - q1;
    let il = q1 - FENCE_FACTOR * iqr;
    let ol = q3 + FENCE_FACTOR * iqr;
    let kept = values.iter().copied().filter(|v| *v >= il && *v <= ol).collect();
    Denoised { kept, il, ol }
}

/// Arithmetic mean of a leaf's retained values.
pub fn leaf_value(kept: &[f64]) -> f64 {
    assert!(!kept.is_empty(), "leaf value of empty sample");
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Median of an unsorted sample; used when denoising leaves nothing.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    median_sorted(&sorted)
}
