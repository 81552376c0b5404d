use crate::records::{Dataset, FeatureKind};

/// Column-major view of a dataset used during training. Rows are addressed
/// by `u32` index so bootstrap samples are plain index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<Vec<f64>>,
    targets: Vec<f64>,
    kinds: Vec<FeatureKind>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<Vec<f64>>, targets: Vec<f64>, kinds: Vec<FeatureKind>) -> Self {
        assert_eq!(columns.len(), kinds.len(), "one kind per column");
        for c in &columns {
            assert_eq!(c.len(), targets.len(), "ragged feature column");
        }
        FeatureMatrix {
            columns,
            targets,
            kinds,
        }
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let width = data.schema.len();
        let mut columns = vec![Vec::with_capacity(data.len()); width];
        for row in &data.rows {
            for (col, v) in columns.iter_mut().zip(&row.values) {
                col.push(*v);
            }
        }
        FeatureMatrix::new(columns, data.targets(), data.schema.kinds())
    }

    /// Builds a matrix from row-major feature vectors.
    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>, kinds: Vec<FeatureKind>) -> Self {
        let columns = (0..kinds.len())
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        FeatureMatrix::new(columns, targets, kinds)
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn value(&self, row: u32, feature: usize) -> f64 {
        self.columns[feature][row as usize]
    }

    #[inline]
    pub fn target(&self, row: u32) -> f64 {
        self.targets[row as usize]
    }

    pub fn kind(&self, feature: usize) -> FeatureKind {
        self.kinds[feature]
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn row(&self, row: u32) -> Vec<f64> {
        self.columns.iter().map(|c| c[row as usize]).collect()
    }

    pub fn all_rows(&self) -> Vec<u32> {
        (0..self.n_rows() as u32).collect()
    }

    pub fn targets_of(&self, rows: &[u32]) -> Vec<f64> {
        rows.iter().map(|&r| self.target(r)).collect()
    }
}
