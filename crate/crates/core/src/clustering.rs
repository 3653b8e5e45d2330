//! Hard and discrete soft (fuzzy) clusterings of a data sample.

use ndarray::Array2;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Each datum assigned to exactly one of `k` clusters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardClustering {
    labels: Vec<usize>,
    k: usize,
}

impl HardClustering {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::InvalidInput(format!(
                "label {l} at position {i} not in [0, {k})"
            )));
        }
        Ok(HardClustering { labels, k })
    }

    /// Uses `max(label) + 1` clusters.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        HardClustering { labels, k }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Cluster sizes, indexed by label.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn to_soft(&self) -> DiscreteSoftClustering {
        let mut m = Array2::zeros((self.len(), self.k));
        for (i, &l) in self.labels.iter().enumerate() {
            m[[i, l]] = 1.0;
        }
        DiscreteSoftClustering { memberships: m }
    }
}

/// `N×K` membership matrix whose rows are probability vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSoftClustering {
    memberships: Array2<f64>,
}

impl DiscreteSoftClustering {
    pub fn new(memberships: Array2<f64>) -> Result<Self> {
        for (i, row) in memberships.rows().into_iter().enumerate() {
            if let Some(&v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "membership row {i} has invalid entry {v}"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "membership row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(DiscreteSoftClustering { memberships })
    }

    pub fn memberships(&self) -> &Array2<f64> {
        &self.memberships
    }

    pub fn len(&self) -> usize {
        self.memberships.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn k(&self) -> usize {
        self.memberships.ncols()
    }
}

impl From<&HardClustering> for DiscreteSoftClustering {
    fn from(h: &HardClustering) -> Self {
        h.to_soft()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hard_labels_range_checked() {
        assert!(HardClustering::new(vec![0, 1, 2], 2).is_err());
        let h = HardClustering::new(vec![0, 1, 1], 3).unwrap();
        assert_eq!(h.counts(), vec![1, 2, 0]);
    }

    #[test]
    fn soft_rows_must_sum_to_one() {
        assert!(DiscreteSoftClustering::new(array![[0.5, 0.5], [0.3, 0.6]]).is_err());
        assert!(DiscreteSoftClustering::new(array![[1.5, -0.5]]).is_err());
        assert!(DiscreteSoftClustering::new(array![[0.25, 0.75], [1.0, 0.0]]).is_ok());
    }

    #[test]
    fn hard_to_soft_is_one_hot() {
        let s = HardClustering::from_labels(vec![1, 0]).to_soft();
        assert_eq!(s.memberships(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }
}
