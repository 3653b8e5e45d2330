//! Per-datum diagonal-Gaussian posteriors and the sample sets built from them.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, unique datum identifiers shared between fingerprints of the same
/// data sample. Cloning is cheap.
#[derive(Clone, Debug)]
pub struct SampleIds(Arc<[String]>);

impl SampleIds {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSampleId(id.clone()));
            }
        }
        Ok(SampleIds(ids.into()))
    }

    /// Identifiers `"0"`, `"1"`, ... `n-1`.
    pub fn range(n: usize) -> Self {
        SampleIds((0..n).map(|i| i.to_string()).collect::<Vec<_>>().into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Self {
        SampleIds(indices.iter().map(|&i| self.0[i].clone()).collect::<Vec<_>>().into())
    }

    /// Fails unless `other` names the same data in the same order.
    pub fn ensure_aligned(&self, other: &SampleIds) -> Result<()> {
        if self == other {
            return Ok(());
        }
        if self.len() != other.len() {
            return Err(Error::Alignment(format!(
                "sample sizes differ ({} vs {})",
                self.len(),
                other.len()
            )));
        }
        let pos = self
            .0
            .iter()
            .zip(other.0.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        Err(Error::Alignment(format!(
            "sample ids differ at position {pos}: {:?} vs {:?}",
            self.0[pos], other.0[pos]
        )))
    }
}

impl PartialEq for SampleIds {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl Eq for SampleIds {}

/// Label of a representation space: a model, optionally narrowed to one channel.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceId {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
}

impl SpaceId {
    pub fn new(model: impl Into<String>) -> Self {
        SpaceId {
            model: model.into(),
            channel: None,
        }
    }

    pub fn with_channel(&self, dim: usize) -> Self {
        SpaceId {
            model: self.model.clone(),
            channel: Some(dim),
        }
    }
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.channel {
            Some(c) => write!(f, "{}/ch{}", self.model, c),
            None => f.write_str(&self.model),
        }
    }
}

/// A diagonal-covariance normal distribution over a d-dimensional latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    stddev: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidInput("posterior must have d >= 1".into()));
        }
        if mean.len() != stddev.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: stddev.len(),
            });
        }
        validate_params(&mean, &stddev, mean.len())?;
        Ok(GaussianPosterior { mean, stddev })
    }

    /// One-dimensional `N(mean, stddev²)`.
    pub fn scalar(mean: f64, stddev: f64) -> Result<Self> {
        Self::new(vec![mean], vec![stddev])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stddev(&self) -> &[f64] {
        &self.stddev
    }
}

fn validate_params(means: &[f64], stddevs: &[f64], d: usize) -> Result<()> {
    if let Some(index) = means.iter().position(|m| !m.is_finite()) {
        return Err(Error::NonFinite {
            what: "means".into(),
            index,
        });
    }
    for (index, &s) in stddevs.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite {
                what: "stddevs".into(),
                index,
            });
        }
        if s <= 0.0 {
            return Err(Error::NonPositiveStddev {
                index,
                row: index / d,
                dim: index % d,
                value: s,
            });
        }
    }
    Ok(())
}

/// N posteriors sharing one latent dimension, indexed by datum.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSet {
    means: Array2<f64>,
    stddevs: Array2<f64>,
    sample_ids: SampleIds,
    space_id: SpaceId,
}

impl PosteriorSet {
    /// Builds a set from row-major `N×d` parameter arrays.
    pub fn new(
        means: Array2<f64>,
        stddevs: Array2<f64>,
        sample_ids: SampleIds,
        space_id: SpaceId,
    ) -> Result<Self> {
        let (n, d) = means.dim();
        if stddevs.dim() != (n, d) {
            return Err(Error::InvalidInput(format!(
                "means are {n}x{d} but stddevs are {}x{}",
                stddevs.nrows(),
                stddevs.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("posterior set needs N >= 2, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidInput("posterior set needs d >= 1".into()));
        }
        if sample_ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} sample ids for {n} posteriors",
                sample_ids.len()
            )));
        }
        let means = means.as_standard_layout().into_owned();
        let stddevs = stddevs.as_standard_layout().into_owned();
        validate_params(
            means.as_slice().expect("standard layout"),
            stddevs.as_slice().expect("standard layout"),
            d,
        )?;
        Ok(PosteriorSet {
            means,
            stddevs,
            sample_ids,
            space_id,
        })
    }

    pub fn from_posteriors(
        posteriors: &[GaussianPosterior],
        sample_ids: SampleIds,
        space_id: SpaceId,
    ) -> Result<Self> {
        let d = posteriors.first().map(GaussianPosterior::dim).unwrap_or(0);
        let n = posteriors.len();
        let mut means = Array2::zeros((n, d));
        let mut stddevs = Array2::zeros((n, d));
        for (i, p) in posteriors.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.dim(),
                });
            }
            means.row_mut(i).assign(&ArrayView1::from(p.mean()));
            stddevs.row_mut(i).assign(&ArrayView1::from(p.stddev()));
        }
        Self::new(means, stddevs, sample_ids, space_id)
    }

    /// Convenience constructor for one-dimensional sets with ids `0..N`.
    pub fn from_1d(means: &[f64], stddevs: &[f64], space_id: SpaceId) -> Result<Self> {
        if means.len() != stddevs.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                found: stddevs.len(),
            });
        }
        let n = means.len();
        Self::new(
            Array2::from_shape_vec((n, 1), means.to_vec()).expect("shape"),
            Array2::from_shape_vec((n, 1), stddevs.to_vec()).expect("shape"),
            SampleIds::range(n),
            space_id,
        )
    }

    pub fn len(&self) -> usize {
        self.means.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn stddevs(&self) -> &Array2<f64> {
        &self.stddevs
    }

    pub fn mean_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.means.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn stddev_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.stddevs.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn posterior(&self, i: usize) -> GaussianPosterior {
        GaussianPosterior {
            mean: self.mean_row(i).to_vec(),
            stddev: self.stddev_row(i).to_vec(),
        }
    }

    pub fn sample_ids(&self) -> &SampleIds {
        &self.sample_ids
    }

    pub fn space_id(&self) -> &SpaceId {
        &self.space_id
    }

    pub fn with_space_id(mut self, space_id: SpaceId) -> Self {
        self.space_id = space_id;
        self
    }

    /// Restricts the set to the given data, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::OutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        let ids = SampleIds::new(indices.iter().map(|&i| self.sample_ids.as_slice()[i].clone()))?;
        Self::new(
            self.means.select(Axis(0), indices),
            self.stddevs.select(Axis(0), indices),
            ids,
            self.space_id.clone(),
        )
    }
}

/// Projects a set onto one latent dimension. The marginal of a diagonal
/// Gaussian is the per-dimension Gaussian.
pub fn marginal_channel(space: &PosteriorSet, dim: usize) -> Result<PosteriorSet> {
    if dim >= space.dim() {
        return Err(Error::OutOfRange {
            index: dim,
            len: space.dim(),
        });
    }
    let col = |a: &Array2<f64>| a.column(dim).to_owned().insert_axis(Axis(1));
    Ok(PosteriorSet {
        means: col(&space.means),
        stddevs: col(&space.stddevs),
        sample_ids: space.sample_ids.clone(),
        space_id: space.space_id.with_channel(dim),
    })
}
