//! Bhattacharyya fingerprints: pairwise distinguishability matrices of a data
//! sample under a representation space.
//!
//! A fingerprint is symmetric, has entries in `[0, 1]` and a unit diagonal.
//! Fingerprints of spaces observed jointly (with independent noise given the
//! datum) combine by elementwise product, so every downstream quantity can be
//! computed from the matrices alone.

use ndarray::Array2;
use rayon::prelude::*;

use crate::clustering::{DiscreteSoftClustering, HardClustering};
use crate::error::{Error, Result};
use crate::posterior::{GaussianPosterior, PosteriorSet, SampleIds, SpaceId};

/// `N×N` matrix of pairwise Bhattacharyya coefficients over a fixed sample.
#[derive(Clone, Debug)]
pub struct Fingerprint {
    values: Array2<f64>,
    sample_ids: SampleIds,
    space_id: SpaceId,
}

impl Fingerprint {
    /// Validates the invariants exactly: symmetric, in `[0, 1]`, unit diagonal.
    pub fn new(values: Array2<f64>, sample_ids: SampleIds, space_id: SpaceId) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "fingerprint must be square, got {}x{}",
                n,
                values.ncols()
            )));
        }
        if sample_ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} sample ids for a {n}x{n} fingerprint",
                sample_ids.len()
            )));
        }
        for i in 0..n {
            if values[[i, i]] != 1.0 {
                return Err(Error::DiagonalDeviation {
                    i,
                    value: values[[i, i]],
                });
            }
            for j in 0..n {
                let v = values[[i, j]];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfUnitInterval { i, j, value: v });
                }
                if j > i && v != values[[j, i]] {
                    return Err(Error::Asymmetric {
                        i,
                        j,
                        a: v,
                        b: values[[j, i]],
                    });
                }
            }
        }
        Ok(Self::from_parts(values, sample_ids, space_id))
    }

    /// Caller guarantees the invariants; checked in debug builds.
    pub(crate) fn from_parts(values: Array2<f64>, sample_ids: SampleIds, space_id: SpaceId) -> Self {
        let values = values.as_standard_layout().into_owned();
        debug_assert!(check_invariants(&values));
        Fingerprint {
            values,
            sample_ids,
            space_id,
        }
    }

    /// Fully distinguishable sample: `log2 N` bits.
    pub fn identity(n: usize) -> Self {
        Self::from_parts(Array2::eye(n), SampleIds::range(n), SpaceId::new("identity"))
    }

    /// Fully confusable sample: zero information.
    pub fn ones(n: usize) -> Self {
        Self::from_parts(Array2::ones((n, n)), SampleIds::range(n), SpaceId::new("ones"))
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.as_slice()[i * n..(i + 1) * n]
    }

    pub(crate) fn as_slice(&self) -> &[f64] {
        self.values.as_slice().expect("standard layout")
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

    /// Relabels the sample. The ids must be unique and match `N`.
    pub fn with_sample_ids(mut self, sample_ids: SampleIds) -> Result<Self> {
        if sample_ids.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "{} sample ids for a {n}x{n} fingerprint",
                sample_ids.len(),
                n = self.len()
            )));
        }
        self.sample_ids = sample_ids;
        Ok(self)
    }

    /// Restricts to a sub-sample, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::OutOfRange {
                index: bad,
                len: self.len(),
            });
        }
        let ids = SampleIds::new(indices.iter().map(|&i| self.sample_ids.as_slice()[i].clone()))?;
        let m = indices.len();
        let values = Array2::from_shape_fn((m, m), |(a, b)| self.values[[indices[a], indices[b]]]);
        Ok(Self::from_parts(values, ids, self.space_id.clone()))
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

pub(crate) fn check_invariants(values: &Array2<f64>) -> bool {
    let n = values.nrows();
    (0..n).all(|i| {
        values[[i, i]] == 1.0
            && (0..n).all(|j| {
                let v = values[[i, j]];
                (0.0..=1.0).contains(&v) && v == values[[j, i]]
            })
    })
}

/// Natural log of the Bhattacharyya coefficient between two diagonal
/// Gaussians given as parameter slices. Summed per dimension in index order;
/// bit-for-bit symmetric in its two arguments.
#[inline]
pub(crate) fn log_bc(mean_a: &[f64], std_a: &[f64], mean_b: &[f64], std_b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..mean_a.len() {
        let (sa, sb) = (std_a[k], std_b[k]);
        let var_sum = sa * sa + sb * sb;
        let delta = mean_a[k] - mean_b[k];
        acc += 0.5 * (2.0 * (sa * sb) / var_sum).ln() - delta * delta / (4.0 * var_sum);
    }
    acc
}

/// Closed-form Bhattacharyya coefficient between two diagonal Gaussians.
///
/// Per dimension `sqrt(2 s1 s2 / (s1² + s2²)) · exp(-(m1 - m2)² / (4 (s1² + s2²)))`;
/// the product is accumulated in log space and exponentiated once, so tiny
/// overlaps are returned without clamping.
pub fn bc_gaussian(p: &GaussianPosterior, q: &GaussianPosterior) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    Ok(log_bc(p.mean(), p.stddev(), q.mean(), q.stddev()).exp())
}

/// Computes the row-`i` entries right of the diagonal into `out[i+1..]`.
fn gaussian_upper_row(space: &PosteriorSet, i: usize, out: &mut [f64]) {
    let (mi, si) = (space.mean_row(i), space.stddev_row(i));
    out[i] = 1.0;
    for (j, o) in out.iter_mut().enumerate().skip(i + 1) {
        *o = log_bc(mi, si, space.mean_row(j), space.stddev_row(j)).exp();
    }
}

/// Fingerprint of a posterior set: `values[i][j] = BC(p_i, p_j)`.
///
/// Rows are filled in parallel; every entry is computed independently so the
/// result does not depend on the thread count.
pub fn fingerprint_gaussian(space: &PosteriorSet) -> Fingerprint {
    let n = space.len();
    let mut values = Array2::<f64>::zeros((n, n));
    values
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| gaussian_upper_row(space, i, row));
    mirror_upper(&mut values);
    Fingerprint::from_parts(values, space.sample_ids().clone(), space.space_id().clone())
}

fn mirror_upper(values: &mut Array2<f64>) {
    let n = values.nrows();
    for i in 0..n {
        for j in 0..i {
            values[[i, j]] = values[[j, i]];
        }
    }
}

/// Hard labels give a 0/1 fingerprint: 1 exactly when two data share a cluster.
/// Sample ids default to `0..N`; relabel with [`Fingerprint::with_sample_ids`].
pub fn fingerprint_hard(labels: &HardClustering) -> Fingerprint {
    let l = labels.labels();
    let n = l.len();
    let values = Array2::from_shape_fn((n, n), |(i, j)| if l[i] == l[j] { 1.0 } else { 0.0 });
    Fingerprint::from_parts(values, SampleIds::range(n), SpaceId::new("labels"))
}

/// Discrete soft clustering: `BC_ij = Σ_k sqrt(m_ik · m_jk)`.
pub fn fingerprint_discrete_soft(clust: &DiscreteSoftClustering) -> Fingerprint {
    let roots = clust.memberships().mapv(f64::sqrt);
    let n = clust.len();
    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        values[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let bc: f64 = roots.row(i).iter().zip(roots.row(j)).map(|(a, b)| a * b).sum();
            values[[i, j]] = bc.min(1.0);
        }
    }
    mirror_upper(&mut values);
    Fingerprint::from_parts(values, SampleIds::range(n), SpaceId::new("soft"))
}

/// Fingerprint of the joint observation of two spaces: the elementwise product.
/// `fingerprint_product(f, f)` is the two-draw self-joint.
pub fn fingerprint_product(a: &Fingerprint, b: &Fingerprint) -> Result<Fingerprint> {
    a.sample_ids.ensure_aligned(&b.sample_ids)?;
    let values = &a.values * &b.values;
    let space_id = SpaceId::new(format!("{}*{}", a.space_id, b.space_id));
    Ok(Fingerprint::from_parts(values, a.sample_ids.clone(), space_id))
}

/// Anything that can produce fingerprint rows on demand. Lets large channel
/// ensembles be processed without materializing every `N×N` matrix.
pub trait RowSource: Sync {
    fn sample_ids(&self) -> &SampleIds;

    /// Writes row `i` of the fingerprint into `out` (length `N`).
    fn fill_row(&self, i: usize, out: &mut [f64]);

    fn n(&self) -> usize {
        self.sample_ids().len()
    }
}

impl RowSource for Fingerprint {
    fn sample_ids(&self) -> &SampleIds {
        &self.sample_ids
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(i));
    }
}

/// Rows are computed from the closed form; entries match
/// [`fingerprint_gaussian`] bit for bit.
impl RowSource for PosteriorSet {
    fn sample_ids(&self) -> &SampleIds {
        PosteriorSet::sample_ids(self)
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let (mi, si) = (self.mean_row(i), self.stddev_row(i));
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j == i {
                1.0
            } else {
                log_bc(mi, si, self.mean_row(j), self.stddev_row(j)).exp()
            };
        }
    }
}

impl<T: RowSource + Send> RowSource for &T {
    fn sample_ids(&self) -> &SampleIds {
        (**self).sample_ids()
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        (**self).fill_row(i, out)
    }
}
