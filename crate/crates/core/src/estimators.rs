//! Estimators of the information `I(X; ·)` a representation space (or a
//! joint observation of several) carries about the data sample.
//!
//! * [`info_kt`]: pairwise lower bound from a fingerprint,
//!   `-(1/N) Σ_i log2((1/N) Σ_j BC_ij)`. Saturates at `log2 N`.
//! * [`info_mc`] / [`info_mc_joint`]: Monte Carlo over the aggregated posterior.
//! * [`info_exact_discrete`]: exact value for small discrete clusterings.
//!
//! Accumulation is in natural log; reported values are bits.

use std::f64::consts::LN_2;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::DiscreteSoftClustering;
use crate::error::{Error, Result};
use crate::fingerprint::{Fingerprint, RowSource};
use crate::numeric::{dot, entropy_bits, kt_bits_from_row_sums, log_sum_exp, sum};
use crate::posterior::PosteriorSet;

/// Default cap on the number of cells in an exact joint table.
pub const DEFAULT_JOINT_CAP: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    KtBound,
    MonteCarlo,
    ExactDiscrete,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::KtBound => "kt_bound",
            Estimator::MonteCarlo => "monte_carlo",
            Estimator::ExactDiscrete => "exact_discrete",
        })
    }
}

/// Information in bits with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoEstimate {
    pub bits: f64,
    /// Zero for deterministic estimators.
    pub std_err: f64,
    pub estimator: Estimator,
    /// Number of samples (data or draws) the estimate rests on.
    pub n_support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Outer Monte Carlo draws.
    pub n_samples: usize,
    /// Fraction of the sample used for the aggregated posterior, in `(0, 1]`.
    pub agg_fraction: f64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_samples: 10_000,
            agg_fraction: 1.0,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn new(n_samples: usize, agg_fraction: f64, seed: u64) -> Result<Self> {
        let cfg = McConfig {
            n_samples,
            agg_fraction,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be >= 1".into()));
        }
        if !(self.agg_fraction > 0.0 && self.agg_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "agg_fraction must be in (0, 1], got {}",
                self.agg_fraction
            )));
        }
        Ok(())
    }

    /// Same configuration on an independent random stream.
    pub fn with_stream(&self, stream: u64) -> Self {
        McConfig {
            seed: self
                .seed
                .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..*self
        }
    }
}

/// Pairwise (Bhattacharyya) lower bound on `I(X;U)` from a fingerprint.
pub fn info_kt(f: &Fingerprint) -> InfoEstimate {
    let n = f.len();
    let bits = kt_bits_from_row_sums((0..n).map(|i| sum(f.row(i))), n);
    kt_estimate(bits, n)
}

/// Bound for the joint observation of two aligned fingerprints, without
/// materializing their product. Bit-identical to
/// `info_kt(&fingerprint_product(a, b)?)` and symmetric in its arguments.
pub fn info_kt_joint(a: &Fingerprint, b: &Fingerprint) -> Result<InfoEstimate> {
    a.sample_ids().ensure_aligned(b.sample_ids())?;
    let n = a.len();
    let bits = kt_bits_from_row_sums((0..n).map(|i| dot(a.row(i), b.row(i))), n);
    Ok(kt_estimate(bits, n))
}

/// [`info_kt`] over rows produced on demand.
pub fn info_kt_rows<S: RowSource + ?Sized>(source: &S) -> InfoEstimate {
    let n = source.n();
    let mut row = vec![0.0; n];
    let bits = kt_bits_from_row_sums(
        (0..n).map(|i| {
            source.fill_row(i, &mut row);
            sum(&row)
        }),
        n,
    );
    kt_estimate(bits, n)
}

fn kt_estimate(bits: f64, n: usize) -> InfoEstimate {
    InfoEstimate {
        // -0.0 from an all-ones fingerprint reads better as 0.
        bits: bits + 0.0,
        std_err: 0.0,
        estimator: Estimator::KtBound,
        n_support: n,
    }
}

/// Monte Carlo estimate of `I(X;U)` (see [`info_mc_joint`]).
pub fn info_mc(space: &PosteriorSet, cfg: &McConfig) -> Result<InfoEstimate> {
    info_mc_joint(&[space], cfg)
}

struct LogParams {
    means: Vec<f64>,
    inv_std: Vec<f64>,
    /// `Σ_k (-ln σ_k - ln(2π)/2)` per datum.
    log_norm: Vec<f64>,
    d: usize,
}

impl LogParams {
    fn new(space: &PosteriorSet) -> Self {
        let d = space.dim();
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let stds = space.stddevs().as_slice().expect("standard layout");
        let log_norm = stds
            .chunks(d)
            .map(|row| row.iter().map(|s| -s.ln() - half_ln_2pi).sum())
            .collect();
        LogParams {
            means: space.means().as_slice().expect("standard layout").to_vec(),
            inv_std: stds.iter().map(|s| 1.0 / s).collect(),
            log_norm,
            d,
        }
    }

    #[inline]
    fn log_pdf(&self, u: &[f64], j: usize) -> f64 {
        let base = j * self.d;
        let mut q = 0.0;
        for k in 0..self.d {
            let z = (u[k] - self.means[base + k]) * self.inv_std[base + k];
            q += z * z;
        }
        self.log_norm[j] - 0.5 * q
    }
}

/// Monte Carlo estimate of `I(X; U_1, ..., U_m)` for spaces observed jointly.
///
/// Each draw picks a datum `x_i` uniformly, samples every space independently
/// from its posterior at `x_i` (so passing the same space twice yields two
/// independent draws), and scores `ln p(u|x_i) - ln((1/L) Σ_{j∈S} p(u|x_j))`
/// where the joint density is the product of member densities and `S` is the
/// aggregation subset (all data unless `agg_fraction < 1`, in which case a
/// fixed subset of `ceil(agg_fraction · N)` data drawn once from the seed).
pub fn info_mc_joint(spaces: &[&PosteriorSet], cfg: &McConfig) -> Result<InfoEstimate> {
    cfg.validate()?;
    let first = spaces
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one space required".into()))?;
    for s in &spaces[1..] {
        first.sample_ids().ensure_aligned(s.sample_ids())?;
    }
    let n = first.len();
    let params: Vec<LogParams> = spaces.iter().map(|s| LogParams::new(s)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let agg: Vec<usize> = if cfg.agg_fraction >= 1.0 {
        (0..n).collect()
    } else {
        let m = ((cfg.agg_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut idx = index::sample(&mut rng, n, m).into_vec();
        idx.sort_unstable();
        idx
    };
    let ln_agg = (agg.len() as f64).ln();

    let mut draws: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.d]).collect();
    let mut terms = vec![0.0; agg.len()];
    let mut values = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let i = rng.random_range(0..n);
        for (p, u) in params.iter().zip(draws.iter_mut()) {
            let base = i * p.d;
            for (k, uk) in u.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *uk = p.means[base + k] + z / p.inv_std[base + k];
            }
        }
        let log_num: f64 = params.iter().zip(&draws).map(|(p, u)| p.log_pdf(u, i)).sum();
        for (t, &j) in terms.iter_mut().zip(&agg) {
            *t = params.iter().zip(&draws).map(|(p, u)| p.log_pdf(u, j)).sum();
        }
        values.push(log_num - (log_sum_exp(&terms) - ln_agg));
    }

    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let std_err = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
        var.sqrt() / count.sqrt()
    } else {
        f64::INFINITY
    };
    Ok(InfoEstimate {
        bits: mean / LN_2,
        std_err: std_err / LN_2,
        estimator: Estimator::MonteCarlo,
        n_support: cfg.n_samples,
    })
}

/// Exact `I(X; V_1, ..., V_m)` for discrete clusterings that are
/// conditionally independent given the datum. Repeating a clustering
/// denotes independent draws from it.
pub fn info_exact_discrete(clusts: &[&DiscreteSoftClustering]) -> Result<InfoEstimate> {
    info_exact_discrete_capped(clusts, DEFAULT_JOINT_CAP)
}

pub fn info_exact_discrete_capped(
    clusts: &[&DiscreteSoftClustering],
    cap: usize,
) -> Result<InfoEstimate> {
    let first = clusts
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one clustering required".into()))?;
    let n = first.len();
    if let Some(c) = clusts.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    let cells: u128 = clusts.iter().map(|c| c.k() as u128).product();
    if cells > cap as u128 {
        return Err(Error::ResourceLimit { cells, cap });
    }
    let cells = cells as usize;

    let mut joint = vec![0.0; cells];
    let mut cond_entropy = 0.0;
    let mut support: Vec<(usize, f64)> = Vec::new();
    let mut next: Vec<(usize, f64)> = Vec::new();
    for x in 0..n {
        support.clear();
        support.push((0, 1.0));
        for c in clusts {
            let row = c.memberships().row(x);
            cond_entropy += entropy_bits(row.iter().copied());
            next.clear();
            for &(idx, p) in &support {
                for (k, &m) in row.iter().enumerate() {
                    if m > 0.0 {
                        next.push((idx * c.k() + k, p * m));
                    }
                }
            }
            std::mem::swap(&mut support, &mut next);
        }
        for &(idx, p) in &support {
            joint[idx] += p;
        }
    }
    let nf = n as f64;
    let h_joint = entropy_bits(joint.iter().map(|p| p / nf));
    Ok(InfoEstimate {
        bits: h_joint - cond_entropy / nf,
        std_err: 0.0,
        estimator: Estimator::ExactDiscrete,
        n_support: n,
    })
}

/// `H(X) = log2 n` under the empirical distribution.
pub fn entropy_dataset(n: usize) -> f64 {
    (n as f64).log2()
}

/// How [`propagate_vi_error`] combines the three constituent errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViErrorConvention {
    /// `sqrt(4 ΔI(X;U,V)² + ΔI(X;U,U')² + ΔI(X;V,V')²)`.
    #[default]
    SumOfSquares,
    /// `sqrt(4 ΔI(X;U,V)² - ΔI(X;U,U')² - ΔI(X;V,V')²)`; fails when negative.
    AsPrinted,
}

/// Standard error of `VI = 2 I(X;U,V) - I(X;U,U') - I(X;V,V')`.
pub fn propagate_vi_error(
    d_uv: f64,
    d_uu: f64,
    d_vv: f64,
    convention: ViErrorConvention,
) -> Result<f64> {
    if [d_uv, d_uu, d_vv].iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidInput("standard errors must be nonnegative".into()));
    }
    let self_terms = d_uu * d_uu + d_vv * d_vv;
    let radicand = match convention {
        ViErrorConvention::SumOfSquares => 4.0 * d_uv * d_uv + self_terms,
        ViErrorConvention::AsPrinted => 4.0 * d_uv * d_uv - self_terms,
    };
    if radicand < 0.0 {
        return Err(Error::NumericDomain(format!(
            "negative radicand {radicand} in VI error propagation"
        )));
    }
    Ok(radicand.sqrt())
}

/// Inverse-variance weighted mean and its standard error
/// `(Σ ΔQ_i⁻²)^(-1/2)`. Entries with zero error dominate: if any are present,
/// they are averaged with equal weights and the error is zero.
pub fn weighted_mean(values: &[(f64, f64)]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("weighted mean of an empty list".into()));
    }
    if let Some(&(_, e)) = values.iter().find(|(_, e)| !(*e >= 0.0)) {
        return Err(Error::InvalidInput(format!("invalid standard error {e}")));
    }
    let exact: Vec<f64> = values.iter().filter(|(_, e)| *e == 0.0).map(|(v, _)| *v).collect();
    if !exact.is_empty() {
        return Ok((exact.iter().sum::<f64>() / exact.len() as f64, 0.0));
    }
    let (mut wsum, mut vsum) = (0.0, 0.0);
    for &(v, e) in values {
        let w = 1.0 / (e * e);
        wsum += w;
        vsum += w * v;
    }
    Ok((vsum / wsum, wsum.sqrt().recip()))
}
