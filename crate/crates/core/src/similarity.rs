//! Generalized NMI and VI between representation spaces.
//!
//! Self-entropies of the classic forms are replaced by the two-draw
//! self-information `I(U;U')`, which keeps `NMI(U,U) = 1` and `VI(U,U) = 0`
//! for soft assignments and reduces to the classic values for hard ones.
//! Every term is rewritten as information about the data:
//!
//! ```text
//! I(U;V)  = I(X;U) + I(X;V) - I(X;U,V)
//! I(U;U') = 2 I(X;U) - I(X;U,U')
//! NMI     = I(U;V) / sqrt(I(U;U') I(V;V'))
//! VI      = 2 I(X;U,V) - I(X;U,U') - I(X;V,V')
//! ```
//!
//! The same algebra is evaluated with three estimators (fingerprint bound,
//! Monte Carlo, exact discrete). Terms are combined in a fixed, symmetric
//! order so deterministic measures are bit-exactly symmetric.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::clustering::{DiscreteSoftClustering, HardClustering};
use crate::error::{Error, Result};
use crate::estimators::{
    info_exact_discrete, info_kt, info_kt_joint, info_mc, info_mc_joint, propagate_vi_error,
    Estimator, InfoEstimate, McConfig, ViErrorConvention,
};
use crate::fingerprint::{Fingerprint, RowSource};
use crate::numeric::{dot, entropy_bits, kt_bits_from_row_sums, sum};
use crate::posterior::PosteriorSet;

/// Self-information (bits) below which NMI is undefined.
pub const MIN_SELF_INFORMATION: f64 = 1e-12;

/// Floor applied to NMI before the `-ln` distance transform.
pub const NMI_DISTANCE_FLOOR: f64 = 1e-4;

const MIN_SELF_HSIC: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Nmi,
    Vi,
    CkaBc,
    Mi,
}

/// Why a similarity value is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    /// A compared space carries (numerically) no information.
    ZeroSelfInformation,
    /// A fingerprint is constant, so its centered self-HSIC vanishes.
    ZeroSelfHsic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityValue {
    /// `NaN` when undefined.
    #[serde(with = "crate::io::sentinel")]
    pub value: f64,
    #[serde(with = "crate::io::sentinel")]
    pub std_err: f64,
    pub measure: Measure,
    pub estimator: Estimator,
    pub undefined: Option<Undefined>,
}

impl SimilarityValue {
    fn defined(value: f64, std_err: f64, measure: Measure, estimator: Estimator) -> Self {
        SimilarityValue {
            value,
            std_err,
            measure,
            estimator,
            undefined: None,
        }
    }

    fn undefined(reason: Undefined, measure: Measure, estimator: Estimator) -> Self {
        SimilarityValue {
            value: f64::NAN,
            std_err: f64::NAN,
            measure,
            estimator,
            undefined: Some(reason),
        }
    }

    pub fn is_defined(&self) -> bool {
        self.undefined.is_none()
    }

    /// Value capped to `[0, 1]` for NMI and CKA, `[0, ∞)` for VI and MI.
    /// `None` when undefined.
    pub fn clamped(&self) -> Option<f64> {
        if !self.is_defined() {
            return None;
        }
        Some(match self.measure {
            Measure::Nmi | Measure::CkaBc => self.value.clamp(0.0, 1.0),
            Measure::Vi | Measure::Mi => self.value.max(0.0),
        })
    }
}

/// The five information terms behind NMI and VI, in bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoTerms {
    pub u: InfoEstimate,
    pub v: InfoEstimate,
    pub uv: InfoEstimate,
    pub uu: InfoEstimate,
    pub vv: InfoEstimate,
}

impl InfoTerms {
    /// `I(U;V)`.
    pub fn mutual_information(&self) -> f64 {
        (self.u.bits + self.v.bits) - self.uv.bits
    }

    /// `I(U;U')`.
    pub fn self_information_u(&self) -> f64 {
        2.0 * self.u.bits - self.uu.bits
    }

    /// `I(V;V')`.
    pub fn self_information_v(&self) -> f64 {
        2.0 * self.v.bits - self.vv.bits
    }

    pub fn nmi_value(&self) -> Option<f64> {
        let (su, sv) = (self.self_information_u(), self.self_information_v());
        if su < MIN_SELF_INFORMATION || sv < MIN_SELF_INFORMATION {
            return None;
        }
        Some(self.mutual_information() / (su * sv).sqrt())
    }

    pub fn vi_value(&self) -> f64 {
        2.0 * self.uv.bits - (self.uu.bits + self.vv.bits)
    }

    fn estimator(&self) -> Estimator {
        self.uv.estimator
    }

    /// First-order delta-method error of NMI, treating the five estimates as
    /// independent.
    fn nmi_std_err(&self, nmi: f64) -> f64 {
        let (su, sv) = (self.self_information_u(), self.self_information_v());
        let inv = 1.0 / (su * sv).sqrt();
        let grads = [
            (inv - nmi / su, self.u.std_err),
            (inv - nmi / sv, self.v.std_err),
            (-inv, self.uv.std_err),
            (nmi / (2.0 * su), self.uu.std_err),
            (nmi / (2.0 * sv), self.vv.std_err),
        ];
        grads.iter().map(|(g, e)| (g * e) * (g * e)).sum::<f64>().sqrt()
    }

    fn vi_std_err(&self) -> f64 {
        propagate_vi_error(
            self.uv.std_err,
            self.uu.std_err,
            self.vv.std_err,
            ViErrorConvention::SumOfSquares,
        )
        .unwrap_or(f64::NAN)
    }

    pub fn nmi(&self) -> SimilarityValue {
        match self.nmi_value() {
            Some(v) => SimilarityValue::defined(v, self.nmi_std_err(v), Measure::Nmi, self.estimator()),
            None => SimilarityValue::undefined(Undefined::ZeroSelfInformation, Measure::Nmi, self.estimator()),
        }
    }

    pub fn vi(&self) -> SimilarityValue {
        SimilarityValue::defined(self.vi_value(), self.vi_std_err(), Measure::Vi, self.estimator())
    }

    pub fn mi(&self) -> SimilarityValue {
        let e = |x: &InfoEstimate| x.std_err * x.std_err;
        let se = (e(&self.u) + e(&self.v) + e(&self.uv)).sqrt();
        SimilarityValue::defined(self.mutual_information(), se, Measure::Mi, self.estimator())
    }
}

/// Fingerprint-bound terms for two aligned fingerprints.
pub fn kt_terms(f_u: &Fingerprint, f_v: &Fingerprint) -> Result<InfoTerms> {
    f_u.sample_ids().ensure_aligned(f_v.sample_ids())?;
    Ok(InfoTerms {
        u: info_kt(f_u),
        v: info_kt(f_v),
        uv: info_kt_joint(f_u, f_v)?,
        uu: info_kt_joint(f_u, f_u)?,
        vv: info_kt_joint(f_v, f_v)?,
    })
}

/// [`kt_terms`] over rows produced on demand; equal to it bit for bit when
/// both sources are materialized fingerprints.
pub fn kt_terms_rows<A: RowSource + ?Sized, B: RowSource + ?Sized>(a: &A, b: &B) -> Result<InfoTerms> {
    a.sample_ids().ensure_aligned(b.sample_ids())?;
    let n = a.n();
    let (mut ra, mut rb) = (vec![0.0; n], vec![0.0; n]);
    let mut sums = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        a.fill_row(i, &mut ra);
        b.fill_row(i, &mut rb);
        sums[0].push(sum(&ra));
        sums[1].push(sum(&rb));
        sums[2].push(dot(&ra, &rb));
        sums[3].push(dot(&ra, &ra));
        sums[4].push(dot(&rb, &rb));
    }
    let est = |s: &Vec<f64>| InfoEstimate {
        bits: kt_bits_from_row_sums(s.iter().copied(), n) + 0.0,
        std_err: 0.0,
        estimator: Estimator::KtBound,
        n_support: n,
    };
    Ok(InfoTerms {
        u: est(&sums[0]),
        v: est(&sums[1]),
        uv: est(&sums[2]),
        uu: est(&sums[3]),
        vv: est(&sums[4]),
    })
}

pub fn nmi(f_u: &Fingerprint, f_v: &Fingerprint) -> Result<SimilarityValue> {
    Ok(kt_terms(f_u, f_v)?.nmi())
}

pub fn vi(f_u: &Fingerprint, f_v: &Fingerprint) -> Result<SimilarityValue> {
    Ok(kt_terms(f_u, f_v)?.vi())
}

/// `I(U;V)` from fingerprints (unnormalized).
pub fn mutual_information(f_u: &Fingerprint, f_v: &Fingerprint) -> Result<SimilarityValue> {
    Ok(kt_terms(f_u, f_v)?.mi())
}

/// Monte Carlo terms; each term runs on its own random stream derived from `cfg.seed`.
pub fn mc_terms(u: &PosteriorSet, v: &PosteriorSet, cfg: &McConfig) -> Result<InfoTerms> {
    u.sample_ids().ensure_aligned(v.sample_ids())?;
    Ok(InfoTerms {
        u: info_mc(u, &cfg.with_stream(1))?,
        v: info_mc(v, &cfg.with_stream(2))?,
        uv: info_mc_joint(&[u, v], &cfg.with_stream(3))?,
        uu: info_mc_joint(&[u, u], &cfg.with_stream(4))?,
        vv: info_mc_joint(&[v, v], &cfg.with_stream(5))?,
    })
}

pub fn nmi_mc(u: &PosteriorSet, v: &PosteriorSet, cfg: &McConfig) -> Result<SimilarityValue> {
    Ok(mc_terms(u, v, cfg)?.nmi())
}

/// VI needs only the joint and self-joint terms.
pub fn vi_mc(u: &PosteriorSet, v: &PosteriorSet, cfg: &McConfig) -> Result<SimilarityValue> {
    u.sample_ids().ensure_aligned(v.sample_ids())?;
    let uv = info_mc_joint(&[u, v], &cfg.with_stream(3))?;
    let uu = info_mc_joint(&[u, u], &cfg.with_stream(4))?;
    let vv = info_mc_joint(&[v, v], &cfg.with_stream(5))?;
    let value = 2.0 * uv.bits - (uu.bits + vv.bits);
    let se = propagate_vi_error(uv.std_err, uu.std_err, vv.std_err, ViErrorConvention::SumOfSquares)?;
    Ok(SimilarityValue::defined(value, se, Measure::Vi, Estimator::MonteCarlo))
}

/// Exact terms for discrete clusterings.
pub fn exact_terms(u: &DiscreteSoftClustering, v: &DiscreteSoftClustering) -> Result<InfoTerms> {
    Ok(InfoTerms {
        u: info_exact_discrete(&[u])?,
        v: info_exact_discrete(&[v])?,
        uv: info_exact_discrete(&[u, v])?,
        uu: info_exact_discrete(&[u, u])?,
        vv: info_exact_discrete(&[v, v])?,
    })
}

pub fn nmi_exact(u: &DiscreteSoftClustering, v: &DiscreteSoftClustering) -> Result<SimilarityValue> {
    Ok(exact_terms(u, v)?.nmi())
}

pub fn vi_exact(u: &DiscreteSoftClustering, v: &DiscreteSoftClustering) -> Result<SimilarityValue> {
    Ok(exact_terms(u, v)?.vi())
}

/// `(H(A), H(B), H(A,B))` in bits from the contingency table.
fn hard_entropies(a: &HardClustering, b: &HardClustering) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len() as f64;
    let mut table = vec![0usize; a.k() * b.k()];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        table[x * b.k() + y] += 1;
    }
    let h = |counts: Vec<usize>| entropy_bits(counts.into_iter().map(|c| c as f64 / n));
    Ok((h(a.counts()), h(b.counts()), h(table)))
}

/// Classic NMI, `I / sqrt(H(A) H(B))`.
pub fn nmi_hard(a: &HardClustering, b: &HardClustering) -> Result<SimilarityValue> {
    let (ha, hb, hab) = hard_entropies(a, b)?;
    if ha < MIN_SELF_INFORMATION || hb < MIN_SELF_INFORMATION {
        return Ok(SimilarityValue::undefined(
            Undefined::ZeroSelfInformation,
            Measure::Nmi,
            Estimator::ExactDiscrete,
        ));
    }
    let mi = (ha + hb) - hab;
    Ok(SimilarityValue::defined(mi / (ha * hb).sqrt(), 0.0, Measure::Nmi, Estimator::ExactDiscrete))
}

/// Classic VI, `H(A) + H(B) - 2 I = 2 H(A,B) - H(A) - H(B)`.
pub fn vi_hard(a: &HardClustering, b: &HardClustering) -> Result<SimilarityValue> {
    let (ha, hb, hab) = hard_entropies(a, b)?;
    Ok(SimilarityValue::defined(2.0 * hab - (ha + hb), 0.0, Measure::Vi, Estimator::ExactDiscrete))
}

/// Double-centers a fingerprint: `H K H` with `H = I - 11ᵀ/n`.
fn centered(f: &Fingerprint) -> Vec<f64> {
    let n = f.len();
    let row_means: Vec<f64> = (0..n).map(|i| f.row(i).iter().sum::<f64>() / n as f64).collect();
    // Fingerprints are symmetric, so column means equal row means.
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for (j, &v) in f.row(i).iter().enumerate() {
            out.push(v - row_means[i] - row_means[j] + grand);
        }
    }
    out
}

fn hsic_centered(a: &[f64], b: &[f64], n: usize) -> f64 {
    let dof = (n as f64 - 1.0) * (n as f64 - 1.0);
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / dof
}

/// CKA with Bhattacharyya matrices as the kernels:
/// `HSIC(K,L) = tr(K H L H) / (n-1)²`, normalized by the self-HSICs.
pub fn cka_bc(f_u: &Fingerprint, f_v: &Fingerprint) -> Result<SimilarityValue> {
    f_u.sample_ids().ensure_aligned(f_v.sample_ids())?;
    let n = f_u.len();
    let (ku, kv) = (centered(f_u), centered(f_v));
    let (huu, hvv) = (hsic_centered(&ku, &ku, n), hsic_centered(&kv, &kv, n));
    if huu <= MIN_SELF_HSIC || hvv <= MIN_SELF_HSIC {
        return Ok(SimilarityValue::undefined(Undefined::ZeroSelfHsic, Measure::CkaBc, Estimator::KtBound));
    }
    let huv = hsic_centered(&ku, &kv, n);
    Ok(SimilarityValue::defined(huv / (huu * hvv).sqrt(), 0.0, Measure::CkaBc, Estimator::KtBound))
}

/// NMI to distance: `-ln max(NMI, 1e-4)`. `NaN` if the NMI is undefined.
pub fn to_distance(s: &SimilarityValue) -> Result<f64> {
    if s.measure != Measure::Nmi {
        return Err(Error::InvalidInput(format!("to_distance expects NMI, got {:?}", s.measure)));
    }
    Ok(if s.is_defined() {
        nmi_distance(s.value)
    } else {
        f64::NAN
    })
}

pub fn nmi_distance(nmi: f64) -> f64 {
    -nmi.max(NMI_DISTANCE_FLOOR).ln()
}

/// VI to similarity: `exp(-VI)` with VI taken in nats, i.e. `2^(-VI_bits)`.
pub fn to_similarity(s: &SimilarityValue) -> Result<f64> {
    if s.measure != Measure::Vi {
        return Err(Error::InvalidInput(format!("to_similarity expects VI, got {:?}", s.measure)));
    }
    Ok(if s.is_defined() {
        vi_similarity(s.value)
    } else {
        f64::NAN
    })
}

pub fn vi_similarity(vi_bits: f64) -> f64 {
    (-vi_bits * LN_2).exp()
}
