//! Channel-level structure of a model ensemble.
//!
//! Every latent dimension of every model is a 1-D space. Channels carrying
//! almost no information are dropped, the rest are compared pairwise, and
//! OPTICS orders the similarity matrix so that groups of channels encoding
//! the same thing show up as valleys in the reachability profile.

pub mod optics;

use std::f64::consts::LN_2;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::HardClustering;
use crate::error::{Error, Result};
use crate::estimators::{info_kt_rows, Estimator, InfoEstimate};
use crate::fingerprint::{fingerprint_gaussian, fingerprint_hard, Fingerprint, RowSource};
use crate::posterior::{marginal_channel, PosteriorSet};
use crate::similarity::{kt_terms_rows, nmi_distance, InfoTerms, Measure};

pub use optics::{extract_groups, optics, optics_order, OpticsParams, OpticsResult};

/// Default informativeness threshold, in bits.
pub const DEFAULT_THRESHOLD_BITS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelRef {
    pub model_id: String,
    pub dim: usize,
}

impl std::fmt::Display for ChannelRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/ch{}", self.model_id, self.dim)
    }
}

/// A channel with the rows of its fingerprint available through `S`.
#[derive(Clone, Debug)]
pub struct Channel<S> {
    pub reference: ChannelRef,
    pub source: S,
}

fn check_ensemble(ensemble: &[PosteriorSet]) -> Result<()> {
    if let Some(first) = ensemble.first() {
        for set in &ensemble[1..] {
            first.sample_ids().ensure_aligned(set.sample_ids())?;
        }
    }
    Ok(())
}

fn channel_sets(ensemble: &[PosteriorSet]) -> Result<Vec<Channel<PosteriorSet>>> {
    check_ensemble(ensemble)?;
    let mut out = Vec::new();
    for set in ensemble {
        for dim in 0..set.dim() {
            out.push(Channel {
                reference: ChannelRef {
                    model_id: set.space_id().model.clone(),
                    dim,
                },
                source: marginal_channel(set, dim)?,
            });
        }
    }
    Ok(out)
}

/// One materialized 1-D fingerprint per (model, dim).
pub fn collect_channels(ensemble: &[PosteriorSet]) -> Result<Vec<Channel<Fingerprint>>> {
    Ok(channel_sets(ensemble)?
        .into_iter()
        .map(|c| Channel {
            reference: c.reference,
            source: fingerprint_gaussian(&c.source),
        })
        .collect())
}

/// Like [`collect_channels`] but keeps each channel as its 1-D posterior
/// set; fingerprint rows are computed when needed. Use for ensembles whose
/// fingerprints do not fit in memory.
pub fn posterior_channels(ensemble: &[PosteriorSet]) -> Result<Vec<Channel<PosteriorSet>>> {
    channel_sets(ensemble)
}

/// Keeps channels with `info_kt ≥ threshold_bits`, in order, together with
/// their information.
pub fn filter_informative<S: RowSource + Send>(
    channels: Vec<Channel<S>>,
    threshold_bits: f64,
) -> Result<Vec<(Channel<S>, InfoEstimate)>> {
    if !(threshold_bits >= 0.0) {
        return Err(Error::Config(format!("threshold must be >= 0, got {threshold_bits}")));
    }
    let infos: Vec<InfoEstimate> = channels.par_iter().map(|c| info_kt_rows(&c.source)).collect();
    Ok(channels
        .into_iter()
        .zip(infos)
        .filter(|(_, info)| info.bits >= threshold_bits)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    pub refs: Vec<ChannelRef>,
    pub measure: Measure,
    /// Whether `values` are distances (zero diagonal) rather than similarities.
    pub is_distance: bool,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// NMI becomes `-ln max(NMI, 1e-4)`; VI is already a distance.
    pub fn to_distance(&self) -> Result<SimilarityMatrix> {
        if self.is_distance {
            return Ok(self.clone());
        }
        let values = match self.measure {
            Measure::Nmi => self.values.mapv(nmi_distance),
            Measure::Vi => self.values.clone(),
            m => return Err(Error::InvalidInput(format!("no distance transform for {m:?}"))),
        };
        let mut values = values;
        values.diag_mut().fill(0.0);
        Ok(SimilarityMatrix {
            values,
            refs: self.refs.clone(),
            measure: self.measure,
            is_distance: true,
        })
    }

    /// Rows and columns rearranged into `order`.
    pub fn reordered(&self, order: &[usize]) -> SimilarityMatrix {
        let values = Array2::from_shape_fn((order.len(), order.len()), |(a, b)| self.values[[order[a], order[b]]]);
        SimilarityMatrix {
            values,
            refs: order.iter().map(|&i| self.refs[i].clone()).collect(),
            measure: self.measure,
            is_distance: self.is_distance,
        }
    }
}

/// Rows of the joint fingerprints are processed in fixed blocks so results do
/// not depend on the thread count.
const ROW_BLOCK: usize = 16;

/// Pairwise NMI, VI or MI between all channels, from the fingerprint bound.
///
/// For each datum `i` the `i`-th fingerprint rows of all `M` channels are
/// stacked into `R_i` (`M×N`); `R_i R_iᵀ` holds every joint row sum at once,
/// and its diagonal the self-joint ones.
pub fn pairwise_similarity<S: RowSource + Send>(channels: &[Channel<S>], measure: Measure) -> Result<SimilarityMatrix> {
    let m = channels.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 channels, got {m}")));
    }
    if !matches!(measure, Measure::Nmi | Measure::Vi | Measure::Mi) {
        return Err(Error::InvalidInput(format!("unsupported channel measure {measure:?}")));
    }
    let ids = channels[0].source.sample_ids();
    for c in &channels[1..] {
        ids.ensure_aligned(c.source.sample_ids())?;
    }
    let n = ids.len();
    let nf = n as f64;

    let blocks: Vec<(Array2<f64>, Vec<f64>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(ROW_BLOCK)
        .map(|rows| {
            let mut joint = Array2::<f64>::zeros((m, m));
            let mut single = vec![0.0; m];
            let mut r = Array2::<f64>::zeros((m, n));
            for &i in rows {
                for (c, mut out) in channels.iter().zip(r.axis_iter_mut(Axis(0))) {
                    c.source.fill_row(i, out.as_slice_mut().expect("standard layout"));
                }
                for (s, row) in single.iter_mut().zip(r.rows()) {
                    *s += (row.sum() / nf).ln();
                }
                let g = r.dot(&r.t());
                for a in 0..m {
                    for b in a..m {
                        joint[[a, b]] += (g[[a, b]] / nf).ln();
                    }
                }
            }
            (joint, single)
        })
        .collect();

    let mut joint = Array2::<f64>::zeros((m, m));
    let mut single = vec![0.0; m];
    for (j, s) in blocks {
        joint += &j;
        single.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    let to_bits = |acc: f64| InfoEstimate {
        bits: -acc / nf / LN_2 + 0.0,
        std_err: 0.0,
        estimator: Estimator::KtBound,
        n_support: n,
    };

    let mut values = Array2::<f64>::zeros((m, m));
    for a in 0..m {
        for b in a..m {
            let terms = InfoTerms {
                u: to_bits(single[a]),
                v: to_bits(single[b]),
                uv: to_bits(joint[[a, b]]),
                uu: to_bits(joint[[a, a]]),
                vv: to_bits(joint[[b, b]]),
            };
            let v = match measure {
                Measure::Nmi => terms.nmi_value().unwrap_or(f64::NAN),
                Measure::Vi => terms.vi_value(),
                _ => terms.mutual_information(),
            };
            values[[a, b]] = v;
            values[[b, a]] = v;
        }
        match measure {
            Measure::Nmi if values[[a, a]].is_finite() => values[[a, a]] = 1.0,
            Measure::Vi => values[[a, a]] = 0.0,
            _ => {}
        }
    }
    Ok(SimilarityMatrix {
        values,
        refs: channels.iter().map(|c| c.reference.clone()).collect(),
        measure,
        is_distance: false,
    })
}

/// Group member with the highest mean similarity to the other members;
/// ties go to the earliest member.
pub fn representative(group: &[usize], sim: &SimilarityMatrix) -> Result<usize> {
    if group.is_empty() {
        return Err(Error::InvalidInput("empty group".into()));
    }
    if sim.is_distance {
        return Err(Error::InvalidInput("representative needs a similarity matrix".into()));
    }
    if group.len() == 1 {
        return Ok(group[0]);
    }
    let mut best = (group[0], f64::NEG_INFINITY);
    for &a in group {
        let mean = group.iter().filter(|&&b| b != a).map(|&b| sim.values[[a, b]]).sum::<f64>() / (group.len() - 1) as f64;
        if mean > best.1 {
            best = (a, mean);
        }
    }
    Ok(best.0)
}

/// Similarity of every channel to a ground-truth factor. The factor's labels
/// must be listed in the channels' sample order.
pub fn factor_info_column<S: RowSource + Send>(
    channels: &[Channel<S>],
    factor: &HardClustering,
    measure: Measure,
) -> Result<Vec<f64>> {
    let Some(first) = channels.first() else {
        return Ok(Vec::new());
    };
    let ids = first.source.sample_ids();
    if factor.len() != ids.len() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            found: factor.len(),
        });
    }
    let ff = fingerprint_hard(factor).with_sample_ids(ids.clone())?;
    channels
        .par_iter()
        .map(|c| {
            let terms = kt_terms_rows(&c.source, &ff)?;
            Ok(match measure {
                Measure::Nmi => terms.nmi_value().unwrap_or(f64::NAN),
                Measure::Vi => terms.vi_value(),
                Measure::Mi => terms.mutual_information(),
                m => return Err(Error::InvalidInput(format!("unsupported factor measure {m:?}"))),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub threshold_bits: f64,
    pub optics: OpticsParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            threshold_bits: DEFAULT_THRESHOLD_BITS,
            optics: OpticsParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelReport {
    /// Channels kept by the informativeness filter, in input order.
    pub kept: Vec<ChannelRef>,
    pub kept_bits: Vec<f64>,
    pub dropped: Vec<ChannelRef>,
    /// NMI between kept channels; `None` when fewer than two were kept.
    pub similarity: Option<SimilarityMatrix>,
    /// `None` when fewer channels than `min_samples` were kept.
    pub optics: Option<OpticsResult>,
    /// Index into `kept` of each group's representative.
    pub representatives: Vec<usize>,
}

impl ChannelReport {
    /// Groups as channel references.
    pub fn group_refs(&self) -> Vec<Vec<ChannelRef>> {
        self.optics
            .as_ref()
            .map(|o| o.groups.iter().map(|g| g.iter().map(|&i| self.kept[i].clone()).collect()).collect())
            .unwrap_or_default()
    }
}

/// Filter, compare, order and group the channels of an ensemble.
pub fn run_pipeline<S: RowSource + Send>(channels: Vec<Channel<S>>, cfg: &PipelineConfig) -> Result<ChannelReport> {
    let refs: Vec<ChannelRef> = channels.iter().map(|c| c.reference.clone()).collect();
    let kept = filter_informative(channels, cfg.threshold_bits)?;
    let kept_refs: Vec<ChannelRef> = kept.iter().map(|(c, _)| c.reference.clone()).collect();
    let dropped = refs.into_iter().filter(|r| !kept_refs.contains(r)).collect();
    let kept_bits = kept.iter().map(|(_, i)| i.bits).collect();
    let mut report = ChannelReport {
        kept: kept_refs,
        kept_bits,
        dropped,
        similarity: None,
        optics: None,
        representatives: Vec::new(),
    };
    if kept.len() < 2 {
        return Ok(report);
    }
    let kept: Vec<Channel<S>> = kept.into_iter().map(|(c, _)| c).collect();
    let sim = pairwise_similarity(&kept, Measure::Nmi)?;
    if kept.len() >= cfg.optics.min_samples {
        let dist = sim.to_distance()?;
        let o = optics(&dist.values, cfg.optics)?;
        report.representatives = o.groups.iter().map(|g| representative(g, &sim)).collect::<Result<_>>()?;
        report.optics = Some(o);
    }
    report.similarity = Some(sim);
    Ok(report)
}
