//! Model fusion: gradient ascent on the posterior parameters of a synthesis
//! space so that its fingerprint agrees, on average, with an ensemble of
//! fingerprints. Only the ensemble fingerprints are needed, never the data
//! or the models that produced them.
//!
//! The synthesis fingerprint is rebuilt from the closed-form Bhattacharyya
//! coefficient every step, and gradients flow analytically through the
//! fingerprint bound and the closed form.

use std::f64::consts::LN_2;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::numeric::{dot, kt_bits_from_row_sums, sum};
use crate::posterior::{PosteriorSet, SampleIds, SpaceId};
use crate::similarity::MIN_SELF_INFORMATION;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    AvgNmi,
    /// Mean of `exp(-VI)`, VI in nats.
    AvgExpNegVi,
    /// Mean unnormalized `I(U;V_m)`.
    AvgMi,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmi" | "avg_nmi" => Ok(Objective::AvgNmi),
            "exp-neg-vi" | "avg_exp_neg_vi" => Ok(Objective::AvgExpNegVi),
            "mi" | "avg_mi" => Ok(Objective::AvgMi),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub objective: Objective,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub init_mean_scale: f64,
    pub init_stddev: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            objective: Objective::AvgNmi,
            latent_dim: 2,
            learning_rate: 3.0,
            steps: 20_000,
            seed: 0,
            init_mean_scale: 0.1,
            init_stddev: 1.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if !(self.init_mean_scale >= 0.0 && self.init_mean_scale.is_finite()) {
            return Err(Error::Config(format!("init_mean_scale must be >= 0, got {}", self.init_mean_scale)));
        }
        if !(self.init_stddev > 0.0 && self.init_stddev.is_finite()) {
            return Err(Error::Config(format!("init_stddev must be positive, got {}", self.init_stddev)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionState {
    pub means: Array2<f64>,
    pub log_stddevs: Array2<f64>,
    /// Updates applied so far.
    pub step: usize,
    /// Objective before each update; after a completed run the last entry
    /// is the objective of the final parameters.
    pub objective_trace: Vec<f64>,
}

impl FusionState {
    /// Means from `Normal(0, init_mean_scale)`, log-stddevs `ln(init_stddev)`.
    pub fn init(n: usize, cfg: &FusionConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_mean_scale).map_err(|e| Error::Config(e.to_string()))?;
        let means = Array2::from_shape_simple_fn((n, cfg.latent_dim), || normal.sample(&mut rng));
        let log_stddevs = Array2::from_elem((n, cfg.latent_dim), cfg.init_stddev.ln());
        Ok(FusionState {
            means,
            log_stddevs,
            step: 0,
            objective_trace: Vec::new(),
        })
    }

    pub fn from_params(means: Array2<f64>, log_stddevs: Array2<f64>) -> Result<Self> {
        if means.dim() != log_stddevs.dim() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                found: log_stddevs.len(),
            });
        }
        Ok(FusionState {
            means: means.as_standard_layout().into_owned(),
            log_stddevs: log_stddevs.as_standard_layout().into_owned(),
            step: 0,
            objective_trace: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.means.nrows()
    }

    pub fn to_posterior_set(&self, sample_ids: SampleIds, space_id: SpaceId) -> Result<PosteriorSet> {
        PosteriorSet::new(self.means.clone(), self.log_stddevs.mapv(f64::exp), sample_ids, space_id)
    }
}

/// Gradient of the objective with respect to the state parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub value: f64,
    pub means: Array2<f64>,
    pub log_stddevs: Array2<f64>,
}

/// Ensemble quantities that stay fixed during optimization.
struct Prepared<'a> {
    n: usize,
    members: Vec<&'a [f64]>,
    info: Vec<f64>,
    self_info: Vec<f64>,
}

fn prepare(ensemble: &[Fingerprint]) -> Result<Prepared<'_>> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::InvalidInput("fusion needs at least one ensemble member".into()))?;
    for f in &ensemble[1..] {
        first.sample_ids().ensure_aligned(f.sample_ids())?;
    }
    let n = first.len();
    let mut info = Vec::new();
    let mut self_info = Vec::new();
    for f in ensemble {
        let v = f.as_slice();
        let iv = kt_bits_from_row_sums((0..n).map(|i| sum(&v[i * n..(i + 1) * n])), n) + 0.0;
        let ivv = kt_bits_from_row_sums((0..n).map(|i| dot(&v[i * n..(i + 1) * n], &v[i * n..(i + 1) * n])), n) + 0.0;
        info.push(iv);
        self_info.push(2.0 * iv - ivv);
    }
    Ok(Prepared {
        n,
        members: ensemble.iter().map(Fingerprint::as_slice).collect(),
        info,
        self_info,
    })
}

fn check_state(state: &FusionState, prep: &Prepared) -> Result<()> {
    if state.n() != prep.n {
        return Err(Error::DimensionMismatch {
            expected: prep.n,
            found: state.n(),
        });
    }
    Ok(())
}

/// Objective (and optionally its gradient) at the state's parameters.
/// `step` labels an undefined objective.
fn evaluate(state: &FusionState, prep: &Prepared, objective: Objective, with_grad: bool, step: usize) -> Result<Gradient> {
    let n = prep.n;
    let d = state.means.ncols();
    let mu = state.means.as_slice().expect("standard layout");
    let std: Vec<f64> = state.log_stddevs.iter().map(|l| l.exp()).collect();

    let var: Vec<f64> = std.iter().map(|s| s * s).collect();

    // BC = sqrt(Π_k 2 σ_ik σ_jk / S_k) · exp(-Σ_k Δ_k² / (4 S_k)); 1/S_k is kept for the gradient.
    let mut b = vec![0.0; n * n];
    let mut inv_s = vec![0.0; if with_grad { n * n * d } else { 0 }];
    for i in 0..n {
        b[i * n + i] = 1.0;
        for j in i + 1..n {
            let (mut prod, mut quad) = (1.0, 0.0);
            for k in 0..d {
                let (a, c) = (i * d + k, j * d + k);
                let inv = 1.0 / (var[a] + var[c]);
                let delta = mu[a] - mu[c];
                prod *= 2.0 * std[a] * std[c] * inv;
                quad += delta * delta * inv;
                if with_grad {
                    inv_s[(i * n + j) * d + k] = inv;
                }
            }
            let v = prod.sqrt() * (-0.25 * quad).exp();
            b[i * n + j] = v;
            b[j * n + i] = v;
        }
    }
    let row = |i: usize| &b[i * n..(i + 1) * n];
    let rb: Vec<f64> = (0..n).map(|i| sum(row(i))).collect();
    let rbb: Vec<f64> = (0..n).map(|i| dot(row(i), row(i))).collect();
    let iu = kt_bits_from_row_sums(rb.iter().copied(), n) + 0.0;
    let iuu = kt_bits_from_row_sums(rbb.iter().copied(), n) + 0.0;
    let su = 2.0 * iu - iuu;

    let m = prep.members.len();
    let mf = m as f64;
    let mut value = 0.0;
    // Weights of dI_U, dI_UU and each dI_UV_m in the averaged objective.
    let (mut w_u, mut w_uu) = (0.0, 0.0);
    let mut w_uv = vec![0.0; m];
    let mut rbf = vec![0.0; if with_grad { m * n } else { 0 }];
    for (k, f) in prep.members.iter().enumerate() {
        let sums: Vec<f64> = (0..n).map(|i| dot(row(i), &f[i * n..(i + 1) * n])).collect();
        let iuv = kt_bits_from_row_sums(sums.iter().copied(), n) + 0.0;
        if with_grad {
            rbf[k * n..(k + 1) * n].copy_from_slice(&sums);
        }
        let (iv, sv) = (prep.info[k], prep.self_info[k]);
        match objective {
            Objective::AvgNmi => {
                if su < MIN_SELF_INFORMATION || sv < MIN_SELF_INFORMATION {
                    return Err(Error::ObjectiveUndefined { step });
                }
                let inv = 1.0 / (su * sv).sqrt();
                let nmi = ((iu + iv) - iuv) * inv;
                value += nmi;
                w_u += inv - nmi / su;
                w_uu += nmi / (2.0 * su);
                w_uv[k] = -inv;
            }
            Objective::AvgExpNegVi => {
                let ivv = 2.0 * iv - sv;
                let vi = 2.0 * iuv - (iuu + ivv);
                let sim = (-vi * LN_2).exp();
                value += sim;
                w_uu += sim * LN_2;
                w_uv[k] = -2.0 * sim * LN_2;
            }
            Objective::AvgMi => {
                value += (iu + iv) - iuv;
                w_u += 1.0;
                w_uv[k] = -1.0;
            }
        }
    }
    value /= mf;
    let mut grad_mu = Array2::zeros((n, d));
    let mut grad_ls = Array2::zeros((n, d));
    if !with_grad {
        return Ok(Gradient {
            value,
            means: grad_mu,
            log_stddevs: grad_ls,
        });
    }

    // dObjective/dB_ij, with B_ij and B_ji treated as separate entries.
    let c = -1.0 / (n as f64 * LN_2) / mf;
    let mut g = vec![0.0; n * n];
    let mut scale = vec![0.0; m];
    for i in 0..n {
        let a = c * w_u / rb[i];
        let bb = c * w_uu * 2.0 / rbb[i];
        let gi = &mut g[i * n..(i + 1) * n];
        for (gij, bij) in gi.iter_mut().zip(row(i)) {
            *gij = a + bb * bij;
        }
        for (k, s) in scale.iter_mut().enumerate() {
            *s = c * w_uv[k] / rbf[k * n + i];
        }
        for (f, s) in prep.members.iter().zip(&scale) {
            for (gij, fij) in gi.iter_mut().zip(&f[i * n..(i + 1) * n]) {
                *gij += s * fij;
            }
        }
    }

    let gm = grad_mu.as_slice_mut().expect("standard layout");
    let gl = grad_ls.as_slice_mut().expect("standard layout");
    for i in 0..n {
        for j in i + 1..n {
            let w = (g[i * n + j] + g[j * n + i]) * b[i * n + j];
            for k in 0..d {
                let (a, bk) = (i * d + k, j * d + k);
                let delta = mu[a] - mu[bk];
                let (vi, vj) = (var[a], var[bk]);
                let inv = inv_s[(i * n + j) * d + k];
                let t = 0.5 * delta * delta * inv * inv;
                let wd = -0.5 * w * delta * inv;
                gm[a] += wd;
                gm[bk] -= wd;
                gl[a] += w * (0.5 + vi * (t - inv));
                gl[bk] += w * (0.5 + vj * (t - inv));
            }
        }
    }
    Ok(Gradient {
        value,
        means: grad_mu,
        log_stddevs: grad_ls,
    })
}

/// Average similarity between the state's fingerprint and the ensemble.
pub fn objective_value(state: &FusionState, ensemble: &[Fingerprint], cfg: &FusionConfig) -> Result<f64> {
    let prep = prepare(ensemble)?;
    check_state(state, &prep)?;
    Ok(evaluate(state, &prep, cfg.objective, false, state.step)?.value)
}

/// Analytic gradient of [`objective_value`].
pub fn objective_grad(state: &FusionState, ensemble: &[Fingerprint], cfg: &FusionConfig) -> Result<Gradient> {
    let prep = prepare(ensemble)?;
    check_state(state, &prep)?;
    evaluate(state, &prep, cfg.objective, true, state.step)
}

/// Runs `cfg.steps` plain gradient-ascent updates from a seeded initial state.
pub fn fuse(ensemble: &[Fingerprint], cfg: &FusionConfig) -> Result<(PosteriorSet, FusionState)> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::InvalidInput("fusion needs at least one ensemble member".into()))?;
    let state = FusionState::init(first.len(), cfg)?;
    fuse_from_state(state, ensemble, cfg)
}

/// [`fuse`] from a given initial state.
pub fn fuse_from_state(
    mut state: FusionState,
    ensemble: &[Fingerprint],
    cfg: &FusionConfig,
) -> Result<(PosteriorSet, FusionState)> {
    cfg.validate()?;
    let prep = prepare(ensemble)?;
    check_state(&state, &prep)?;
    state.objective_trace.reserve(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let step = state.step;
        let g = evaluate(&state, &prep, cfg.objective, true, step)?;
        state.objective_trace.push(g.value);
        state.means.scaled_add(cfg.learning_rate, &g.means);
        state.log_stddevs.scaled_add(cfg.learning_rate, &g.log_stddevs);
        state.step += 1;
        if !(state.means.iter().all(|v| v.is_finite()) && state.log_stddevs.iter().all(|v| v.is_finite() && v.exp() > 0.0)) {
            return Err(Error::Divergence { step });
        }
    }
    let last = evaluate(&state, &prep, cfg.objective, false, state.step)?;
    state.objective_trace.push(last.value);
    let set = state.to_posterior_set(ensemble[0].sample_ids().clone(), SpaceId::new("fused"))?;
    Ok((set, state))
}
