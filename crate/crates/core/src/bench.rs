//! Synthetic spaces with known structure, and the metrics used to score
//! what the library recovers from them.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::log_bc;
use crate::numeric::percentile;
use crate::posterior::{PosteriorSet, SampleIds, SpaceId};

/// What to generate; recorded alongside generated artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    NineSpaceSuite { n_points: usize, seed: u64 },
    So2Weak { n_points: usize, seed: u64, noise: f64 },
    PlantedChannels(PlantedParams),
    SeparatedGaussians { k: usize, copies: usize, seed: u64 },
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn set_2d(cols: [&[f64]; 2], stds: [&[f64]; 2], name: &str) -> PosteriorSet {
    let n = cols[0].len();
    let means = Array2::from_shape_fn((n, 2), |(i, k)| cols[k][i]);
    let stddevs = Array2::from_shape_fn((n, 2), |(i, k)| stds[k][i]);
    PosteriorSet::new(means, stddevs, SampleIds::range(n), SpaceId::new(name)).expect("valid construction")
}

fn set_1d(means: &[f64], stds: &[f64], name: &str) -> PosteriorSet {
    PosteriorSet::from_1d(means, stds, SpaceId::new(name)).expect("valid construction")
}

pub const NINE_SPACE_NAMES: [&str; 9] = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix"];

/// Nine spaces over `n` data points whose latent order is `t_k = k / n`:
///
/// - `i`, `iv`, `vi`: the order along a line, along a half circle, and along
///   an exponentially stretched line whose widths follow the stretch. Their
///   neighbourhood structure, and so their information, coincide.
/// - `ii`, `v`: noisier copies of `i` and `iv` (wider posteriors, jittered means).
/// - `iii`: a 2-D grid whose rows follow the order.
/// - `vii`, `ix`: the same two-way split (first half vs second half) as two
///   1-D blobs and as two 2-D blobs.
/// - `viii`: the same split with the blobs overlapping.
pub fn gen_nine_space_suite(n: usize, seed: u64) -> Result<Vec<PosteriorSet>> {
    if n < 8 {
        return Err(Error::Config(format!("nine-space suite needs n >= 8, got {n}")));
    }
    let mut rng = rng(seed);
    let nf = n as f64;
    let t: Vec<f64> = (0..n).map(|k| k as f64 / nf).collect();
    // Neighbouring points are `step` apart in every ordering space.
    let step = 1.0;
    // Wide enough that neighbourhoods overlap, so geometry shows in the fingerprint.
    let sigma = 1.5 * step;
    let len = step * nf;

    let line: Vec<f64> = t.iter().map(|t| t * len).collect();
    let i = set_1d(&line, &vec![sigma; n], "i");

    let noisy: Vec<f64> = line.iter().map(|x| x + 0.5 * step * normal(&mut rng)).collect();
    let ii = set_1d(&noisy, &vec![2.0 * sigma; n], "ii");

    let side = (nf.sqrt().ceil()) as usize;
    let gx: Vec<f64> = (0..n).map(|k| (k % side) as f64 * step).collect();
    let gy: Vec<f64> = (0..n).map(|k| (k / side) as f64 * step).collect();
    let iii = set_2d([&gx, &gy], [&vec![sigma; n], &vec![sigma; n]], "iii");

    // Half circle with arc spacing `step`.
    let radius = len / PI;
    let ax: Vec<f64> = t.iter().map(|t| radius * (PI * t).cos()).collect();
    let ay: Vec<f64> = t.iter().map(|t| radius * (PI * t).sin()).collect();
    let iv = set_2d([&ax, &ay], [&vec![sigma; n], &vec![sigma; n]], "iv");

    let jx: Vec<f64> = ax.iter().map(|x| x + 0.5 * step * normal(&mut rng)).collect();
    let jy: Vec<f64> = ay.iter().map(|y| y + 0.5 * step * normal(&mut rng)).collect();
    let v = set_2d([&jx, &jy], [&vec![2.0 * sigma; n], &vec![2.0 * sigma; n]], "v");

    // u = exp(a t) / a, so local spacing and width both scale with exp(a t).
    let a = 3.0 / len;
    let stretch: Vec<f64> = line.iter().map(|x| (a * x).exp() / a).collect();
    let widths: Vec<f64> = line.iter().map(|x| sigma * (a * x).exp()).collect();
    let vi = set_1d(&stretch, &widths, "vi");

    let half: Vec<f64> = (0..n).map(|k| if 2 * k < n { 0.0 } else { 1.0 }).collect();
    let vii = set_1d(&half.iter().map(|h| h * 20.0).collect::<Vec<_>>(), &vec![1.0; n], "vii");
    let viii = set_1d(&half.iter().map(|h| h * 1.5).collect::<Vec<_>>(), &vec![1.0; n], "viii");
    let bx: Vec<f64> = half.iter().map(|h| h * 12.0).collect();
    let by: Vec<f64> = half.iter().map(|h| -h * 9.0).collect();
    let ix = set_2d([&bx, &by], [&vec![0.5; n], &vec![2.0; n]], "ix");

    Ok(vec![i, ii, iii, iv, v, vi, vii, viii, ix])
}

/// A simulated weak 1-D learner of a circular factor.
#[derive(Clone, Debug)]
pub struct So2Learner {
    pub space: PosteriorSet,
    /// Generative angle of each datum.
    pub angles: Vec<f64>,
    /// Datum at which the circle is cut open; it and its predecessor land at
    /// opposite ends of the interval.
    pub cut: usize,
}

/// Interval half-width of the simulated learners.
pub const SO2_SCALE: f64 = 2.0;
/// Default posterior width of the simulated learners.
pub const SO2_DEFAULT_NOISE: f64 = 0.05;

/// Maps `n` equally spaced angles onto `[-2, 2]` after cutting the circle at
/// a random gap. Orientation is random; posterior widths vary smoothly with
/// the angle between `noise` and `1.5 noise`.
pub fn gen_so2_weak(n: usize, seed: u64, noise: f64) -> Result<So2Learner> {
    if n < 16 {
        return Err(Error::Config(format!("so2 learner needs n >= 16, got {n}")));
    }
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be positive, got {noise}")));
    }
    let mut rng = rng(seed);
    let cut = rng.random_range(0..n);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let phase = rng.random_range(0.0..2.0 * PI);
    let angles: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    let means: Vec<f64> = (0..n)
        .map(|i| {
            let p = ((i + n - cut) % n) as f64 / (n - 1) as f64;
            sign * SO2_SCALE * (2.0 * p - 1.0)
        })
        .collect();
    let stds: Vec<f64> = angles
        .iter()
        .map(|&a| noise * (1.0 + 0.5 * (0.5 + 0.5 * (a + phase).sin())))
        .collect();
    Ok(So2Learner {
        space: set_1d(&means, &stds, &format!("so2-{seed}")),
        angles,
        cut,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub groups: usize,
    pub models: usize,
    pub dims: usize,
    pub informative_per_model: usize,
    /// Per-model noise on the fragment, relative to the fragment range `[-1, 1]`.
    pub noise: f64,
    /// Posterior width, in fragment units.
    pub posterior_std: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        PlantedParams {
            groups: 5,
            models: 50,
            dims: 10,
            informative_per_model: 5,
            noise: 0.05,
            posterior_std: 0.05,
            n_points: 1000,
            seed: 0,
        }
    }
}

/// Generated ensemble with the fragment behind each (model, dim); `None`
/// marks an uninformative dim.
#[derive(Clone, Debug)]
pub struct PlantedEnsemble {
    pub models: Vec<PosteriorSet>,
    pub assignment: Vec<Vec<Option<usize>>>,
}

impl PlantedEnsemble {
    /// Planted fragment of each channel in model-major order.
    pub fn channel_labels(&self) -> Vec<Option<usize>> {
        self.assignment.iter().flatten().copied().collect()
    }
}

/// Every datum carries `groups` independent fragments `f_g ~ U(-1, 1)`.
/// Each model encodes a random subset of them in random dims as
/// `a (f_g + noise ε) + b` with posterior width `|a| posterior_std`; the
/// other dims are near-constant with unit width.
pub fn gen_planted_channels(p: &PlantedParams) -> Result<PlantedEnsemble> {
    if p.informative_per_model > p.groups.min(p.dims) {
        return Err(Error::Config(format!(
            "informative_per_model = {} exceeds min(groups = {}, dims = {})",
            p.informative_per_model, p.groups, p.dims
        )));
    }
    if p.n_points < 4 || p.models == 0 || p.dims == 0 {
        return Err(Error::Config("planted ensemble needs n_points >= 4 and at least one model and dim".into()));
    }
    if !(p.noise >= 0.0 && p.posterior_std > 0.0) {
        return Err(Error::Config("noise must be >= 0 and posterior_std > 0".into()));
    }
    let mut rng = rng(p.seed);
    let n = p.n_points;
    let fragments: Vec<Vec<f64>> = (0..p.groups).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ids = SampleIds::range(n);
    let mut models = Vec::with_capacity(p.models);
    let mut assignment = Vec::with_capacity(p.models);
    for m in 0..p.models {
        let mut groups: Vec<usize> = (0..p.groups).collect();
        groups.shuffle(&mut rng);
        let mut dims: Vec<usize> = (0..p.dims).collect();
        dims.shuffle(&mut rng);
        let mut assign = vec![None; p.dims];
        for (&g, &d) in groups.iter().zip(&dims).take(p.informative_per_model) {
            assign[d] = Some(g);
        }
        let mut means = Array2::zeros((n, p.dims));
        let mut stds = Array2::zeros((n, p.dims));
        for (d, a) in assign.iter().enumerate() {
            match *a {
                Some(g) => {
                    let scale = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let shift = rng.random_range(-1.0..1.0);
                    for i in 0..n {
                        means[[i, d]] = scale * (fragments[g][i] + p.noise * normal(&mut rng)) + shift;
                        stds[[i, d]] = scale.abs() * p.posterior_std;
                    }
                }
                None => {
                    for i in 0..n {
                        means[[i, d]] = 1e-3 * normal(&mut rng);
                        stds[[i, d]] = 1.0;
                    }
                }
            }
        }
        models.push(PosteriorSet::new(means, stds, ids.clone(), SpaceId::new(format!("model{m:03}")))?);
        assignment.push(assign);
    }
    Ok(PlantedEnsemble { models, assignment })
}

/// `k` far-apart posterior locations in `d` dims, each repeated `copies`
/// times; carries exactly `log2 k` bits. Returns the set and each datum's
/// location index.
pub fn gen_separated_gaussians(k: usize, copies: usize, d: usize, seed: u64) -> Result<(PosteriorSet, Vec<usize>)> {
    if k == 0 || copies == 0 || d == 0 || k * copies < 2 {
        return Err(Error::Config("separated suite needs k, copies, d >= 1 and at least 2 points".into()));
    }
    let mut rng = rng(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[0] += 1e4 * c as f64;
            v
        })
        .collect();
    let n = k * copies;
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let means = Array2::from_shape_fn((n, d), |(i, j)| centers[labels[i]][j]);
    let stds = Array2::from_elem((n, d), 1.0);
    let set = PosteriorSet::new(means, stds, SampleIds::range(n), SpaceId::new(format!("separated-{k}")))?;
    Ok((set, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Continuity {
    /// `max(r) / p90(r)`; lower is better, 1 is perfectly even.
    pub ratio: f64,
    /// Set when the ratio is infinite (all but a few pairs coincide).
    pub infinite: bool,
    /// Per-pair `D / data distance`, in cyclic order.
    pub pair_ratios: Vec<f64>,
}

/// Adapted continuity metric over a cyclic order of the data:
/// `r_i = D(o_i, o_{i+1}) / data_dist_i` with `D = -ln BC`, reported as
/// `max(r) / percentile_90(r)`.
pub fn continuity(space: &PosteriorSet, order: &[usize], data_dist: &[f64]) -> Result<Continuity> {
    let n = space.len();
    if order.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: order.len() });
    }
    let mut seen = vec![false; n];
    for &o in order {
        if o >= n || std::mem::replace(&mut seen[o], true) {
            return Err(Error::InvalidInput(format!("order is not a permutation of 0..{n}")));
        }
    }
    if data_dist.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: data_dist.len() });
    }
    if let Some((i, d)) = data_dist.iter().enumerate().find(|(_, d)| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput(format!("data distance {i} must be positive, got {d}")));
    }
    // Distances stay finite in log space even where BC underflows.
    let pair_ratios: Vec<f64> = (0..n)
        .map(|k| {
            let (a, b) = (order[k], order[(k + 1) % n]);
            let d = -log_bc(space.mean_row(a), space.stddev_row(a), space.mean_row(b), space.stddev_row(b));
            d.max(0.0) / data_dist[k]
        })
        .collect();
    let max = pair_ratios.iter().copied().fold(0.0, f64::max);
    let p90 = percentile(&pair_ratios, 90.0);
    let (ratio, infinite) = if p90 > 0.0 {
        (max / p90, false)
    } else if max == 0.0 {
        (1.0, false)
    } else {
        (f64::INFINITY, true)
    };
    Ok(Continuity { ratio, infinite, pair_ratios })
}

/// [`continuity`] for data on a circle: the order sorts by angle and the
/// data distance is the chord between successive angles.
pub fn continuity_circle(space: &PosteriorSet, angles: &[f64]) -> Result<Continuity> {
    if angles.len() != space.len() {
        return Err(Error::DimensionMismatch { expected: space.len(), found: angles.len() });
    }
    let mut order: Vec<usize> = (0..angles.len()).collect();
    order.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
    let n = order.len();
    let dist: Vec<f64> = (0..n)
        .map(|k| {
            let gap = angles[order[(k + 1) % n]] - angles[order[k]];
            2.0 * (gap / 2.0).sin().abs()
        })
        .collect();
    continuity(space, &order, &dist)
}

/// Adjusted Rand index between found groups (indices into `planted`;
/// ungrouped items count as singletons) and planted labels.
pub fn group_agreement(found: &[Vec<usize>], planted: &[usize]) -> Result<f64> {
    let n = planted.len();
    if n == 0 {
        return Err(Error::InvalidInput("no planted labels".into()));
    }
    let mut found_label = vec![usize::MAX; n];
    for (g, members) in found.iter().enumerate() {
        for &i in members {
            if i >= n {
                return Err(Error::OutOfRange { index: i, len: n });
            }
            found_label[i] = g;
        }
    }
    let mut next = found.len();
    for l in found_label.iter_mut().filter(|l| **l == usize::MAX) {
        *l = next;
        next += 1;
    }
    Ok(adjusted_rand_index(&found_label, planted))
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::HashMap;
    let pairs = |c: f64| c * (c - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sa: f64 = ca.values().map(|&c| pairs(c)).sum();
    let sb: f64 = cb.values().map(|&c| pairs(c)).sum();
    let expected = sa * sb / pairs(a.len() as f64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::{bc_gaussian, fingerprint_gaussian};
    use crate::similarity::nmi;

    #[test]
    fn nine_space_suite_structure() {
        let suite = gen_nine_space_suite(64, 1).unwrap();
        assert_eq!(suite.len(), 9);
        let names: Vec<String> = suite.iter().map(|s| s.space_id().model.clone()).collect();
        assert_eq!(names, NINE_SPACE_NAMES);
        let fp: Vec<_> = suite.iter().map(fingerprint_gaussian).collect();
        let n = |a: usize, b: usize| nmi(&fp[a], &fp[b]).unwrap().value;
        assert!(n(0, 3) > 0.95, "{}", n(0, 3));
        assert!(n(0, 5) > 0.95, "{}", n(0, 5));
        assert!(n(3, 5) > 0.95, "{}", n(3, 5));
        let trio = [0, 3, 5];
        let others = [2, 6, 7, 8];
        let within = trio.iter().flat_map(|&a| trio.iter().filter(move |&&b| b != a).map(move |&b| (a, b))).map(|(a, b)| n(a, b)).fold(f64::INFINITY, f64::min);
        let across = trio.iter().flat_map(|&a| others.iter().map(move |&b| (a, b))).map(|(a, b)| n(a, b)).fold(0.0, f64::max);
        assert!(within - across >= 0.3, "{within} vs {across}");
        assert_eq!(gen_nine_space_suite(64, 1).unwrap(), suite);
        assert!(gen_nine_space_suite(7, 1).is_err());
    }

    #[test]
    fn so2_cut_is_the_only_flaw() {
        for seed in 0..5 {
            let l = gen_so2_weak(200, seed, SO2_DEFAULT_NOISE).unwrap();
            let n = 200;
            let bcs: Vec<f64> = (0..n)
                .map(|i| bc_gaussian(&l.space.posterior(i), &l.space.posterior((i + 1) % n)).unwrap())
                .collect();
            let low: Vec<usize> = (0..n).filter(|&i| bcs[i] < 1e-6).collect();
            assert_eq!(low, vec![(l.cut + n - 1) % n], "seed {seed}");
            assert!(bcs.iter().enumerate().all(|(i, &b)| i == (l.cut + n - 1) % n || b > 0.5));
            let c = continuity_circle(&l.space, &l.angles).unwrap();
            assert!(c.ratio > 10.0, "{}", c.ratio);
        }
        let cuts: Vec<usize> = (0..10).map(|s| gen_so2_weak(200, s, 0.05).unwrap().cut).collect();
        assert!(cuts.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn continuity_of_even_circle_is_one() {
        let n = 40;
        let angles: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        let xs: Vec<f64> = angles.iter().map(|a| 5.0 * a.cos()).collect();
        let ys: Vec<f64> = angles.iter().map(|a| 5.0 * a.sin()).collect();
        let even = set_2d([&xs, &ys], [&vec![0.4; n], &vec![0.4; n]], "c");
        let c = continuity_circle(&even, &angles).unwrap();
        assert!((c.ratio - 1.0).abs() < 1e-9, "{}", c.ratio);
        // Uniformly doubling widths scales every D by 1/4 and leaves the ratio.
        let wide = set_2d([&xs, &ys], [&vec![0.8; n], &vec![0.8; n]], "c");
        let w = continuity_circle(&wide, &angles).unwrap();
        assert!((w.ratio - c.ratio).abs() < 1e-9);
        for (a, b) in c.pair_ratios.iter().zip(&w.pair_ratios) {
            assert!((a / b - 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn continuity_rejects_bad_inputs() {
        let s = set_1d(&[0.0, 1.0, 2.0], &[1.0; 3], "s");
        assert!(continuity(&s, &[0, 1, 1], &[1.0; 3]).is_err());
        assert!(continuity(&s, &[0, 1, 2], &[1.0, 0.0, 1.0]).is_err());
        assert!(continuity(&s, &[0, 1], &[1.0; 2]).is_err());
    }

    #[test]
    fn planted_construction() {
        let p = PlantedParams { n_points: 60, models: 4, ..PlantedParams::default() };
        let e = gen_planted_channels(&p).unwrap();
        assert_eq!(e.models.len(), 4);
        for a in &e.assignment {
            assert_eq!(a.iter().filter(|x| x.is_some()).count(), 5);
        }
        assert_eq!(e.channel_labels().len(), 40);
        assert!(gen_planted_channels(&PlantedParams { informative_per_model: 6, ..p }).is_err());
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(group_agreement(&[vec![0, 1], vec![2, 3]], &[5, 5, 7, 7]).unwrap(), 1.0);
        // Hand-computed: a = {0,0,1,1,2,2}, b = {0,0,0,1,1,1}:
        // index = 2, sums 3 and 6, expected = 18/15, max = 4.5 -> 0.8/3.3.
        let ari = group_agreement(&[vec![0, 1], vec![2, 3], vec![4, 5]], &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((ari - 0.8 / 3.3).abs() < 1e-12, "{ari}");
        // All noise against a single planted group.
        let ari = group_agreement(&[], &[0, 0, 0, 0]).unwrap();
        assert_eq!(ari, 0.0);
        assert!(group_agreement(&[vec![9]], &[0, 1]).is_err());
    }

    #[test]
    fn separated_points() {
        let (s, labels) = gen_separated_gaussians(4, 3, 2, 1).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(labels[5], 1);
        let fp = fingerprint_gaussian(&s);
        assert!((crate::estimators::info_kt(&fp).bits - 2.0).abs() < 1e-12);
    }
}
