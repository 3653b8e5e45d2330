//! OPTICS ordering on a precomputed distance matrix and ξ-steepness group
//! extraction, following the scikit-learn formulation of both.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticsParams {
    pub min_samples: usize,
    pub xi: f64,
}

impl Default for OpticsParams {
    fn default() -> Self {
        OpticsParams {
            min_samples: 20,
            xi: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpticsResult {
    /// Processing order, a permutation of `0..M`.
    pub ordering: Vec<usize>,
    /// Reachability per point; `+∞` for the first point of the ordering
    /// and for points never reached.
    pub reachability: Vec<f64>,
    pub core_distances: Vec<f64>,
    /// Point that last improved each reachability.
    pub predecessor: Vec<Option<usize>>,
    /// Point indices per group, each listed in ordering order.
    pub groups: Vec<Vec<usize>>,
    pub params: OpticsParams,
}

impl OpticsResult {
    /// Reachability read along the ordering (the reachability plot).
    pub fn reachability_profile(&self) -> Vec<f64> {
        self.ordering.iter().map(|&p| self.reachability[p]).collect()
    }

    /// Group label per point, `None` for noise.
    pub fn labels(&self) -> Vec<Option<usize>> {
        let mut labels = vec![None; self.ordering.len()];
        for (g, members) in self.groups.iter().enumerate() {
            for &p in members {
                labels[p] = Some(g);
            }
        }
        labels
    }
}

fn validate_distances(dist: &Array2<f64>) -> Result<()> {
    let (m, m2) = dist.dim();
    if m != m2 {
        return Err(Error::DimensionMismatch { expected: m, found: m2 });
    }
    for ((i, j), &v) in dist.indexed_iter() {
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidInput(format!("distance ({i}, {j}) = {v} is not a nonnegative number")));
        }
        if i == j && v != 0.0 {
            return Err(Error::DiagonalDeviation { i, value: v });
        }
    }
    Ok(())
}

/// Computes the OPTICS ordering and reachability. `groups` is left empty;
/// see [`extract_groups`].
pub fn optics_order(dist: &Array2<f64>, min_samples: usize) -> Result<OpticsResult> {
    validate_distances(dist)?;
    let m = dist.nrows();
    if min_samples < 2 {
        return Err(Error::Config(format!("min_samples must be >= 2, got {min_samples}")));
    }
    if m < min_samples {
        return Err(Error::Config(format!(
            "{m} elements is fewer than min_samples = {min_samples}; lower min_samples to at most {m}"
        )));
    }

    // Distance to the min_samples-th nearest neighbour, the point itself included.
    let core_distances: Vec<f64> = dist
        .rows()
        .into_iter()
        .map(|row| {
            let mut r = row.to_vec();
            r.sort_by(f64::total_cmp);
            r[min_samples - 1]
        })
        .collect();

    let mut reachability = vec![f64::INFINITY; m];
    let mut predecessor = vec![None; m];
    let mut processed = vec![false; m];
    let mut ordering = Vec::with_capacity(m);
    for _ in 0..m {
        // Lowest reachability first, lowest index among ties.
        let point = (0..m)
            .filter(|&p| !processed[p])
            .fold(None, |best: Option<usize>, p| match best {
                Some(b) if reachability[b] <= reachability[p] => Some(b),
                _ => Some(p),
            })
            .expect("an unprocessed point remains");
        processed[point] = true;
        ordering.push(point);
        let core = core_distances[point];
        if core.is_finite() {
            for q in 0..m {
                if processed[q] {
                    continue;
                }
                let r = dist[[point, q]].max(core);
                if r < reachability[q] {
                    reachability[q] = r;
                    predecessor[q] = Some(point);
                }
            }
        }
    }

    Ok(OpticsResult {
        ordering,
        reachability,
        core_distances,
        predecessor,
        groups: Vec::new(),
        params: OpticsParams { min_samples, xi: f64::NAN },
    })
}

/// ξ-steepness group extraction with minimum group size `min_samples`.
/// Nested candidate clusters resolve leaf first; points outside every
/// accepted cluster are noise.
pub fn extract_groups(r: &OpticsResult, xi: f64) -> Result<Vec<Vec<usize>>> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::Config(format!("xi must be in (0, 1), got {xi}")));
    }
    let min_samples = r.params.min_samples;
    let plot: Vec<f64> = r.reachability_profile();
    let pred: Vec<Option<usize>> = r.ordering.iter().map(|&p| r.predecessor[p]).collect();
    let clusters = xi_clusters(&plot, &pred, &r.ordering, xi, min_samples, min_samples);

    let m = r.ordering.len();
    let mut labels: Vec<Option<usize>> = vec![None; m];
    let mut next = 0;
    for &(s, e) in &clusters {
        if labels[s..=e].iter().all(Option::is_none) {
            labels[s..=e].iter_mut().for_each(|l| *l = Some(next));
            next += 1;
        }
    }
    let mut groups = vec![Vec::new(); next];
    for (pos, l) in labels.iter().enumerate() {
        if let Some(g) = l {
            groups[*g].push(r.ordering[pos]);
        }
    }
    Ok(groups)
}

/// [`optics_order`] followed by [`extract_groups`].
pub fn optics(dist: &Array2<f64>, params: OpticsParams) -> Result<OpticsResult> {
    let mut r = optics_order(dist, params.min_samples)?;
    r.params = params;
    r.groups = extract_groups(&r, params.xi)?;
    Ok(r)
}

struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn xi_clusters(
    plot: &[f64],
    pred: &[Option<usize>],
    ordering: &[usize],
    xi: f64,
    min_samples: usize,
    min_cluster_size: usize,
) -> Vec<(usize, usize)> {
    // A trailing +∞ closes clusters that run to the end of the plot.
    let mut rp = plot.to_vec();
    rp.push(f64::INFINITY);
    let n = plot.len();
    let xc = 1.0 - xi;

    let ratio: Vec<f64> = (0..n).map(|i| rp[i] / rp[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&q| q <= xc).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&q| q >= 1.0 / xc).collect();
    let down: Vec<bool> = ratio.iter().map(|&q| q > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&q| q < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0;
    let mut mib = 0.0f64;

    for steep in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep < index {
            continue;
        }
        mib = rp[index..=steep].iter().copied().fold(mib, f64::max);

        if steep_down[steep] {
            update_filter_sdas(&mut sdas, mib, xc, &rp);
            let end = extend_region(&steep_down, &up, steep, min_samples);
            sdas.push(SteepDown { start: steep, end, mib: 0.0 });
            index = end + 1;
            mib = rp[index];
            continue;
        }

        update_filter_sdas(&mut sdas, mib, xc, &rp);
        let u_start = steep;
        let u_end = extend_region(&steep_up, &down, u_start, min_samples);
        index = u_end + 1;
        mib = rp[index];

        let mut found = Vec::new();
        for d in &sdas {
            let mut c_start = d.start;
            let mut c_end = u_end;
            if rp[c_end + 1] * xc < d.mib {
                continue;
            }
            let d_max = rp[d.start];
            if d_max * xc >= rp[c_end + 1] {
                while rp[c_start + 1] > rp[c_end + 1] && c_start < d.end {
                    c_start += 1;
                }
            } else if rp[c_end + 1] * xc >= d_max {
                while rp[c_end - 1] > d_max && c_end > u_start {
                    c_end -= 1;
                }
            }
            let Some((s, e)) = correct_predecessor(&rp, pred, ordering, c_start, c_end) else {
                continue;
            };
            if e - s + 1 < min_cluster_size || s > d.end || e < u_start {
                continue;
            }
            found.push((s, e));
        }
        found.reverse();
        clusters.extend(found);
    }
    clusters
}

fn update_filter_sdas(sdas: &mut Vec<SteepDown>, mib: f64, xc: f64, rp: &[f64]) {
    if mib.is_infinite() {
        sdas.clear();
        return;
    }
    sdas.retain(|d| mib <= rp[d.start] * xc);
    for d in sdas.iter_mut() {
        d.mib = d.mib.max(mib);
    }
}

fn correct_predecessor(
    rp: &[f64],
    pred: &[Option<usize>],
    ordering: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if rp[s] > rp[e] {
            return Some((s, e));
        }
        if let Some(p) = pred[e] {
            if ordering[s..e].contains(&p) {
                return Some((s, e));
            }
        }
        e -= 1;
    }
    None
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    for index in start..steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        } else {
            return end;
        }
    }
    end
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_distances(xs: &[f64]) -> Array2<f64> {
        Array2::from_shape_fn((xs.len(), xs.len()), |(i, j)| (xs[i] - xs[j]).abs())
    }

    /// Straightforward OPTICS: at each step rescans every processed point's
    /// contribution instead of maintaining running reachabilities.
    fn reference_ordering(d: &Array2<f64>, min_samples: usize) -> (Vec<usize>, Vec<f64>) {
        let m = d.nrows();
        let core = |p: usize| {
            let mut r = d.row(p).to_vec();
            r.sort_by(f64::total_cmp);
            r[min_samples - 1]
        };
        let mut order: Vec<usize> = Vec::new();
        let mut reach = vec![f64::INFINITY; m];
        while order.len() < m {
            let reach_of = |q: usize| {
                order
                    .iter()
                    .map(|&p| d[[p, q]].max(core(p)))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut best = None;
            for q in (0..m).filter(|q| !order.contains(q)) {
                let r = reach_of(q);
                match best {
                    Some((_, br)) if br <= r => {}
                    _ => best = Some((q, r)),
                }
            }
            let (q, r) = best.unwrap();
            reach[q] = r;
            order.push(q);
        }
        (order, reach)
    }

    fn blobs() -> Array2<f64> {
        let mut xs = Vec::new();
        for i in 0..25 {
            xs.push(0.01 * ((i * 7) % 25) as f64);
            xs.push(100.0 + 0.013 * ((i * 11) % 25) as f64);
        }
        line_distances(&xs)
    }

    #[test]
    fn matches_reference_on_two_blobs() {
        let d = blobs();
        let r = optics_order(&d, 5).unwrap();
        let (order, reach) = reference_ordering(&d, 5);
        assert_eq!(r.ordering, order);
        assert_eq!(r.reachability, reach);
        assert!(r.reachability[r.ordering[0]].is_infinite());
        // Blobs are contiguous, with one spike at the boundary.
        let blob = |p: usize| p % 2;
        let switches = r.ordering.windows(2).filter(|w| blob(w[0]) != blob(w[1])).count();
        assert_eq!(switches, 1);
        let profile = r.reachability_profile();
        let spikes = profile[1..].iter().filter(|&&x| x > 50.0).count();
        assert_eq!(spikes, 1);
    }

    #[test]
    fn two_blobs_give_two_groups() {
        let r = optics(&blobs(), OpticsParams { min_samples: 5, xi: 0.05 }).unwrap();
        assert_eq!(r.groups.len(), 2);
        for g in &r.groups {
            assert_eq!(g.len(), 25);
            assert!(g.iter().all(|&p| p % 2 == g[0] % 2));
        }
    }

    #[test]
    fn identical_points_have_zero_reachability() {
        let d = Array2::zeros((6, 6));
        let r = optics_order(&d, 3).unwrap();
        assert_eq!(r.ordering, vec![0, 1, 2, 3, 4, 5]);
        assert!(r.reachability[0].is_infinite());
        assert!(r.reachability[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn monotone_reachability_is_one_group() {
        // Bounded by the +∞ sentinels at both ends, a profile without inner
        // valleys yields the whole set as a single group.
        let xs: Vec<f64> = (0..30).map(|i| -(1.5f64.powi(i))).collect();
        let r = optics(&line_distances(&xs), OpticsParams { min_samples: 2, xi: 0.05 }).unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].len(), 30);
    }

    #[test]
    fn groups_need_min_samples_members() {
        // Three tight pairs far apart: each valley is narrower than min_samples.
        let xs = [0.0, 0.1, 50.0, 50.1, 100.0, 100.1];
        let r = optics(&line_distances(&xs), OpticsParams { min_samples: 3, xi: 0.05 }).unwrap();
        assert!(r.groups.iter().all(|g| g.len() >= 3), "{:?}", r.groups);
    }

    #[test]
    fn too_few_points_is_config_error() {
        let d = Array2::zeros((5, 5));
        let err = optics_order(&d, 20).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("lower min_samples")));
    }

    #[test]
    fn invalid_distances_rejected() {
        let mut d = Array2::zeros((3, 3));
        d[[0, 1]] = -1.0;
        assert!(optics_order(&d, 2).is_err());
        let mut d = Array2::zeros((3, 3));
        d[[1, 1]] = 0.5;
        assert!(optics_order(&d, 2).is_err());
    }

    #[test]
    fn groups_are_contiguous_runs() {
        let mut xs = Vec::new();
        for g in 0..4 {
            for i in 0..12 {
                xs.push(g as f64 * 10.0 + 0.05 * ((i * 5) % 12) as f64);
            }
        }
        let r = optics(&line_distances(&xs), OpticsParams { min_samples: 4, xi: 0.05 }).unwrap();
        assert_eq!(r.groups.len(), 4);
        let pos: Vec<usize> = {
            let mut p = vec![0; xs.len()];
            for (k, &q) in r.ordering.iter().enumerate() {
                p[q] = k;
            }
            p
        };
        for g in &r.groups {
            let ps: Vec<usize> = g.iter().map(|&q| pos[q]).collect();
            assert!(ps.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}
