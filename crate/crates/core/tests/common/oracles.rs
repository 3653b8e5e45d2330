//! Independent reference computations used to freeze expected values.
//! Nothing here calls into the estimators under test.

#![allow(dead_code)]

use infocomp::clustering::{DiscreteSoftClustering, HardClustering};
use ndarray::array;

/// `I(X;U)` in bits for an equal-weight mixture of 1-D normals `(mean, stddev)`,
/// by trapezoid quadrature of `(1/N) Σ_i ∫ p_i log2(p_i / p̄)` on a grid
/// spanning ±10σ beyond the extreme components.
pub fn quadrature_mi_1d(components: &[(f64, f64)]) -> f64 {
    let pdf = |x: f64, m: f64, s: f64| {
        (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let lo = components.iter().map(|(m, s)| m - 10.0 * s).fold(f64::INFINITY, f64::min);
    let hi = components.iter().map(|(m, s)| m + 10.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let steps = 400_000;
    let h = (hi - lo) / steps as f64;
    let n = components.len() as f64;
    let mut acc = 0.0;
    for k in 0..=steps {
        let x = lo + k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        let dens: Vec<f64> = components.iter().map(|&(m, s)| pdf(x, m, s)).collect();
        let mix = dens.iter().sum::<f64>() / n;
        for p in dens {
            if p > 0.0 && mix > 0.0 {
                acc += w * p * (p / mix).log2() / n;
            }
        }
    }
    acc * h
}

/// The three clusterings of four equally likely points used to show that the
/// generalized VI breaks the triangle inequality: `U` and `W` are orthogonal
/// hard splits; `V` flips a visible fair coin and reports either `U`'s label
/// (heads) or `W`'s label (tails). Cluster order of `V`: (H,0), (H,1), (T,0), (T,1).
pub fn triangle_counterexample() -> (DiscreteSoftClustering, DiscreteSoftClustering, DiscreteSoftClustering) {
    let u = HardClustering::from_labels(vec![0, 0, 1, 1]).to_soft();
    let w = HardClustering::from_labels(vec![0, 1, 0, 1]).to_soft();
    let v = DiscreteSoftClustering::new(array![
        [0.5, 0.0, 0.5, 0.0],
        [0.5, 0.0, 0.0, 0.5],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.5, 0.0, 0.5],
    ])
    .unwrap();
    (u, v, w)
}

/// Brute-force `I(X; V1, V2)` for two discrete clusterings by enumerating the
/// full `K1×K2` joint table.
pub fn brute_force_pair_info(a: &DiscreteSoftClustering, b: &DiscreteSoftClustering) -> f64 {
    let n = a.len();
    let (ka, kb) = (a.k(), b.k());
    let mut joint = vec![vec![0.0; kb]; ka];
    let mut h_cond = 0.0;
    for x in 0..n {
        for i in 0..ka {
            for j in 0..kb {
                let p = a.memberships()[[x, i]] * b.memberships()[[x, j]];
                joint[i][j] += p / n as f64;
                if p > 0.0 {
                    h_cond -= p * p.log2() / n as f64;
                }
            }
        }
    }
    let h: f64 = joint.iter().flatten().filter(|p| **p > 0.0).map(|p| -p * p.log2()).sum();
    h - h_cond
}

/// Classic contingency-table quantities for two hard labelings, in bits:
/// `(H(A), H(B), H(A,B))`.
pub fn contingency_entropies(a: &[usize], b: &[usize]) -> (f64, f64, f64) {
    use std::collections::HashMap;
    let n = a.len() as f64;
    let ent = |counts: Vec<usize>| -> f64 {
        counts.iter().map(|&c| { let p = c as f64 / n; -p * p.log2() }).sum()
    };
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    let mut cab: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_insert(0) += 1;
        *cb.entry(y).or_insert(0) += 1;
        *cab.entry((x, y)).or_insert(0) += 1;
    }
    (
        ent(ca.into_values().collect()),
        ent(cb.into_values().collect()),
        ent(cab.into_values().collect()),
    )
}
