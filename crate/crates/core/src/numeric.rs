//! Small deterministic kernels shared by the estimators.
//!
//! Sums use a fixed four-lane accumulation order so that a row sum of a
//! materialized product and a dot product of the two factors agree bit for
//! bit, independent of call site.

use std::f64::consts::LN_2;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Same lane structure as [`dot`], so `sum(a∘b) == dot(a, b)` exactly.
#[inline]
pub(crate) fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.chunks_exact(4);
    let rest = chunks.remainder();
    for x in chunks {
        for l in 0..4 {
            acc[l] += x[l] * 1.0;
        }
    }
    let mut tail = 0.0;
    for &x in rest {
        tail += x * 1.0;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Natural-log pairwise lower bound from row sums: `-(1/N) Σ_i ln(r_i / N)`, in bits.
pub(crate) fn kt_bits_from_row_sums(row_sums: impl IntoIterator<Item = f64>, n: usize) -> f64 {
    let nf = n as f64;
    let mut acc = 0.0;
    for r in row_sums {
        acc += (r / nf).ln();
    }
    -acc / nf / LN_2
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Shannon entropy in bits of a (possibly unnormalized-by-rounding) probability vector.
pub(crate) fn entropy_bits(p: impl IntoIterator<Item = f64>) -> f64 {
    let mut h = 0.0;
    for x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    h / LN_2
}

/// Inclusive linear-interpolation percentile of unsorted data (`q` in `[0, 100]`).
pub fn percentile(data: &[f64], q: f64) -> f64 {
    assert!(!data.is_empty(), "percentile of empty data");
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_and_sum_agree_on_products() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 1.1).cos().abs()).collect();
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        assert_eq!(dot(&a, &b), sum(&prod));
        assert_eq!(dot(&a, &b), dot(&b, &a));
    }

    #[test]
    fn percentile_hand_computed() {
        // 10 values 1..=10: position 0.9 * 9 = 8.1 -> 9 + 0.1 * (10 - 9) = 9.1
        let data: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert!((percentile(&data, 90.0) - 9.1).abs() < 1e-12);
        assert_eq!(percentile(&data, 0.0), 1.0);
        assert_eq!(percentile(&data, 100.0), 10.0);
        assert!((percentile(&data, 50.0) - 5.5).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_stable() {
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
