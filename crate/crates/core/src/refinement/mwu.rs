//! Multiplicative-weights saddle-point solver for the reduced problem
//! `min_B max_i z_i^T B z_i` over `{0 <= B <= I, tr B = r}`.
//!
//! The max player runs multiplicative weights over the constraints; the min
//! player best-responds with the projector onto the `r` smallest eigenvectors
//! of `M(p) = sum_i p_i z_i z_i^T`. The returned matrix is the best averaged
//! iterate seen at a checkpoint.

use nalgebra::DMatrix;

use super::{smallest_eigenpairs, weighted_gram};

pub(crate) struct MwuOutcome {
    pub b: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub gap_trace: Vec<f64>,
}

pub(crate) fn solve(z: &DMatrix<f64>, r: usize, max_iters: usize, tol: f64) -> MwuOutcome {
    let (s, n) = z.shape();
    let max_iters = max_iters.max(1);
    let eta = ((n as f64).ln() / max_iters as f64).sqrt();
    let checkpoint = (max_iters / 50).max(1);

    let mut p = vec![1.0 / n as f64; n];
    let mut sum_b = DMatrix::zeros(s, s);
    let mut best_b = DMatrix::zeros(s, s);
    let mut best_upper = f64::INFINITY;
    let mut best_lower = f64::NEG_INFINITY;
    let mut best_p = p.clone();
    let mut gap_trace = Vec::new();
    let mut iterations = 0;

    for it in 1..=max_iters {
        iterations = it;
        let m = weighted_gram(z, &p);
        let (vals, vecs) = smallest_eigenpairs(&m, r);
        let lower: f64 = vals.iter().sum();
        if lower > best_lower {
            best_lower = lower;
            best_p.clone_from(&p);
        }
        let response = &vecs * vecs.transpose();
        sum_b += &response;

        // Gains lie in [0, 1] because each z_i is a unit vector.
        let proj = vecs.transpose() * z;
        let mut total = 0.0;
        for (i, pi) in p.iter_mut().enumerate() {
            let gain = proj.column(i).norm_squared();
            *pi *= (eta * gain).exp();
            total += *pi;
        }
        for pi in p.iter_mut() {
            *pi /= total;
        }

        if it % checkpoint == 0 || it == max_iters {
            let avg = &sum_b / it as f64;
            let upper = max_quadratic(z, &avg);
            if upper < best_upper {
                best_upper = upper;
                best_b = avg;
            }
            let gap = (best_upper - best_lower).max(0.0);
            gap_trace.push(gap);
            if gap <= tol {
                break;
            }
        }
    }

    MwuOutcome {
        b: best_b,
        weights: best_p,
        iterations,
        gap_trace,
    }
}

/// `max_i z_i^T B z_i`.
pub(crate) fn max_quadratic(z: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let bz = b * z;
    (0..z.ncols())
        .map(|i| z.column(i).dot(&bz.column(i)))
        .fold(f64::NEG_INFINITY, f64::max)
}
