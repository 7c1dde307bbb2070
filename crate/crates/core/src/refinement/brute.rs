//! Exhaustive search over low-dimensional subspaces of `R^d`, `d <= 4`.
//!
//! Every `r`-dim subspace has a chart `span(e_p + sum_{i not in P} A_{ip} e_i)`
//! for some pivot set `P` of size `r` with all `|A| <= 1` (take `P` as the rows
//! of a maximal-volume minor of any basis). A uniform grid over each chart is
//! scanned and the best point is polished by shrinking local grids.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::geometry::{orthonormalize, Subspace, Vector};

const MAX_AMBIENT: usize = 4;
const MAX_TARGET: usize = 2;

fn subsets(d: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, d: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, r, cur, out);
            cur.pop();
        }
    }
    rec(0, d, r, &mut cur, &mut out);
    out
}

struct Chart {
    d: usize,
    pivots: Vec<usize>,
    free: Vec<usize>,
}

impl Chart {
    fn params(&self) -> usize {
        self.pivots.len() * self.free.len()
    }

    fn basis(&self, a: &[f64]) -> DMatrix<f64> {
        let r = self.pivots.len();
        let mut m = DMatrix::zeros(self.d, r);
        for (j, &p) in self.pivots.iter().enumerate() {
            m[(p, j)] = 1.0;
            for (i, &f) in self.free.iter().enumerate() {
                m[(f, j)] = a[i * r + j];
            }
        }
        m
    }

    /// `max_i dist(w_i, V)^2`.
    fn cost(&self, a: &[f64], w: &[Vector]) -> f64 {
        let m = self.basis(a);
        let cols: Vec<Vector> = m.column_iter().map(|c| c.into_owned()).collect();
        let q = orthonormalize(&cols).expect("chart basis has full rank");
        w.iter()
            .map(|wi| {
                let c = q.coordinates(wi).expect("dimensions checked");
                (wi.norm_squared() - c.norm_squared()).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Visits every point of `values^dims` in lexicographic order.
fn for_each_point(values: &[f64], dims: usize, mut f: impl FnMut(&[f64])) {
    let mut idx = vec![0usize; dims];
    let mut point: Vec<f64> = vec![values[0]; dims];
    loop {
        f(&point);
        let mut pos = 0;
        loop {
            if pos == dims {
                return;
            }
            idx[pos] += 1;
            if idx[pos] < values.len() {
                point[pos] = values[idx[pos]];
                break;
            }
            idx[pos] = 0;
            point[pos] = values[0];
            pos += 1;
        }
    }
}

/// Best `target_dim`-dimensional subspace for the max-distance objective by
/// grid search, with its max distance (not squared).
///
/// `grid` is the number of points per chart coordinate on `[-1, 1]`; the best
/// grid point is then refined locally to roughly `1e-9` resolution.
pub fn brute_force_refine(w: &[Vector], target_dim: usize, grid: usize) -> Result<(Subspace, f64)> {
    let first = w.first().ok_or(Error::EmptyInput("feature list"))?;
    let d = first.len();
    if d > MAX_AMBIENT || target_dim > MAX_TARGET {
        return Err(Error::InvalidDimensions(format!(
            "brute force supports d <= {MAX_AMBIENT} and target_dim <= {MAX_TARGET}, got d={d}, target_dim={target_dim}"
        )));
    }
    if target_dim == 0 {
        return Err(invalid("target_dim", "must be at least 1"));
    }
    if grid < 2 {
        return Err(invalid(
            "grid",
            format!("need at least 2 points, got {grid}"),
        ));
    }
    for v in w {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    if target_dim >= d {
        let all: Vec<usize> = (0..d).collect();
        return Ok((Subspace::coordinate(d, &all)?, 0.0));
    }

    let values: Vec<f64> = (0..grid)
        .map(|l| -1.0 + 2.0 * l as f64 / (grid - 1) as f64)
        .collect();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let charts: Vec<Chart> = subsets(d, target_dim)
        .into_iter()
        .map(|pivots| {
            let free = (0..d).filter(|i| !pivots.contains(i)).collect();
            Chart { d, pivots, free }
        })
        .collect();
    for (ci, chart) in charts.iter().enumerate() {
        for_each_point(&values, chart.params(), |a| {
            let c = chart.cost(a, w);
            if best.as_ref().is_none_or(|(b, _, _)| c < *b) {
                best = Some((c, ci, a.to_vec()));
            }
        });
    }
    let (mut cost, ci, mut a) = best.expect("grid is nonempty");
    let chart = &charts[ci];

    let mut step = 2.0 / (grid - 1) as f64;
    let offsets = [-1.0, -0.5, 0.0, 0.5, 1.0];
    while step > 1e-9 {
        let centre = a.clone();
        let mut improved = false;
        for_each_point(&offsets, chart.params(), |o| {
            let cand: Vec<f64> = centre.iter().zip(o).map(|(c, o)| c + o * step).collect();
            let c = chart.cost(&cand, w);
            if c < cost {
                cost = c;
                a = cand;
                improved = true;
            }
        });
        if !improved {
            step *= 0.5;
        }
    }

    let cols: Vec<Vector> = chart
        .basis(&a)
        .column_iter()
        .map(|c| c.into_owned())
        .collect();
    Ok((orthonormalize(&cols)?, cost.sqrt()))
}
