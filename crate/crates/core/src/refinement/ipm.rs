//! Dense primal-dual interior-point method for small block-diagonal SDPs.
//!
//! Solves the standard pair
//!
//! ```text
//! (P) min <C, X>  s.t. <A_j, X> = b_j, X >= 0
//! (D) max b^T y   s.t. sum_j y_j A_j + Z = C, Z >= 0
//! ```
//!
//! with the HKM search direction and a Mehrotra predictor-corrector. `X` and
//! `Z` are block diagonal; a diagonal block started diagonal stays diagonal,
//! which is how linear inequalities are expressed.

use nalgebra::{DMatrix, DVector};

/// One entry of a symmetric constraint matrix. Off-diagonal entries stand for
/// both `(row, col)` and `(col, row)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub val: f64,
}

/// A term `coef * u u^T` in one block.
#[derive(Clone, Debug)]
pub(crate) struct RankOne {
    pub block: usize,
    pub coef: f64,
    pub u: DVector<f64>,
}

/// A symmetric constraint matrix given as sparse entries plus rank-one terms.
#[derive(Clone, Debug, Default)]
pub(crate) struct Constraint {
    entries: Vec<Entry>,
    rank_one: Vec<RankOne>,
}

/// `(row, col)` positions an entry stands for.
fn positions(e: &Entry) -> ([(usize, usize); 2], usize) {
    if e.row == e.col {
        ([(e.row, e.row), (e.row, e.row)], 1)
    } else {
        ([(e.row, e.col), (e.col, e.row)], 2)
    }
}

impl Constraint {
    pub fn sparse(entries: Vec<Entry>) -> Self {
        Self {
            entries,
            rank_one: Vec::new(),
        }
    }

    pub fn with_rank_one(mut self, term: RankOne) -> Self {
        self.rank_one.push(term);
        self
    }

    fn dot(&self, y: &[DMatrix<f64>]) -> f64 {
        let sparse: f64 = self
            .entries
            .iter()
            .map(|e| {
                let m = &y[e.block];
                if e.row == e.col {
                    e.val * m[(e.row, e.row)]
                } else {
                    e.val * (m[(e.row, e.col)] + m[(e.col, e.row)])
                }
            })
            .sum();
        let low: f64 = self
            .rank_one
            .iter()
            .map(|t| t.coef * (&y[t.block] * &t.u).dot(&t.u))
            .sum();
        sparse + low
    }

    fn add_scaled(&self, coef: f64, out: &mut [DMatrix<f64>]) {
        for e in &self.entries {
            out[e.block][(e.row, e.col)] += coef * e.val;
            if e.row != e.col {
                out[e.block][(e.col, e.row)] += coef * e.val;
            }
        }
        for t in &self.rank_one {
            out[t.block].ger(coef * t.coef, &t.u, &t.u, 1.0);
        }
    }
}

/// Per-iteration products `X u` and `Z^{-1} u` for every rank-one term.
struct Cache {
    xu: Vec<Vec<DVector<f64>>>,
    zu: Vec<Vec<DVector<f64>>>,
}

impl Cache {
    fn new(cons: &[Constraint], x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> Self {
        let xu = cons
            .iter()
            .map(|c| c.rank_one.iter().map(|t| &x[t.block] * &t.u).collect())
            .collect();
        let zu = cons
            .iter()
            .map(|c| c.rank_one.iter().map(|t| &zinv[t.block] * &t.u).collect())
            .collect();
        Self { xu, zu }
    }
}

/// `tr(A_i X A_j Z^{-1})` summed over blocks.
fn schur_entry(
    i: usize,
    j: usize,
    cons: &[Constraint],
    cache: &Cache,
    x: &[DMatrix<f64>],
    zinv: &[DMatrix<f64>],
) -> f64 {
    let (a, b) = (&cons[i], &cons[j]);
    let mut sum = 0.0;
    for e in &a.entries {
        let (pe, ne) = positions(e);
        let (xb, zb) = (&x[e.block], &zinv[e.block]);
        for f in b.entries.iter().filter(|f| f.block == e.block) {
            let (pf, nf) = positions(f);
            let mut acc = 0.0;
            // tr(e_r e_c^T X e_p e_q^T Zi) = X[c,p] Zi[q,r]
            for &(r, c) in &pe[..ne] {
                for &(p, q) in &pf[..nf] {
                    acc += xb[(c, p)] * zb[(q, r)];
                }
            }
            sum += e.val * f.val * acc;
        }
        for (l, t) in b.rank_one.iter().enumerate() {
            if t.block != e.block {
                continue;
            }
            let (xu, zu) = (&cache.xu[j][l], &cache.zu[j][l]);
            // tr(e_r e_c^T X u u^T Zi) = (X u)[c] (Zi u)[r]
            let acc: f64 = pe[..ne].iter().map(|&(r, c)| xu[c] * zu[r]).sum();
            sum += e.val * t.coef * acc;
        }
    }
    for (l, t) in a.rank_one.iter().enumerate() {
        let (xu, zu) = (&cache.xu[i][l], &cache.zu[i][l]);
        for f in b.entries.iter().filter(|f| f.block == t.block) {
            let (pf, nf) = positions(f);
            // tr(u u^T X e_p e_q^T Zi) = (X u)[p] (Zi u)[q]
            let acc: f64 = pf[..nf].iter().map(|&(p, q)| xu[p] * zu[q]).sum();
            sum += t.coef * f.val * acc;
        }
        for (l2, t2) in b.rank_one.iter().enumerate() {
            if t2.block != t.block {
                continue;
            }
            // tr(u u^T X v v^T Zi) = (u^T X v)(v^T Zi u)
            sum += t.coef * t2.coef * cache.xu[j][l2].dot(&t.u) * cache.zu[i][l].dot(&t2.u);
        }
    }
    sum
}

#[derive(Clone, Debug)]
pub(crate) struct BlockSdp {
    pub block_sizes: Vec<usize>,
    pub c: Vec<DMatrix<f64>>,
    pub constraints: Vec<Constraint>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct IpmResult {
    pub x: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
    pub iterations: usize,
    // Callers recompute a certified gap themselves; these are for diagnostics.
    #[allow(dead_code)]
    pub converged: bool,
    #[allow(dead_code)]
    pub primal_obj: f64,
    #[allow(dead_code)]
    pub dual_obj: f64,
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Iterations without a 10% drop in the best residual before giving up.
const STALL_LIMIT: usize = 5;

/// Largest `alpha` with `x + alpha dx` PSD, or infinity.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return f64::INFINITY;
    }
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(left) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&left.transpose()) else {
        return 0.0;
    };
    let mut w = w;
    symmetrize(&mut w);
    let lmin = w.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

impl BlockSdp {
    fn a_op(&self, y: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.dot(y)),
        )
    }

    fn at_op(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self
            .block_sizes
            .iter()
            .map(|&n| DMatrix::zeros(n, n))
            .collect();
        for (c, &v) in self.constraints.iter().zip(y.iter()) {
            c.add_scaled(v, &mut out);
        }
        out
    }

    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.constraints.len();
        let cache = Cache::new(&self.constraints, x, zinv);
        let mut schur = DMatrix::zeros(m, m);
        for j in 0..m {
            for i in 0..=j {
                let v = schur_entry(i, j, &self.constraints, &cache, x, zinv);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        schur
    }

    pub fn solve(&self, tol: f64, max_iters: usize) -> IpmResult {
        let nb = self.block_sizes.len();
        let total: usize = self.block_sizes.iter().sum();
        let m = self.constraints.len();
        let norm_b = self.b.norm();
        let norm_c = frob(&self.c);

        let scale = 1.0 + norm_b.max(norm_c);
        let mut x: Vec<DMatrix<f64>> = self
            .block_sizes
            .iter()
            .map(|&n| DMatrix::identity(n, n) * scale)
            .collect();
        let mut z = x.clone();
        let mut y = DVector::zeros(m);

        let mut iterations = 0;
        let mut converged = false;
        // Best iterate by the largest of the three relative residuals.
        let mut best = (f64::INFINITY, x.clone(), y.clone(), 0usize);
        let mut stalled = 0;

        for it in 0..max_iters {
            iterations = it;
            let rp = &self.b - self.a_op(&x);
            let aty = self.at_op(&y);
            let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &self.c[k] - &aty[k] - &z[k]).collect();
            let pobj = inner(&self.c, &x);
            let dobj = self.b.dot(&y);
            let mu = inner(&x, &z) / total as f64;

            let pinf = rp.norm() / (1.0 + norm_b);
            let dinf = frob(&rd) / (1.0 + norm_c);
            let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            let merit = pinf.max(dinf).max(rel_gap);
            if merit < 0.9 * best.0 {
                stalled = 0;
            } else {
                stalled += 1;
            }
            if merit < best.0 {
                best = (merit, x.clone(), y.clone(), it);
            }
            if merit <= tol {
                converged = true;
                break;
            }
            if stalled >= STALL_LIMIT {
                break;
            }

            let zinv: Vec<DMatrix<f64>> = z
                .iter()
                .map(|zb| {
                    if zb.nrows() == 0 {
                        return zb.clone();
                    }
                    zb.clone()
                        .cholesky()
                        .map(|c| c.inverse())
                        .unwrap_or_else(|| {
                            zb.clone()
                                .try_inverse()
                                .unwrap_or_else(|| DMatrix::identity(zb.nrows(), zb.nrows()))
                        })
                })
                .collect();
            let mut schur = self.schur(&x, &zinv);
            let diag_max = schur.diagonal().amax().max(1e-300);
            let chol = match schur.clone().cholesky() {
                Some(c) => c,
                None => {
                    for i in 0..m {
                        schur[(i, i)] += 1e-13 * diag_max;
                    }
                    match schur.cholesky() {
                        Some(c) => c,
                        None => break,
                    }
                }
            };

            let xrdz: Vec<DMatrix<f64>> = (0..nb).map(|k| &x[k] * &rd[k] * &zinv[k]).collect();
            let a_xrdz = self.a_op(&xrdz);
            let a_zinv = self.a_op(&zinv);

            // Direction for a given centering target and second-order correction.
            let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
                let mut rhs = &self.b - &a_zinv * sigma_mu + &a_xrdz;
                if let Some(c) = corr {
                    rhs += self.a_op(c);
                }
                let dy = chol.solve(&rhs);
                let atdy = self.at_op(&dy);
                let dz: Vec<DMatrix<f64>> = (0..nb).map(|k| &rd[k] - &atdy[k]).collect();
                let dx: Vec<DMatrix<f64>> = (0..nb)
                    .map(|k| {
                        let mut d = &zinv[k] * sigma_mu - &x[k] - &x[k] * &dz[k] * &zinv[k];
                        if let Some(c) = corr {
                            d -= &c[k];
                        }
                        symmetrize(&mut d);
                        d
                    })
                    .collect();
                (dx, dy, dz)
            };
            let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
                let ap = (0..nb)
                    .map(|k| max_step(&x[k], &dx[k]))
                    .fold(f64::INFINITY, f64::min);
                let ad = (0..nb)
                    .map(|k| max_step(&z[k], &dz[k]))
                    .fold(f64::INFINITY, f64::min);
                (ap, ad)
            };

            let (dxa, _, dza) = direction(0.0, None);
            let (apa, ada) = steps(&dxa, &dza);
            let (apa, ada) = (apa.min(1.0), ada.min(1.0));
            let xa: Vec<DMatrix<f64>> = (0..nb).map(|k| &x[k] + &dxa[k] * apa).collect();
            let za: Vec<DMatrix<f64>> = (0..nb).map(|k| &z[k] + &dza[k] * ada).collect();
            let mu_aff = inner(&xa, &za) / total as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            let corr: Vec<DMatrix<f64>> = (0..nb).map(|k| &dxa[k] * &dza[k] * &zinv[k]).collect();
            let (dx, dy, dz) = direction(sigma * mu, Some(&corr));
            let (ap, ad) = steps(&dx, &dz);
            let gamma = 0.9 + 0.09 * (1.0 - sigma);
            let ap = (gamma * ap).min(1.0);
            let ad = (gamma * ad).min(1.0);
            if !(ap > 0.0 && ad > 0.0) || !ap.is_finite() || !ad.is_finite() {
                break;
            }
            for k in 0..nb {
                x[k] += &dx[k] * ap;
                z[k] += &dz[k] * ad;
            }
            y += dy * ad;
            if x.iter()
                .chain(z.iter())
                .any(|b| b.iter().any(|v| !v.is_finite()))
            {
                break;
            }
            iterations = it + 1;
        }
        if !converged {
            x = best.1;
            y = best.2;
        }

        IpmResult {
            primal_obj: inner(&self.c, &x),
            dual_obj: self.b.dot(&y),
            x,
            y,
            iterations,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 as a diagonal block: optimum 1.
    #[test]
    fn solves_tiny_lp() {
        let sizes = vec![2];
        let cons = vec![Constraint::sparse(vec![
            Entry {
                block: 0,
                row: 0,
                col: 0,
                val: 1.0,
            },
            Entry {
                block: 0,
                row: 1,
                col: 1,
                val: 1.0,
            },
        ])];
        let sdp = BlockSdp {
            block_sizes: sizes,
            c: vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))],
            constraints: cons,
            b: DVector::from_vec(vec![1.0]),
        };
        let r = sdp.solve(1e-9, 100);
        assert!(r.converged);
        assert!((r.primal_obj - 1.0).abs() < 1e-7);
        assert!((r.x[0][(0, 0)] - 1.0).abs() < 1e-6);
    }

    /// min <C, X> s.t. tr X = 1, X PSD: the smallest eigenvalue of C.
    #[test]
    fn recovers_min_eigenvalue() {
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 3.0]);
        let sizes = vec![3];
        let cons = vec![Constraint::sparse(
            (0..3)
                .map(|i| Entry {
                    block: 0,
                    row: i,
                    col: i,
                    val: 1.0,
                })
                .collect(),
        )];
        let sdp = BlockSdp {
            block_sizes: sizes,
            c: vec![c.clone()],
            constraints: cons,
            b: DVector::from_vec(vec![1.0]),
        };
        let r = sdp.solve(1e-10, 100);
        let lmin = c.symmetric_eigenvalues().min();
        assert!(r.converged);
        assert!(
            (r.primal_obj - lmin).abs() < 1e-7,
            "{} vs {}",
            r.primal_obj,
            lmin
        );
        assert!((r.dual_obj - lmin).abs() < 1e-7);
    }
}
