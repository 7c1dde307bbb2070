//! Representation refinement: replace a list of learned features by a
//! low-dimensional subspace that stays close to every one of them.
//!
//! The max-distance fitting problem
//!
//! ```text
//! min_{dim V = k} max_i dist(w_i, V)^2
//! ```
//!
//! is relaxed by letting the complement projector become any `X` with
//! `0 <= X <= I` and `tr X = d - k`, minimizing `max_i w_i^T X w_i`. The
//! relaxed optimum is rounded to the span of the `2k - 1` eigenvectors of `X`
//! with smallest eigenvalue, which loses at most a factor `sqrt(2)` in
//! distance.
//!
//! Only the span of the inputs matters: with `Q` an orthonormal basis of
//! `span(W)` (dimension `s`) and `z_i = Q^T w_i`, every optimal `X` can be taken
//! to be `I - Q (I - B) Q^T` for an `s x s` matrix `B` solving the same problem
//! in `R^s`. Solvers therefore work on `B`, and the certificate is exact:
//! `t = max_i w_i^T X w_i` is evaluated on the returned matrix, and a dual
//! lower bound comes from the constraint weights.

mod brute;
mod ipm;
mod mwu;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_unit, orthonormalize, Subspace, Vector};

pub use brute::brute_force_refine;

/// Default certified duality-gap tolerance.
pub const DEFAULT_TOL: f64 = 1e-4;

/// Iteration cap for the interior-point method.
const IPM_MAX_ITERS: usize = 100;
/// Inner tolerance of the interior-point method (relative residuals and gap).
const IPM_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolverMethod {
    /// Primal-dual interior point on the reduced problem. Reaches gaps near
    /// machine precision in a few dozen iterations.
    #[default]
    InteriorPoint,
    /// Multiplicative weights against an exact eigen best response, with
    /// iterate averaging. Gap shrinks like `sqrt(ln n / T)`.
    MultiplicativeWeights,
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipm" | "interior-point" => Ok(Self::InteriorPoint),
            "mwu" | "multiplicative-weights" => Ok(Self::MultiplicativeWeights),
            _ => Err(invalid(
                "solver",
                format!("unknown method `{s}` (expected ipm or mwu)"),
            )),
        }
    }
}

impl std::fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::InteriorPoint => "ipm",
            Self::MultiplicativeWeights => "mwu",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub method: SolverMethod,
    /// Iteration cap; `None` picks the method's default (`2000 ln n` for
    /// multiplicative weights).
    pub max_iters: Option<usize>,
    /// Required certified gap `t - lower_bound`.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::default(),
            max_iters: None,
            tol: DEFAULT_TOL,
        }
    }
}

/// Default multiplicative-weights iteration count for `n` constraints.
pub fn default_mwu_iters(n: usize) -> usize {
    (2000.0 * (n as f64).ln().max(1.0)).ceil() as usize
}

/// Approximate optimum of the relaxed problem.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    /// The `d x d` relaxed complement projector.
    pub x: DMatrix<f64>,
    /// `max_i w_i^T X w_i` evaluated on `x`.
    pub t: f64,
    /// Dual lower bound on the relaxed optimum certified by `weights`.
    pub lower_bound: f64,
    /// Probability vector over the constraints.
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Whether `t - lower_bound <= tol`.
    pub converged: bool,
    /// Certified gap at each checkpoint (nonincreasing).
    pub gap_trace: Vec<f64>,
    pub method: SolverMethod,
    pub k: usize,
    support: Subspace,
    reduced: DMatrix<f64>,
}

impl SdpSolution {
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    /// `t - lower_bound`, clamped at zero.
    pub fn gap(&self) -> f64 {
        (self.t - self.lower_bound).max(0.0)
    }

    /// Span of the input features.
    pub fn support(&self) -> &Subspace {
        &self.support
    }

    /// Largest violation of `0 <= X <= I` and `tr X = d - k`.
    pub fn feasibility_error(&self) -> f64 {
        let eig = self.x.clone().symmetric_eigenvalues();
        let lo = (-eig.min()).max(0.0);
        let hi = (eig.max() - 1.0).max(0.0);
        let tr = (self.x.trace() - (self.d() - self.k) as f64).abs();
        let asym = (&self.x - self.x.transpose()).amax();
        lo.max(hi).max(tr).max(asym)
    }

    /// Text dump: scalar header lines followed by the rows of `X`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "method {}", self.method);
        let _ = writeln!(out, "d {}", self.d());
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "t {:e}", self.t);
        let _ = writeln!(out, "lower_bound {:e}", self.lower_bound);
        let _ = writeln!(out, "iterations {}", self.iterations);
        let _ = writeln!(out, "converged {}", self.converged);
        let _ = writeln!(out, "weights {}", join(&self.weights));
        let _ = writeln!(out, "gap_trace {}", join(&self.gap_trace));
        let _ = writeln!(out, "X");
        for r in 0..self.d() {
            let row: Vec<f64> = self.x.row(r).iter().copied().collect();
            let _ = writeln!(out, "{}", join(&row));
        }
        out
    }
}

/// Outcome of [`refine`].
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementCertificate {
    /// `max_i dist(w_i, V')` for the rounded subspace.
    pub max_distance: f64,
    pub dims: usize,
    /// `sqrt(c/(c-1) * t) * (1 + tol)`: the rounding guarantee for the
    /// computed relaxation value.
    pub approx_bound: f64,
    pub sdp_value: f64,
    pub lower_bound: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl RefinementCertificate {
    pub fn holds(&self) -> bool {
        self.max_distance <= self.approx_bound
    }

    /// Whether the relaxation proves some `k`-dim subspace could be within
    /// `eps_acc` of every feature (then `max_distance <= sqrt(2) eps_acc`).
    pub fn planted_feasible(&self, eps_acc: f64) -> bool {
        self.lower_bound <= eps_acc * eps_acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineOptions {
    pub solver: SolverOptions,
    /// Rounding factor: keep `c k - 1` eigenvectors.
    pub c: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            c: 2,
        }
    }
}

pub(crate) fn weighted_gram(z: &DMatrix<f64>, p: &[f64]) -> DMatrix<f64> {
    let mut scaled = z.clone();
    for (mut col, &pi) in scaled.column_iter_mut().zip(p) {
        col *= pi;
    }
    let mut m = scaled * z.transpose();
    let t = m.transpose();
    m += t;
    m *= 0.5;
    m
}

/// Eigenpairs sorted ascending by eigenvalue (stable on the decomposition's
/// order), with each eigenvector's first nonzero entry made positive.
pub(crate) fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vecs.set_column(j, &v);
    }
    (vals, vecs)
}

/// The `r` smallest eigenpairs.
pub(crate) fn smallest_eigenpairs(m: &DMatrix<f64>, r: usize) -> (Vec<f64>, DMatrix<f64>) {
    let (vals, vecs) = sorted_eigen(m);
    (vals[..r].to_vec(), vecs.columns(0, r).into_owned())
}

/// Euclidean projection of `lambda` onto `{0 <= x <= 1, sum x = target}`.
fn capped_simplex(lambda: &[f64], target: f64) -> Vec<f64> {
    let mass = |theta: f64| {
        lambda
            .iter()
            .map(|l| (l - theta).clamp(0.0, 1.0))
            .sum::<f64>()
    };
    let lo0 = lambda.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let mut x: Vec<f64> = lambda.iter().map(|l| (l - theta).clamp(0.0, 1.0)).collect();
    // Bisection leaves a residual of order 1e-16 * len; spread it over the
    // interior coordinates so the trace is exact to rounding.
    let resid = target - x.iter().sum::<f64>();
    let free: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0 && x[i] < 1.0).collect();
    if !free.is_empty() {
        let share = resid / free.len() as f64;
        for i in free {
            x[i] = (x[i] + share).clamp(0.0, 1.0);
        }
    }
    x
}

/// Projects a symmetric `B` onto `{0 <= B <= I, tr B = target}`.
fn project_feasible(b: &DMatrix<f64>, target: f64) -> DMatrix<f64> {
    let n = b.nrows();
    if n == 0 {
        return b.clone();
    }
    let mut sym = b + b.transpose();
    sym *= 0.5;
    let (vals, vecs) = sorted_eigen(&sym);
    let clipped = capped_simplex(&vals, target);
    let mut out = &vecs * DMatrix::from_diagonal(&DVector::from_vec(clipped)) * vecs.transpose();
    let t = out.transpose();
    out += t;
    out *= 0.5;
    out
}

/// Dual value: sum of the `r` smallest eigenvalues of `M(p)`.
fn dual_value(z: &DMatrix<f64>, p: &[f64], r: usize) -> f64 {
    if r == 0 {
        return 0.0;
    }
    let (vals, _) = sorted_eigen(&weighted_gram(z, p));
    vals[..r].iter().sum()
}

fn normalize_weights(raw: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = raw
        .iter()
        .map(|&v| if v.is_finite() { v.max(0.0) } else { 0.0 })
        .collect();
    let total: f64 = clipped.iter().sum();
    if total > 0.0 {
        clipped.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

fn validate(w: &[Vector], k: usize) -> Result<usize> {
    let first = w.first().ok_or(Error::EmptyInput("feature list"))?;
    let d = first.len();
    if k == 0 || k >= d {
        return Err(invalid("k", format!("need 1 <= k < d, got k={k}, d={d}")));
    }
    for v in w {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        check_unit(v, "feature")?;
    }
    Ok(d)
}

/// Interior-point solve of the reduced problem; returns `(B, raw weights,
/// iterations)`.
fn solve_ipm(z: &DMatrix<f64>, r: usize, max_iters: usize) -> (DMatrix<f64>, Vec<f64>, usize) {
    use ipm::{BlockSdp, Constraint, Entry, RankOne};
    let (s, n) = z.shape();
    // Blocks: B, its slack S = I - B, and the diagonal block (u_1..u_n, t).
    let sizes = vec![s, s, n + 1];
    let mut constraints = Vec::new();
    let mut rhs = Vec::new();
    for a in 0..s {
        for b in a..s {
            let val = if a == b { 1.0 } else { 0.5 };
            constraints.push(Constraint::sparse(vec![
                Entry {
                    block: 0,
                    row: a,
                    col: b,
                    val,
                },
                Entry {
                    block: 1,
                    row: a,
                    col: b,
                    val,
                },
            ]));
            rhs.push(if a == b { 1.0 } else { 0.0 });
        }
    }
    constraints.push(Constraint::sparse(
        (0..s)
            .map(|a| Entry {
                block: 0,
                row: a,
                col: a,
                val: 1.0,
            })
            .collect(),
    ));
    rhs.push(r as f64);
    let first_row = constraints.len();
    for i in 0..n {
        constraints.push(
            Constraint::sparse(vec![
                Entry {
                    block: 2,
                    row: i,
                    col: i,
                    val: 1.0,
                },
                Entry {
                    block: 2,
                    row: n,
                    col: n,
                    val: -1.0,
                },
            ])
            .with_rank_one(RankOne {
                block: 0,
                coef: 1.0,
                u: z.column(i).into_owned(),
            }),
        );
        rhs.push(0.0);
    }
    let mut c_lp = DMatrix::zeros(n + 1, n + 1);
    c_lp[(n, n)] = 1.0;
    let sdp = BlockSdp {
        block_sizes: sizes,
        c: vec![DMatrix::zeros(s, s), DMatrix::zeros(s, s), c_lp],
        constraints,
        b: DVector::from_vec(rhs),
    };
    let res = sdp.solve(IPM_TOL, max_iters);
    let weights: Vec<f64> = (0..n).map(|i| -res.y[first_row + i]).collect();
    (res.x[0].clone(), weights, res.iterations)
}

/// Solves the relaxed max-distance problem for unit features `w` and target
/// dimension `k` with the default method.
pub fn solve_refinement_sdp(
    w: &[Vector],
    k: usize,
    max_iters: usize,
    tol: f64,
) -> Result<SdpSolution> {
    solve_refinement_sdp_with(
        w,
        k,
        &SolverOptions {
            method: SolverMethod::default(),
            max_iters: Some(max_iters),
            tol,
        },
    )
}

pub fn solve_refinement_sdp_with(
    w: &[Vector],
    k: usize,
    opts: &SolverOptions,
) -> Result<SdpSolution> {
    let d = validate(w, k)?;
    if !(opts.tol > 0.0) {
        return Err(invalid(
            "tol",
            format!("must be positive, got {}", opts.tol),
        ));
    }
    let support = orthonormalize(w)?;
    let s = support.dim();
    let n = w.len();
    let q = support.basis();
    let z = q.tr_mul(&DMatrix::from_columns(w));

    let (reduced, raw_weights, iterations, mut gap_trace) = if s <= k {
        (DMatrix::zeros(s, s), vec![1.0; n], 0, Vec::new())
    } else {
        let r = s - k;
        match opts.method {
            SolverMethod::InteriorPoint => {
                let iters = opts.max_iters.unwrap_or(IPM_MAX_ITERS);
                let (b, p, it) = solve_ipm(&z, r, iters);
                (b, p, it, Vec::new())
            }
            SolverMethod::MultiplicativeWeights => {
                let iters = opts.max_iters.unwrap_or_else(|| default_mwu_iters(n));
                let out = mwu::solve(&z, r, iters, opts.tol);
                (out.b, out.weights, out.iterations, out.gap_trace)
            }
        }
    };
    if reduced.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite iterate".into()));
    }

    let r = s.saturating_sub(k);
    let b = project_feasible(&reduced, r as f64);
    let x = if s >= k {
        let mut x = DMatrix::identity(d, d) - q * (DMatrix::identity(s, s) - &b) * q.transpose();
        let t = x.transpose();
        x += t;
        x *= 0.5;
        x
    } else {
        let scale = (d - k) as f64 / (d - s) as f64;
        (DMatrix::identity(d, d) - support.projector()) * scale
    };
    let weights = normalize_weights(&raw_weights);
    let t = w
        .iter()
        .map(|wi| wi.dot(&(&x * wi)))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let lower_bound = dual_value(&z, &weights, r).max(0.0).min(t);
    let gap = t - lower_bound;
    match gap_trace.last() {
        Some(&last) if last <= gap => {}
        _ => gap_trace.push(gap),
    }
    Ok(SdpSolution {
        x,
        t,
        lower_bound,
        weights,
        iterations,
        converged: gap <= opts.tol,
        gap_trace,
        method: opts.method,
        k,
        support,
        reduced: b,
    })
}

fn check_c(c: usize) -> Result<()> {
    if c < 2 {
        return Err(invalid(
            "c",
            format!("rounding factor must be >= 2, got {c}"),
        ));
    }
    Ok(())
}

/// Basis built from the given eigenvector columns of the reduced problem.
fn lift_columns(support: &Subspace, vecs: &DMatrix<f64>, count: usize) -> Result<Subspace> {
    let cols = support.basis() * vecs.columns(0, count);
    Subspace::from_orthonormal(cols)
}

/// Span of the `c k - 1` eigenvectors of `X` with smallest eigenvalue.
///
/// Eigenvectors are drawn from the span of the inputs first: `X` acts as a
/// multiple of the identity (eigenvalue >= 1) on its complement, which
/// carries no distance information, so the result has dimension
/// `min(c k - 1, dim span(W))`.
pub fn round_sdp(sol: &SdpSolution, k: usize, c: usize) -> Result<Subspace> {
    check_c(c)?;
    let want = (c * k).saturating_sub(1).max(1);
    let s = sol.support.dim();
    let count = want.min(s);
    if count == 0 {
        return Ok(Subspace::empty(sol.d()));
    }
    let (_, vecs) = sorted_eigen(&sol.reduced);
    lift_columns(&sol.support, &vecs, count)
}

/// Rounds an arbitrary symmetric matrix: span of its `c k - 1` smallest
/// eigenvectors (fewer if `d < c k - 1`).
pub fn round_matrix(x: &DMatrix<f64>, k: usize, c: usize) -> Result<Subspace> {
    check_c(c)?;
    if !x.is_square() {
        return Err(Error::InvalidDimensions(format!(
            "{}x{} matrix",
            x.nrows(),
            x.ncols()
        )));
    }
    let d = x.nrows();
    let count = ((c * k).saturating_sub(1)).min(d);
    let (_, vecs) = sorted_eigen(x);
    Subspace::from_orthonormal(vecs.columns(0, count).into_owned())
}

/// `max_i dist(w_i, v)`.
pub fn max_distance(w: &[Vector], v: &Subspace) -> Result<f64> {
    w.iter()
        .try_fold(0.0_f64, |acc, wi| Ok(acc.max(v.dist(wi)?)))
}

fn certificate(
    w: &[Vector],
    v: &Subspace,
    sol: &SdpSolution,
    c: usize,
    tol: f64,
) -> Result<RefinementCertificate> {
    let factor = c as f64 / (c as f64 - 1.0);
    Ok(RefinementCertificate {
        max_distance: max_distance(w, v)?,
        dims: v.dim(),
        approx_bound: (factor * sol.t).sqrt() * (1.0 + tol) + 1e-12,
        sdp_value: sol.t,
        lower_bound: sol.lower_bound,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

/// Solves and rounds with defaults (`c = 2`).
///
/// `eps_acc` is only validated here; compare it against the certificate with
/// [`RefinementCertificate::planted_feasible`].
pub fn refine(w: &[Vector], k: usize, eps_acc: f64) -> Result<(Subspace, RefinementCertificate)> {
    refine_with(w, k, eps_acc, &RefineOptions::default())
}

pub fn refine_with(
    w: &[Vector],
    k: usize,
    eps_acc: f64,
    opts: &RefineOptions,
) -> Result<(Subspace, RefinementCertificate)> {
    if !(eps_acc > 0.0 && eps_acc < 1.0) {
        return Err(invalid(
            "eps_acc",
            format!("must lie in (0, 1), got {eps_acc}"),
        ));
    }
    check_c(opts.c)?;
    let sol = solve_refinement_sdp_with(w, k, &opts.solver)?;
    let v = round_sdp(&sol, k, opts.c)?;
    let cert = certificate(w, &v, &sol, opts.c, opts.solver.tol)?;
    Ok((v, cert))
}

/// Like [`refine_with`] but returns the shortest prefix of the rounded
/// eigenbasis that keeps every feature within `radius`; falls back to the
/// full rounding when no shorter prefix qualifies.
pub fn refine_minimal(
    w: &[Vector],
    k: usize,
    radius: f64,
    opts: &RefineOptions,
) -> Result<(Subspace, RefinementCertificate)> {
    if !(radius > 0.0) {
        return Err(invalid("radius", format!("must be positive, got {radius}")));
    }
    check_c(opts.c)?;
    let sol = solve_refinement_sdp_with(w, k, &opts.solver)?;
    let full = round_sdp(&sol, k, opts.c)?;
    let (_, vecs) = sorted_eigen(&sol.reduced);
    let mut chosen = full;
    for count in 1..chosen.dim() {
        let v = lift_columns(&sol.support, &vecs, count)?;
        if max_distance(w, &v)? <= radius {
            chosen = v;
            break;
        }
    }
    let cert = certificate(w, &chosen, &sol, opts.c, opts.solver.tol)?;
    Ok((chosen, cert))
}

/// Smallest `k <= k_max` whose relaxation value is at most `eps_acc^2`, with
/// its rounding. Uses `k_max` if none qualifies.
pub fn refine_auto(
    w: &[Vector],
    eps_acc: f64,
    k_max: usize,
    opts: &RefineOptions,
) -> Result<(usize, Subspace, RefinementCertificate)> {
    let d = w.first().ok_or(Error::EmptyInput("feature list"))?.len();
    let k_max = k_max.min(d.saturating_sub(1));
    if k_max == 0 {
        return Err(invalid("k_max", "no admissible target dimension"));
    }
    let mut last = None;
    for k in 1..=k_max {
        let (v, cert) = refine_with(w, k, eps_acc, opts)?;
        let done = cert.sdp_value <= eps_acc * eps_acc;
        last = Some((k, v, cert));
        if done {
            break;
        }
    }
    Ok(last.expect("k_max >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::basis_vector;

    fn e(d: usize, i: usize) -> Vector {
        basis_vector(d, i)
    }

    fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vector> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::substream(seed, &[]);
        (0..n)
            .map(|_| {
                let v = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                crate::geometry::normalize(&v).unwrap()
            })
            .collect()
    }

    #[test]
    fn coordinate_features_have_zero_value() {
        let w: Vec<Vector> = (0..3).map(|i| e(6, i)).collect();
        let sol = solve_refinement_sdp(&w, 3, 100, 1e-6).unwrap();
        assert!(sol.t.abs() < 1e-12);
        let mut expected = DMatrix::zeros(6, 6);
        for i in 3..6 {
            expected[(i, i)] = 1.0;
        }
        assert!((&sol.x - expected).amax() < 1e-12);
    }

    #[test]
    fn two_axes_one_dim() {
        let w = vec![e(3, 0), e(3, 1)];
        for method in [
            SolverMethod::InteriorPoint,
            SolverMethod::MultiplicativeWeights,
        ] {
            let opts = SolverOptions {
                method,
                max_iters: None,
                tol: 1e-4,
            };
            let sol = solve_refinement_sdp_with(&w, 1, &opts).unwrap();
            assert!((sol.t - 0.5).abs() < 1e-3, "{method}: t={}", sol.t);
            let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 1.0]));
            assert!((&sol.x - expected).amax() < 2e-3, "{method}");
            assert!(sol.feasibility_error() < 1e-9);
            assert!(sol.lower_bound <= sol.t);
            let v = round_sdp(&sol, 1, 2).unwrap();
            assert_eq!(v.dim(), 1);
            let md = max_distance(&w, &v).unwrap();
            assert!(md * md <= 2.0 * sol.t + 1e-9);
            // Rounded direction lies in span(e1, e2).
            assert!(v.basis()[(2, 0)].abs() < 1e-9);
        }
    }

    #[test]
    fn identical_features_round_to_one_dim() {
        let u = crate::geometry::normalize(&Vector::from_vec(vec![1.0, 2.0, -1.0, 0.5])).unwrap();
        let w = vec![u.clone(); 5];
        let (v, cert) = refine(&w, 2, 0.1).unwrap();
        assert_eq!(v.dim(), 1);
        assert!(cert.max_distance < 1e-12);
    }

    #[test]
    fn planted_noiseless_plane() {
        let basis = orthonormalize(&[
            Vector::from_vec(vec![1.0, 0.3, -0.2, 0.5]),
            Vector::from_vec(vec![0.1, 1.0, 0.7, -0.4]),
        ])
        .unwrap();
        let w: Vec<Vector> = (0..6)
            .map(|i| {
                let a = i as f64 * 0.9 + 0.2;
                basis
                    .embed(&Vector::from_vec(vec![a.cos(), a.sin()]))
                    .unwrap()
            })
            .collect();
        let (v, cert) = refine(&w, 2, 0.01).unwrap();
        assert!(cert.max_distance <= 1e-5, "{}", cert.max_distance);
        assert!(v.dim() <= 3);
    }

    #[test]
    fn capped_simplex_projects() {
        let x = capped_simplex(&[1.4, 0.2, -0.3, 0.9], 2.0);
        assert!((x.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(x[0], 1.0);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn round_matrix_picks_zero_block() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        let v = round_matrix(&x, 2, 2).unwrap();
        let target = Subspace::coordinate(6, &[1, 3, 4]).unwrap();
        assert!(crate::geometry::max_principal_angle(&v, &target).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = vec![e(3, 0)];
        assert!(solve_refinement_sdp(&w, 3, 10, 1e-4).is_err());
        assert!(solve_refinement_sdp(&w, 0, 10, 1e-4).is_err());
        assert!(solve_refinement_sdp(&[], 1, 10, 1e-4).is_err());
        let sol = solve_refinement_sdp(&w, 1, 10, 1e-4).unwrap();
        assert!(round_sdp(&sol, 1, 1).is_err());
        let not_unit = vec![Vector::from_vec(vec![2.0, 0.0, 0.0])];
        assert!(solve_refinement_sdp(&not_unit, 1, 10, 1e-4).is_err());
    }

    #[test]
    fn eigenvalue_floor_after_rounding() {
        // With tr X = d - k and X <= I, the (ck)-th smallest eigenvalue is at
        // least (ck - k)/(ck).
        let w = random_features(5, 8, 3);
        let k = 2;
        let sol = solve_refinement_sdp(&w, k, 100, 1e-6).unwrap();
        let (vals, _) = sorted_eigen(&sol.x);
        assert!(vals[2 * k - 1] >= 0.5 - 1e-9, "{vals:?}");
    }

    #[test]
    fn mwu_gap_trace_nonincreasing() {
        let w = random_features(6, 5, 11);
        let opts = SolverOptions {
            method: SolverMethod::MultiplicativeWeights,
            max_iters: Some(3000),
            tol: 1e-9,
        };
        let sol = solve_refinement_sdp_with(&w, 2, &opts).unwrap();
        assert!(sol.gap_trace.len() > 2);
        assert!(sol.gap_trace.windows(2).all(|p| p[1] <= p[0] + 1e-15));
        let exact = solve_refinement_sdp(&w, 2, 100, 1e-8).unwrap();
        assert!(sol.t >= exact.lower_bound - 1e-9);
        assert!((sol.t - exact.t).abs() < 0.05);
    }
}
