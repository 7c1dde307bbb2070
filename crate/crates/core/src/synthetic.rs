//! Planted problems, seeded task streams and exact error evaluation.
//!
//! Inputs are standard Gaussian, so the disagreement probability between two
//! halfspaces through the origin is exactly `angle(u, v) / pi`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::geometry::{angle_between, check_unit, orthonormalize, Subspace, Vector};
use crate::rng::{self, substream, tag};

/// `sign` with ties sent to +1.
#[inline]
pub fn label_of(dot: f64) -> i8 {
    if dot >= 0.0 {
        1
    } else {
        -1
    }
}

/// Hidden features `W*` (k x d), combinations `C*` (m x k) and unit task
/// normals `a_i = normalize(W*^T c*_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    d: usize,
    k: usize,
    m: usize,
    seed: u64,
    w_star: DMatrix<f64>,
    c_star: DMatrix<f64>,
    tasks: Vec<Vector>,
}

impl GroundTruth {
    /// Builds a problem from explicit matrices. Fails if some `W*^T c*_i` vanishes.
    pub fn from_parts(seed: u64, w_star: DMatrix<f64>, c_star: DMatrix<f64>) -> Result<Self> {
        let (k, d) = w_star.shape();
        let m = c_star.nrows();
        if c_star.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: c_star.ncols(),
            });
        }
        validate_dims(d, k, m)?;
        let tasks = (0..m)
            .map(|i| {
                let a = w_star.tr_mul(&c_star.row(i).transpose());
                crate::geometry::normalize(&a)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            k,
            m,
            seed,
            w_star,
            c_star,
            tasks,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn w_star(&self) -> &DMatrix<f64> {
        &self.w_star
    }
    pub fn c_star(&self) -> &DMatrix<f64> {
        &self.c_star
    }

    pub fn task_vectors(&self) -> &[Vector] {
        &self.tasks
    }

    pub fn task_vector(&self, task: usize) -> Result<&Vector> {
        self.tasks
            .get(task)
            .ok_or(Error::TaskOutOfRange { task, m: self.m })
    }

    /// `span(a_1, ..., a_m)`, the subspace the learner should recover.
    pub fn task_subspace(&self) -> Subspace {
        orthonormalize(&self.tasks).expect("ground truth has at least one task")
    }

    /// Flat text form: a `d k m seed` header, then `W*` rows, then `C*` rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {} {}", self.d, self.k, self.m, self.seed);
        for mat in [&self.w_star, &self.c_star] {
            for row in mat.row_iter() {
                let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            reason: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: hline,
                reason: "header must be `d k m seed`".into(),
            });
        }
        let num = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Parse {
                line: hline,
                reason: format!("bad integer `{s}`"),
            })
        };
        let (d, k, m, seed) = (
            num(fields[0])? as usize,
            num(fields[1])? as usize,
            num(fields[2])? as usize,
            num(fields[3])?,
        );
        validate_dims(d, k, m)?;
        let mut read_rows = |rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let mut mat = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let (ln, l) = lines.next().ok_or(Error::Parse {
                    line: 0,
                    reason: "unexpected end of input".into(),
                })?;
                let vals: Vec<f64> = l
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line: ln,
                        reason: e.to_string(),
                    })?;
                if vals.len() != cols {
                    return Err(Error::Parse {
                        line: ln,
                        reason: format!("expected {cols} values, found {}", vals.len()),
                    });
                }
                for (c, v) in vals.into_iter().enumerate() {
                    mat[(r, c)] = v;
                }
            }
            Ok(mat)
        };
        let w = read_rows(k, d)?;
        let c = read_rows(m, k)?;
        Self::from_parts(seed, w, c)
    }
}

fn validate_dims(d: usize, k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m.min(d) {
        return Err(Error::InvalidDimensions(format!(
            "need 1 <= k <= min(m, d); got d={d}, k={k}, m={m}"
        )));
    }
    Ok(())
}

/// Unit features within distance `eps_acc` of a random `k`-dim subspace.
///
/// Each feature is `cos(theta) u + sin(theta) n` with `u` a random unit vector
/// of the subspace, `n` a random unit vector orthogonal to it and
/// `sin(theta)` uniform on `(0, eps_acc]`, so its distance to the subspace is
/// exactly `sin(theta)`.
pub fn planted_features(
    d: usize,
    k: usize,
    n: usize,
    eps_acc: f64,
    seed: u64,
) -> Result<(Subspace, Vec<Vector>)> {
    if k == 0 || k >= d {
        return Err(invalid("k", format!("need 1 <= k < d, got k={k}, d={d}")));
    }
    if !(0.0..1.0).contains(&eps_acc) {
        return Err(invalid(
            "eps_acc",
            format!("must lie in [0, 1), got {eps_acc}"),
        ));
    }
    let mut rng = substream(seed, &[tag::PLANTED]);
    let gauss = |rng: &mut rng::SimRng, len: usize| {
        Vector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let draws: Vec<Vector> = (0..k).map(|_| gauss(&mut rng, d)).collect();
    let planted = orthonormalize(&draws)?;
    if planted.dim() != k {
        return Err(Error::Solver("degenerate planted draw".into()));
    }
    let mut features = Vec::with_capacity(n);
    while features.len() < n {
        let u = planted.embed(&gauss(&mut rng, k))?;
        let off = planted.residual(&gauss(&mut rng, d))?;
        let (un, on) = (u.norm(), off.norm());
        if un == 0.0 || on == 0.0 {
            continue;
        }
        let sin = eps_acc * (1.0 - rng.random::<f64>());
        let cos = (1.0 - sin * sin).sqrt();
        features.push(u * (cos / un) + off * (sin / on));
    }
    Ok((planted, features))
}

/// Draws `W*` and `C*` with i.i.d. standard normal entries.
///
/// A combination with `W*^T c*_i = 0` (probability zero) is redrawn from the
/// same generator.
pub fn generate_problem(d: usize, k: usize, m: usize, seed: u64) -> Result<GroundTruth> {
    validate_dims(d, k, m)?;
    let mut rng = substream(seed, &[tag::PROBLEM]);
    let mut w_star = DMatrix::zeros(k, d);
    for r in 0..k {
        for c in 0..d {
            w_star[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let mut c_star = DMatrix::zeros(m, k);
    for i in 0..m {
        loop {
            for j in 0..k {
                c_star[(i, j)] = rng.sample(StandardNormal);
            }
            let a = w_star.tr_mul(&c_star.row(i).transpose());
            if a.norm() > 0.0 {
                break;
            }
        }
    }
    GroundTruth::from_parts(seed, w_star, c_star)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub x: Vector,
    pub y: i8,
}

/// A batch stored column-wise: `xs` is `d x n`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub xs: DMatrix<f64>,
    pub ys: Vec<i8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.ys
            .iter()
            .enumerate()
            .map(|(j, &y)| LabeledSample {
                x: self.xs.column(j).into_owned(),
                y,
            })
            .collect()
    }
}

/// Sequential task presentation over a shared ground truth.
///
/// Each `(task, batch index)` pair draws from its own substream, so batches
/// are reproducible regardless of how tasks are interleaved.
#[derive(Clone, Debug)]
pub struct TaskStream {
    ground_truth: Arc<GroundTruth>,
    order: Vec<usize>,
    seed: u64,
    batches: Vec<u64>,
}

impl TaskStream {
    pub fn new(ground_truth: Arc<GroundTruth>, seed: u64) -> Self {
        let m = ground_truth.m();
        Self {
            ground_truth,
            order: (0..m).collect(),
            seed,
            batches: vec![0; m],
        }
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let m = self.ground_truth.m();
        let mut seen = vec![false; m];
        if order.len() != m {
            return Err(invalid(
                "order",
                format!("expected {m} entries, found {}", order.len()),
            ));
        }
        for &t in &order {
            if t >= m || std::mem::replace(&mut seen[t], true) {
                return Err(invalid("order", "not a permutation of the task indices"));
            }
        }
        self.order = order;
        Ok(self)
    }

    /// Presents tasks in a seeded random order.
    pub fn shuffled(mut self, seed: u64) -> Self {
        let mut rng = substream(seed, &[tag::TRIAL, 0x0bde]);
        self.order.shuffle(&mut rng);
        self
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.ground_truth
    }

    pub fn shared_ground_truth(&self) -> Arc<GroundTruth> {
        Arc::clone(&self.ground_truth)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn next_rng(&mut self, task: usize, kind: u64) -> Result<rng::SimRng> {
        let m = self.ground_truth.m();
        let counter = self
            .batches
            .get_mut(task)
            .ok_or(Error::TaskOutOfRange { task, m })?;
        let r = substream(self.seed, &[kind, task as u64, *counter]);
        *counter += 1;
        Ok(r)
    }

    /// Draws `n` Gaussian inputs labeled by task `task`.
    pub fn sample_matrix(&mut self, task: usize, n: usize) -> Result<Batch> {
        if n == 0 {
            return Err(invalid("n", "batch size must be at least 1"));
        }
        let mut rng = self.next_rng(task, tag::SAMPLES)?;
        let a = self.ground_truth.task_vector(task)?.clone();
        let d = a.len();
        let mut xs = DMatrix::zeros(d, n);
        for mut col in xs.column_iter_mut() {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        let ys = xs.column_iter().map(|c| label_of(c.dot(&a))).collect();
        Ok(Batch { xs, ys })
    }

    pub fn sample_batch(&mut self, task: usize, n: usize) -> Result<Vec<LabeledSample>> {
        Ok(self.sample_matrix(task, n)?.into_samples())
    }

    /// Empirical error of `h` on `n` fresh draws from task `task`.
    pub fn empirical_error(&mut self, h: &Vector, task: usize, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(invalid("n", "test size must be at least 1"));
        }
        let mut rng = self.next_rng(task, tag::CHECK)?;
        let a = self.ground_truth.task_vector(task)?.clone();
        if h.len() != a.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: h.len(),
            });
        }
        let mut x = Vector::zeros(a.len());
        let mut wrong = 0usize;
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if label_of(x.dot(h)) != label_of(x.dot(&a)) {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / n as f64)
    }
}

/// `P(sign <u,x> != sign <v,x>)` for rotationally symmetric `x`: `angle(u, v) / pi`.
pub fn disagreement_exact(u: &Vector, v: &Vector) -> Result<f64> {
    check_unit(u, "u")?;
    check_unit(v, "v")?;
    Ok(angle_between(u, v)? / PI)
}

/// Fraction of `n` standard Gaussian draws on which `u` and `v` disagree.
///
/// Only `(<u,x>, <v,x>)` matters, and for `x ~ N(0, I_d)` that pair is
/// `(|u| g1, |v| (c g1 + s g2))` with `c = cos angle(u, v)`, `s = sin angle(u, v)`
/// and `g1, g2` independent standard normals, so two draws per sample suffice.
pub fn disagreement_mc(u: &Vector, v: &Vector, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n", "need at least one draw"));
    }
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let theta = angle_between(u, v)?;
    let (s, c) = theta.sin_cos();
    let mut rng = substream(seed, &[tag::MONTE_CARLO]);
    let mut wrong = 0usize;
    for _ in 0..n {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        if label_of(g1) != label_of(c * g1 + s * g2) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n as f64)
}

/// True generalization error of a unit hypothesis on `task`.
pub fn task_error_exact(hypothesis: &Vector, task: usize, gt: &GroundTruth) -> Result<f64> {
    disagreement_exact(hypothesis, gt.task_vector(task)?)
}
