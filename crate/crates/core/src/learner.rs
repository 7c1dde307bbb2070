//! Single-task halfspace learners.
//!
//! The learners estimate the normal of a homogeneous halfspace from labeled
//! Gaussian samples. For standard Gaussian inputs `E[y x] = sqrt(2/pi) a`, so the
//! normalized empirical mean of `y x` is a consistent estimator; an optional
//! perceptron pass can follow it.

use crate::error::{invalid, Error, Result};
use crate::geometry::{check_unit, normalize, Subspace, Vector};
use crate::synthetic::{label_of, task_error_exact, Batch, GroundTruth, TaskStream};

/// Default sample-complexity constant `C_s`.
pub const DEFAULT_C_S: f64 = 4.0;

/// `ceil(c_s * dim * ln(1/eps) / eps)` labeled examples.
pub fn budget(dim: usize, eps: f64, c_s: f64) -> Result<u64> {
    check_eps(eps)?;
    if !(c_s > 0.0) || !c_s.is_finite() {
        return Err(invalid(
            "c_s",
            format!("must be positive and finite, got {c_s}"),
        ));
    }
    let raw = c_s * dim as f64 * (1.0 / eps).ln() / eps;
    if !raw.is_finite() || raw >= u64::MAX as f64 || raw >= usize::MAX as f64 {
        return Err(Error::BudgetOverflow { dim, eps });
    }
    Ok((raw.ceil() as u64).max(1))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(invalid("eps", format!("must lie in (0, 1/2), got {eps}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerBudget {
    pub samples_allowed: u64,
    pub epsilon_target: f64,
}

impl LearnerBudget {
    pub fn new(dim: usize, eps: f64, c_s: f64) -> Result<Self> {
        Ok(Self {
            samples_allowed: budget(dim, eps, c_s)?,
            epsilon_target: eps,
        })
    }
}

/// A learned unit normal, in ambient or feature coordinates depending on the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub direction: Vector,
    pub samples_used: u64,
}

impl Hypothesis {
    /// Ambient normal for a hypothesis expressed in `v`'s coordinates.
    pub fn embed(&self, v: &Subspace) -> Result<Vector> {
        normalize(&v.embed(&self.direction)?)
    }
}

/// Learner knobs shared by the full-space and restricted learners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfspaceLearner {
    pub c_s: f64,
    /// Perceptron passes run after the mean estimate; 0 disables refinement.
    pub perceptron_passes: usize,
}

impl Default for HalfspaceLearner {
    fn default() -> Self {
        Self {
            c_s: DEFAULT_C_S,
            perceptron_passes: 0,
        }
    }
}

impl HalfspaceLearner {
    pub fn with_c_s(c_s: f64) -> Self {
        Self {
            c_s,
            ..Self::default()
        }
    }

    /// Learns task `task` in `R^d` from `budget(d, eps_target)` fresh samples.
    pub fn learn(
        &self,
        stream: &mut TaskStream,
        task: usize,
        eps_target: f64,
    ) -> Result<Hypothesis> {
        let d = stream.ground_truth().d();
        let n = budget(d, eps_target, self.c_s)?;
        let batch = stream.sample_matrix(task, n as usize)?;
        Ok(Hypothesis {
            direction: fit_direction(&batch.xs, &batch.ys, self.perceptron_passes),
            samples_used: n,
        })
    }

    /// Learns task `task` over the coordinates of `v` from `budget(dim v, eps_target)` samples.
    ///
    /// The returned direction lives in `R^{dim v}`; use [`Hypothesis::embed`] for
    /// the ambient normal. If the task is far from `v` the hypothesis is simply
    /// poor; the caller is expected to check it.
    pub fn learn_in(
        &self,
        stream: &mut TaskStream,
        task: usize,
        v: &Subspace,
        eps_target: f64,
    ) -> Result<Hypothesis> {
        if v.is_empty() {
            return Err(Error::EmptyInput("feature subspace"));
        }
        if v.ambient_dim() != stream.ground_truth().d() {
            return Err(Error::DimensionMismatch {
                expected: stream.ground_truth().d(),
                found: v.ambient_dim(),
            });
        }
        let n = budget(v.dim(), eps_target, self.c_s)?;
        let Batch { xs, ys } = stream.sample_matrix(task, n as usize)?;
        let coords = v.basis().tr_mul(&xs);
        Ok(Hypothesis {
            direction: fit_direction(&coords, &ys, self.perceptron_passes),
            samples_used: n,
        })
    }
}

/// Normalized mean of `y x` over the columns of `xs`, optionally polished by
/// perceptron passes. Falls back to the first axis if the estimate vanishes.
pub fn fit_direction(xs: &nalgebra::DMatrix<f64>, ys: &[i8], perceptron_passes: usize) -> Vector {
    let dim = xs.nrows();
    let mut w = Vector::zeros(dim);
    for (col, &y) in xs.column_iter().zip(ys) {
        w.axpy(f64::from(y), &col, 1.0);
    }
    for _ in 0..perceptron_passes {
        let mut mistakes = 0usize;
        for (col, &y) in xs.column_iter().zip(ys) {
            if label_of(col.dot(&w)) != y {
                w.axpy(f64::from(y), &col, 1.0);
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            break;
        }
    }
    normalize(&w).unwrap_or_else(|_| crate::geometry::basis_vector(dim, 0))
}

pub fn learn_halfspace(
    stream: &mut TaskStream,
    task: usize,
    eps_target: f64,
    c_s: f64,
) -> Result<Hypothesis> {
    HalfspaceLearner::with_c_s(c_s).learn(stream, task, eps_target)
}

pub fn learn_in_feature_space(
    stream: &mut TaskStream,
    task: usize,
    v: &Subspace,
    eps_target: f64,
    c_s: f64,
) -> Result<Hypothesis> {
    HalfspaceLearner::with_c_s(c_s).learn_in(stream, task, v, eps_target)
}

/// Inclusive threshold: an error of exactly `eps` passes.
#[inline]
pub fn within_threshold(error: f64, eps: f64) -> bool {
    error <= eps
}

/// Oracle check of an ambient unit hypothesis against the planted task.
pub fn check_hypothesis(h: &Vector, task: usize, gt: &GroundTruth, eps: f64) -> Result<bool> {
    Ok(within_threshold(task_error_exact(h, task, gt)?, eps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CheckMode {
    /// Exact error from the planted ground truth; costs no samples.
    #[default]
    Oracle,
    /// Empirical error on `ceil(32 / eps)` fresh samples, charged to the ledger.
    MonteCarlo,
}

impl std::str::FromStr for CheckMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oracle" => Ok(Self::Oracle),
            "monte_carlo" | "monte-carlo" | "mc" => Ok(Self::MonteCarlo),
            other => Err(invalid(
                "check_mode",
                format!("expected oracle or monte_carlo, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for CheckMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::MonteCarlo => "monte_carlo",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    /// The error the decision was based on (exact or estimated).
    pub error: f64,
    pub samples_charged: u64,
}

pub fn monte_carlo_check_size(eps: f64) -> u64 {
    (32.0 / eps).ceil() as u64
}

pub fn check(
    mode: CheckMode,
    stream: &mut TaskStream,
    h: &Vector,
    task: usize,
    eps: f64,
) -> Result<CheckOutcome> {
    match mode {
        CheckMode::Oracle => {
            let error = task_error_exact(h, task, stream.ground_truth())?;
            Ok(CheckOutcome {
                passed: within_threshold(error, eps),
                error,
                samples_charged: 0,
            })
        }
        CheckMode::MonteCarlo => {
            let n = monte_carlo_check_size(eps);
            let error = stream.empirical_error(h, task, n as usize)?;
            Ok(CheckOutcome {
                passed: within_threshold(error, eps),
                error,
                samples_charged: n,
            })
        }
    }
}

/// Adversarial single-task learner: pushes the whole error onto one spare coordinate.
///
/// Returns `normalize(a + eps_i e_coord)`, which is within distance `eps_i` of `a`.
/// `adv_coord` is zero-based.
pub fn adversarial_learn(a: &Vector, eps_i: f64, adv_coord: usize) -> Result<Vector> {
    check_unit(a, "a")?;
    if adv_coord >= a.len() {
        return Err(invalid(
            "adv_coord",
            format!("{adv_coord} outside R^{}", a.len()),
        ));
    }
    if a[adv_coord] != 0.0 {
        return Err(invalid(
            "a",
            format!("entry {adv_coord} must be zero, found {}", a[adv_coord]),
        ));
    }
    if !(0.0..1.0).contains(&eps_i) {
        return Err(invalid("eps_i", format!("must lie in [0, 1), got {eps_i}")));
    }
    let mut out = a.clone();
    out[adv_coord] = eps_i;
    normalize(&out)
}
