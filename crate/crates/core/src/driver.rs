//! Lifelong-learning loops with full sample and geometry accounting.
//!
//! * **Basic**: each task is first attempted with a cheap learner restricted
//!   to the current feature subspace; on failure a new feature is learned from
//!   scratch at the tighter accuracy `epsilon_acc` and appended.
//! * **RR**: as Basic, but after new features are learned the whole raw
//!   feature list is refined to a subspace of dimension at most `2k - 1`.
//!   Recorded classifiers are re-expressed in the new basis by projection and
//!   re-validated; violations are relearned inside the subspace, and if that
//!   fails, a fresh feature is learned and the refinement repeated.
//! * **Joint**: offline baseline pooling `N` samples per task and taking the
//!   best rank-`k` subspace of the stacked per-task estimates.
//!
//! Every learner invocation is charged to a ledger; the report's totals are
//! checked against the charge log exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    gamma_effective_dimension, max_principal_angle, normalize, Subspace, Vector,
};
use crate::learner::{budget, check, fit_direction, CheckMode, HalfspaceLearner, DEFAULT_C_S};
use crate::refinement::{refine_minimal, refine_with, RefineOptions, SolverOptions};
use crate::rng::{derive_seed, tag};
use crate::synthetic::{generate_problem, task_error_exact, GroundTruth, TaskStream};

/// Fallback rounds of fresh learning plus re-refinement before a re-validation
/// failure is reported as a violation.
const MAX_REFINE_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Basic,
    Rr,
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Basic, Mode::Rr, Mode::Joint];
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "rr" => Ok(Self::Rr),
            "joint" => Ok(Self::Joint),
            _ => Err(invalid(
                "mode",
                format!("unknown mode `{s}` (expected basic, rr or joint)"),
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Basic => "basic",
            Self::Rr => "rr",
            Self::Joint => "joint",
        })
    }
}

/// When LLL-RR refines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineTrigger {
    OnNewFeature,
    /// Only once appending a feature would push the dimension above `r_max`.
    Threshold(usize),
}

impl FromStr for RefineTrigger {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "on_new_feature" {
            return Ok(Self::OnNewFeature);
        }
        let inner = s
            .strip_prefix("threshold(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("threshold:"))
            .ok_or_else(|| {
                invalid(
                    "refine_every",
                    format!("expected on_new_feature or threshold(R), got `{s}`"),
                )
            })?;
        let r = inner
            .trim()
            .parse()
            .map_err(|_| invalid("refine_every", format!("bad threshold `{inner}`")))?;
        Ok(Self::Threshold(r))
    }
}

impl std::fmt::Display for RefineTrigger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OnNewFeature => f.write_str("on_new_feature"),
            Self::Threshold(r) => write!(f, "threshold({r})"),
        }
    }
}

/// How LLL-RR turns the refined eigenbasis into the active subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RrRounding {
    /// All `2k - 1` eigenvectors (capped by the span of the features).
    #[default]
    Full,
    /// The shortest eigenvector prefix keeping every raw feature within the
    /// rounding guarantee `sqrt(2) * sin(pi * epsilon_acc)`.
    Minimal,
}

impl FromStr for RrRounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "minimal" => Ok(Self::Minimal),
            _ => Err(invalid(
                "rr_rounding",
                format!("expected full or minimal, got `{s}`"),
            )),
        }
    }
}

impl std::fmt::Display for RrRounding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Minimal => "minimal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    /// Samples per task for the joint baseline.
    pub n_per_task: usize,
    pub epsilon: f64,
    /// Accuracy of freshly learned features; `None` means
    /// `epsilon / (acc_constant * sqrt(k))`.
    pub epsilon_acc: Option<f64>,
    pub acc_constant: f64,
    pub c_s: f64,
    pub seed: u64,
    pub trials: usize,
    pub mode: Mode,
    pub check_mode: CheckMode,
    pub refine_every: RefineTrigger,
    pub rr_rounding: RrRounding,
    pub solver: SolverOptions,
    pub perceptron_passes: usize,
    /// Separation angle for the effective-dimension diagnostic; `None` means
    /// `pi * epsilon`, the angle at which a task stops being learnable in span.
    pub gamma: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 100,
            k: 5,
            m: 100,
            n_per_task: 200,
            epsilon: 0.1,
            epsilon_acc: None,
            acc_constant: 2.0,
            c_s: DEFAULT_C_S,
            seed: 0,
            trials: 10,
            mode: Mode::Rr,
            check_mode: CheckMode::Oracle,
            refine_every: RefineTrigger::OnNewFeature,
            rr_rounding: RrRounding::default(),
            solver: SolverOptions::default(),
            perceptron_passes: 0,
            gamma: None,
        }
    }
}

impl RunConfig {
    pub fn eps_acc(&self) -> f64 {
        self.epsilon_acc
            .unwrap_or_else(|| self.epsilon / (self.acc_constant * (self.k as f64).sqrt()))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(PI * self.epsilon)
    }

    /// Seed of trial `t`: problem, stream and everything else derive from it.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, &[tag::TRIAL, trial as u64])
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k, m) = (self.d, self.k, self.m);
        if d == 0 || m == 0 {
            return Err(Error::InvalidDimensions(format!("d={d}, m={m}")));
        }
        if k == 0 || k > m.min(d) {
            return Err(Error::InvalidDimensions(format!(
                "need 1 <= k <= min(m, d), got k={k}, m={m}, d={d}"
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(invalid(
                "epsilon",
                format!("must lie in (0, 1/2), got {}", self.epsilon),
            ));
        }
        if !(self.acc_constant > 0.0 && self.acc_constant.is_finite()) {
            return Err(invalid(
                "acc_constant",
                format!("must be positive, got {}", self.acc_constant),
            ));
        }
        let acc = self.eps_acc();
        if !(acc > 0.0 && acc <= self.epsilon) {
            return Err(invalid(
                "epsilon_acc",
                format!("need 0 < epsilon_acc <= epsilon, got {acc}"),
            ));
        }
        if !(self.c_s > 0.0 && self.c_s.is_finite()) {
            return Err(invalid(
                "c_s",
                format!("must be positive, got {}", self.c_s),
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        if self.mode == Mode::Joint && self.n_per_task == 0 {
            return Err(invalid(
                "N",
                "joint training needs at least one sample per task",
            ));
        }
        if self.mode == Mode::Rr && k >= d {
            return Err(invalid(
                "k",
                format!("refinement needs k < d, got k={k}, d={d}"),
            ));
        }
        if let RefineTrigger::Threshold(r) = self.refine_every {
            if r == 0 {
                return Err(invalid("refine_every", "threshold must be positive"));
            }
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return Err(invalid("gamma", format!("must be nonnegative, got {g}")));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(invalid(
                "tol",
                format!("must be positive, got {}", self.solver.tol),
            ));
        }
        Ok(())
    }

    fn learner(&self) -> HalfspaceLearner {
        HalfspaceLearner {
            c_s: self.c_s,
            perceptron_passes: self.perceptron_passes,
        }
    }
}

/// Which part of the algorithm a charge paid for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Fresh full-space feature learning.
    Representation,
    /// Learning inside the feature subspace (including relearns).
    Combination,
    /// Monte-Carlo error checks.
    Check,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Charge {
    pub task: usize,
    pub phase: Phase,
    /// Learner dimension (0 for checks and pooled joint samples).
    pub dim: usize,
    pub eps: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleLedger {
    pub charges: Vec<Charge>,
}

impl SampleLedger {
    fn charge(&mut self, task: usize, phase: Phase, dim: usize, eps: f64, samples: u64) {
        self.charges.push(Charge {
            task,
            phase,
            dim,
            eps,
            samples,
        });
    }

    pub fn total(&self) -> u64 {
        self.charges.iter().map(|c| c.samples).sum()
    }

    pub fn phase_total(&self, phase: Phase) -> u64 {
        self.charges
            .iter()
            .filter(|c| c.phase == phase)
            .map(|c| c.samples)
            .sum()
    }
}

/// Raw features, active subspace and per-task classifiers in its basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLedger {
    pub raw_features: Vec<Vector>,
    pub active_subspace: Subspace,
    /// Unit coefficient vectors in the active basis, by task index.
    pub classifiers: Vec<Option<Vector>>,
}

impl FeatureLedger {
    fn new(d: usize, m: usize) -> Self {
        Self {
            raw_features: Vec::new(),
            active_subspace: Subspace::empty(d),
            classifiers: vec![None; m],
        }
    }

    /// Ambient unit normal of task `task`'s classifier.
    pub fn hypothesis(&self, task: usize) -> Option<Vector> {
        let c = self.classifiers.get(task)?.as_ref()?;
        normalize(&self.active_subspace.embed(c).ok()?).ok()
    }

    /// Stores an ambient hypothesis by projecting it onto the active basis.
    fn store(&mut self, task: usize, h: &Vector) {
        self.classifiers[task] = self
            .active_subspace
            .coordinates(h)
            .ok()
            .and_then(|c| normalize(&c).ok());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementEvent {
    /// Stream position after which the refinement ran.
    pub step: usize,
    pub raw_features: usize,
    pub dims: usize,
    pub max_distance: f64,
    pub approx_bound: f64,
    pub sdp_value: f64,
    pub converged: bool,
    /// Classifiers relearned inside the new subspace.
    pub relearned: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub task: usize,
    pub step: usize,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub mode: Mode,
    pub trial: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub c_s: f64,
    pub k: usize,
    /// Final true error of each task's classifier, by task index.
    pub per_task_error: Vec<f64>,
    /// Task index processed at each stream position.
    pub step_task: Vec<usize>,
    /// True error of the classifier recorded at each step.
    pub step_error: Vec<f64>,
    pub accuracy_curve: Vec<f64>,
    pub min_accuracy_curve: Vec<f64>,
    pub feature_dim_curve: Vec<usize>,
    pub new_feature_events: Vec<usize>,
    pub new_feature_steps: Vec<usize>,
    pub angle_curve: Vec<f64>,
    pub samples_curve: Vec<u64>,
    pub samples_total: u64,
    /// `(representation, combination)` samples.
    pub samples_per_phase: (u64, u64),
    pub samples_check: u64,
    pub ledger: SampleLedger,
    pub refinements: Vec<RefinementEvent>,
    pub violations: Vec<Violation>,
    /// Greedy gamma-effective dimension of the learned raw features.
    pub gamma_effective_dim: usize,
    pub final_subspace: Subspace,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy_curve.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_min_accuracy(&self) -> f64 {
        self.min_accuracy_curve.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_angle(&self) -> f64 {
        self.angle_curve.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_dim(&self) -> usize {
        self.feature_dim_curve.last().copied().unwrap_or(0)
    }

    pub fn max_dim(&self) -> usize {
        self.feature_dim_curve.iter().copied().max().unwrap_or(0)
    }

    pub fn csv_header() -> &'static str {
        "trial,task_index,mode,feature_dim,new_feature,per_task_error,avg_acc,min_acc,max_principal_angle,samples_cum"
    }

    /// One row per stream position, without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for i in 0..self.step_task.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{}",
                self.trial,
                self.step_task[i],
                self.mode,
                self.feature_dim_curve[i],
                u8::from(self.new_feature_steps.contains(&i)),
                self.step_error[i],
                self.accuracy_curve[i],
                self.min_accuracy_curve[i],
                self.angle_curve[i],
                self.samples_curve[i],
            );
        }
        out
    }

    /// Descriptions of every broken report invariant; empty when all hold.
    ///
    /// The error contract is only asserted in oracle check mode, where the
    /// algorithm's decisions use the true error.
    pub fn invariant_failures(&self, check_mode: CheckMode) -> Vec<String> {
        let mut out = Vec::new();
        if check_mode == CheckMode::Oracle && self.mode != Mode::Joint {
            for v in &self.violations {
                out.push(format!(
                    "task {} exceeded epsilon after step {}: error {:.6}",
                    v.task, v.step, v.error
                ));
            }
            for (t, e) in self.per_task_error.iter().enumerate() {
                if *e > self.epsilon {
                    out.push(format!(
                        "final error of task {t} is {e:.6} > {}",
                        self.epsilon
                    ));
                }
            }
        }
        let rep = self.ledger.phase_total(Phase::Representation);
        let comb = self.ledger.phase_total(Phase::Combination);
        let chk = self.ledger.phase_total(Phase::Check);
        if self.samples_total != self.ledger.total()
            || self.samples_total != rep + comb + chk
            || self.samples_per_phase != (rep, comb)
            || self.samples_check != chk
        {
            out.push("sample totals disagree with the charge log".into());
        }
        if self.mode != Mode::Joint {
            for c in &self.ledger.charges {
                let expected = match c.phase {
                    Phase::Check => Ok(crate::learner::monte_carlo_check_size(c.eps)),
                    _ => budget(c.dim, c.eps, self.c_s),
                };
                if expected.as_ref() != Ok(&c.samples) {
                    out.push(format!(
                        "charge for task {} ({:?}, dim {}) is {} samples, expected {:?}",
                        c.task, c.phase, c.dim, c.samples, expected
                    ));
                }
            }
        }
        if self.mode == Mode::Rr {
            let cap = 2 * self.k - 1;
            for r in &self.refinements {
                if r.dims > cap {
                    out.push(format!(
                        "refinement after step {} has dimension {} > {cap}",
                        r.step, r.dims
                    ));
                }
            }
        }
        let refine_steps: Vec<usize> = self.refinements.iter().map(|r| r.step).collect();
        for i in 1..self.feature_dim_curve.len() {
            if self.feature_dim_curve[i] < self.feature_dim_curve[i - 1]
                && !refine_steps.contains(&i)
            {
                out.push(format!(
                    "feature dimension dropped at step {i} without a refinement"
                ));
            }
        }
        out
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    trial: usize,
    seed: u64,
    gt: Arc<GroundTruth>,
    truth: Subspace,
    stream: TaskStream,
    learner: HalfspaceLearner,
    features: FeatureLedger,
    samples: SampleLedger,
    seen: Vec<usize>,
    refinements: Vec<RefinementEvent>,
    violations: Vec<Violation>,
    events: Vec<usize>,
    event_steps: Vec<usize>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a RunConfig, trial: usize, seed: u64, gt: Arc<GroundTruth>) -> Result<Self> {
        cfg.validate()?;
        let truth = gt.task_subspace();
        let stream = TaskStream::new(Arc::clone(&gt), seed);
        Ok(Self {
            cfg,
            trial,
            seed,
            truth,
            stream,
            learner: cfg.learner(),
            features: FeatureLedger::new(cfg.d, cfg.m),
            samples: SampleLedger::default(),
            seen: Vec::new(),
            refinements: Vec::new(),
            violations: Vec::new(),
            events: Vec::new(),
            event_steps: Vec::new(),
            gt,
        })
    }

    fn wrap<T>(task: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::Learner {
            task,
            source: Box::new(e),
        })
    }

    /// Decision check; charges Monte-Carlo samples if applicable.
    fn passes(&mut self, h: &Vector, task: usize) -> Result<bool> {
        let out = Self::wrap(
            task,
            check(
                self.cfg.check_mode,
                &mut self.stream,
                h,
                task,
                self.cfg.epsilon,
            ),
        )?;
        if out.samples_charged > 0 {
            self.samples
                .charge(task, Phase::Check, 0, self.cfg.epsilon, out.samples_charged);
        }
        Ok(out.passed)
    }

    fn restricted(&mut self, task: usize) -> Result<Vector> {
        let v = self.features.active_subspace.clone();
        let h = Self::wrap(
            task,
            self.learner
                .learn_in(&mut self.stream, task, &v, self.cfg.epsilon),
        )?;
        self.samples.charge(
            task,
            Phase::Combination,
            v.dim(),
            self.cfg.epsilon,
            h.samples_used,
        );
        Self::wrap(task, h.embed(&v))
    }

    fn fresh(&mut self, task: usize, step: usize) -> Result<Vector> {
        let eps_acc = self.cfg.eps_acc();
        let h = Self::wrap(task, self.learner.learn(&mut self.stream, task, eps_acc))?;
        self.samples.charge(
            task,
            Phase::Representation,
            self.cfg.d,
            eps_acc,
            h.samples_used,
        );
        self.features.raw_features.push(h.direction.clone());
        self.events.push(task);
        if self.event_steps.last() != Some(&step) {
            self.event_steps.push(step);
        }
        Ok(h.direction)
    }

    fn true_error(&self, h: &Vector, task: usize) -> Result<f64> {
        task_error_exact(h, task, &self.gt)
    }

    fn append_feature(&mut self, w: &Vector) -> Result<()> {
        let (next, _) = self.features.active_subspace.extend(w)?;
        self.remap(next)
    }

    /// Switches the active basis, re-expressing stored classifiers.
    fn remap(&mut self, next: Subspace) -> Result<()> {
        let hyps: Vec<Option<Vector>> = (0..self.cfg.m)
            .map(|t| self.features.hypothesis(t))
            .collect();
        self.features.active_subspace = next;
        for (t, h) in hyps.into_iter().enumerate() {
            if let Some(h) = h {
                self.features.store(t, &h);
            }
        }
        Ok(())
    }

    fn needs_refinement(&self) -> bool {
        match self.cfg.refine_every {
            RefineTrigger::OnNewFeature => true,
            RefineTrigger::Threshold(r_max) => self.features.active_subspace.dim() > r_max,
        }
    }

    /// Refines the raw features, migrates classifiers and repairs violations.
    fn refine(&mut self, step: usize, mut pending: Vec<(usize, Vector)>) -> Result<()> {
        let cfg = self.cfg;
        let opts = RefineOptions {
            solver: cfg.solver,
            c: 2,
        };
        // Distance counterpart of the feature accuracy: error e means angle pi e.
        let dist_acc = (PI * cfg.eps_acc()).sin().min(0.999);
        for round in 0..=MAX_REFINE_ROUNDS {
            let mut hyps: Vec<Option<Vector>> =
                (0..cfg.m).map(|t| self.features.hypothesis(t)).collect();
            for (t, h) in pending.drain(..) {
                hyps[t] = Some(h);
            }
            let raw = &self.features.raw_features;
            let (v, cert) = match cfg.rr_rounding {
                RrRounding::Full => refine_with(raw, cfg.k, dist_acc, &opts)?,
                RrRounding::Minimal => {
                    refine_minimal(raw, cfg.k, std::f64::consts::SQRT_2 * dist_acc, &opts)?
                }
            };
            self.features.active_subspace = v;
            for (t, h) in hyps.iter().enumerate() {
                self.features.classifiers[t] = None;
                if let Some(h) = h {
                    self.features.store(t, h);
                }
            }

            let mut relearned = 0;
            let mut failing = Vec::new();
            let seen = self.seen.clone();
            for &t in &seen {
                let ok = match self.features.hypothesis(t) {
                    Some(h) => self.passes(&h, t)?,
                    None => false,
                };
                if ok {
                    continue;
                }
                relearned += 1;
                let h = self.restricted(t)?;
                if self.passes(&h, t)? {
                    self.features.store(t, &h);
                } else {
                    failing.push(t);
                }
            }
            self.refinements.push(RefinementEvent {
                step,
                raw_features: self.features.raw_features.len(),
                dims: self.features.active_subspace.dim(),
                max_distance: cert.max_distance,
                approx_bound: cert.approx_bound,
                sdp_value: cert.sdp_value,
                converged: cert.converged,
                relearned,
            });
            if failing.is_empty() {
                return Ok(());
            }
            if round == MAX_REFINE_ROUNDS {
                for t in failing {
                    let error = match self.features.hypothesis(t) {
                        Some(h) => self.true_error(&h, t)?,
                        None => 0.5,
                    };
                    self.violations.push(Violation {
                        task: t,
                        step,
                        error,
                    });
                }
                return Ok(());
            }
            for t in failing {
                let w = self.fresh(t, step)?;
                pending.push((t, w));
            }
        }
        Ok(())
    }

    fn step(&mut self, step: usize, task: usize, refine: bool) -> Result<()> {
        self.seen.push(task);
        if !self.features.active_subspace.is_empty() {
            let h = self.restricted(task)?;
            if self.passes(&h, task)? {
                self.features.store(task, &h);
                return Ok(());
            }
        }
        let w = self.fresh(task, step)?;
        self.append_feature(&w)?;
        self.features.store(task, &w);
        if refine && self.needs_refinement() {
            self.refine(step, Vec::new())?;
        } else if self.cfg.check_mode == CheckMode::Oracle {
            let e = self.true_error(&w, task)?;
            if e > self.cfg.epsilon {
                self.violations.push(Violation {
                    task,
                    step,
                    error: e,
                });
            }
        }
        Ok(())
    }

    fn run(mut self, mode: Mode) -> Result<RunReport> {
        let start = Instant::now();
        let m = self.cfg.m;
        let mut curves = Curves::default();
        let order = self.stream.order().to_vec();
        for (step, &task) in order.iter().enumerate() {
            self.step(step, task, mode == Mode::Rr)?;
            let errors: Vec<f64> = self
                .seen
                .iter()
                .map(|&t| match self.features.hypothesis(t) {
                    Some(h) => self.true_error(&h, t),
                    None => Ok(0.5),
                })
                .collect::<Result<_>>()?;
            let step_error = *errors.last().expect("task just recorded");
            curves.push(
                task,
                step_error,
                &errors,
                self.features.active_subspace.dim(),
                max_principal_angle(&self.features.active_subspace, &self.truth)?,
                self.samples.total(),
            );
        }
        let per_task_error = (0..m)
            .map(|t| match self.features.hypothesis(t) {
                Some(h) => self.true_error(&h, t),
                None => Ok(0.5),
            })
            .collect::<Result<_>>()?;
        let gamma_dim = if self.features.raw_features.is_empty() {
            0
        } else {
            gamma_effective_dimension(&self.features.raw_features, self.cfg.gamma())?
        };
        Ok(curves.finish(
            ReportHead {
                mode,
                trial: self.trial,
                seed: self.seed,
                epsilon: self.cfg.epsilon,
                c_s: self.cfg.c_s,
                k: self.cfg.k,
            },
            per_task_error,
            self.events,
            self.event_steps,
            self.samples,
            self.refinements,
            self.violations,
            gamma_dim,
            self.features.active_subspace,
            start.elapsed(),
        ))
    }
}

struct ReportHead {
    mode: Mode,
    trial: usize,
    seed: u64,
    epsilon: f64,
    c_s: f64,
    k: usize,
}

#[derive(Default)]
struct Curves {
    step_task: Vec<usize>,
    step_error: Vec<f64>,
    acc: Vec<f64>,
    min_acc: Vec<f64>,
    dims: Vec<usize>,
    angles: Vec<f64>,
    samples: Vec<u64>,
}

impl Curves {
    fn push(
        &mut self,
        task: usize,
        step_error: f64,
        errors: &[f64],
        dim: usize,
        angle: f64,
        samples: u64,
    ) {
        let n = errors.len() as f64;
        self.step_task.push(task);
        self.step_error.push(step_error);
        self.acc
            .push(errors.iter().map(|e| 1.0 - e).sum::<f64>() / n);
        self.min_acc
            .push(errors.iter().map(|e| 1.0 - e).fold(f64::INFINITY, f64::min));
        self.dims.push(dim);
        self.angles.push(angle);
        self.samples.push(samples);
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        head: ReportHead,
        per_task_error: Vec<f64>,
        events: Vec<usize>,
        event_steps: Vec<usize>,
        ledger: SampleLedger,
        refinements: Vec<RefinementEvent>,
        violations: Vec<Violation>,
        gamma_effective_dim: usize,
        final_subspace: Subspace,
        wall_time: Duration,
    ) -> RunReport {
        let rep = ledger.phase_total(Phase::Representation);
        let comb = ledger.phase_total(Phase::Combination);
        let chk = ledger.phase_total(Phase::Check);
        RunReport {
            mode: head.mode,
            trial: head.trial,
            seed: head.seed,
            epsilon: head.epsilon,
            c_s: head.c_s,
            k: head.k,
            per_task_error,
            step_task: self.step_task,
            step_error: self.step_error,
            accuracy_curve: self.acc,
            min_accuracy_curve: self.min_acc,
            feature_dim_curve: self.dims,
            new_feature_events: events,
            new_feature_steps: event_steps,
            angle_curve: self.angles,
            samples_curve: self.samples,
            samples_total: ledger.total(),
            samples_per_phase: (rep, comb),
            samples_check: chk,
            ledger,
            refinements,
            violations,
            gamma_effective_dim,
            final_subspace,
            wall_time,
        }
    }
}

/// Basic LLL on trial 0 of `config`.
pub fn run_basic_lll(config: &RunConfig) -> Result<RunReport> {
    run_trial(config, Mode::Basic, 0)
}

/// LLL with representation refinement on trial 0 of `config`.
pub fn run_lll_rr(config: &RunConfig) -> Result<RunReport> {
    run_trial(config, Mode::Rr, 0)
}

/// Joint-training baseline on trial 0 of `config`.
pub fn run_joint(config: &RunConfig) -> Result<RunReport> {
    run_trial(config, Mode::Joint, 0)
}

/// Runs one trial in `mode`, ignoring `config.mode`.
pub fn run_trial(config: &RunConfig, mode: Mode, trial: usize) -> Result<RunReport> {
    let cfg = RunConfig {
        mode,
        ..config.clone()
    };
    cfg.validate()?;
    let seed = cfg.trial_seed(trial);
    let gt = Arc::new(generate_problem(cfg.d, cfg.k, cfg.m, seed)?);
    run_on_problem(&cfg, mode, gt, seed, trial)
}

/// Runs `mode` on a given problem; the task stream is seeded with `seed`.
///
/// `config.d`, `k` and `m` must match the problem.
pub fn run_on_problem(
    config: &RunConfig,
    mode: Mode,
    gt: Arc<GroundTruth>,
    seed: u64,
    trial: usize,
) -> Result<RunReport> {
    let cfg = RunConfig {
        mode,
        ..config.clone()
    };
    cfg.validate()?;
    if (gt.d(), gt.k(), gt.m()) != (cfg.d, cfg.k, cfg.m) {
        return Err(Error::InvalidDimensions(format!(
            "problem has (d, k, m) = ({}, {}, {}), config has ({}, {}, {})",
            gt.d(),
            gt.k(),
            gt.m(),
            cfg.d,
            cfg.k,
            cfg.m
        )));
    }
    match mode {
        Mode::Basic | Mode::Rr => Runner::new(&cfg, trial, seed, gt)?.run(mode),
        Mode::Joint => joint(&cfg, trial, seed, gt),
    }
}

/// All `config.trials` trials of `config.mode`, in parallel on the current
/// rayon pool; results are in trial order and independent of scheduling.
pub fn run_trials(config: &RunConfig) -> Result<Vec<RunReport>> {
    config.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, config.mode, t))
        .collect()
}

fn joint(cfg: &RunConfig, trial: usize, seed: u64, gt: Arc<GroundTruth>) -> Result<RunReport> {
    let start = Instant::now();
    let truth = gt.task_subspace();
    let mut stream = TaskStream::new(Arc::clone(&gt), seed);
    let order = stream.order().to_vec();
    let n = cfg.n_per_task;
    let mut ledger = SampleLedger::default();
    let mut batches = Vec::with_capacity(cfg.m);
    let mut estimates = Vec::with_capacity(cfg.m);
    for &task in &order {
        let batch = Runner::wrap(task, stream.sample_matrix(task, n))?;
        ledger.charge(task, Phase::Representation, 0, cfg.epsilon, n as u64);
        estimates.push(fit_direction(&batch.xs, &batch.ys, cfg.perceptron_passes));
        batches.push(batch);
    }

    let mut curves = Curves::default();
    let mut final_v = Subspace::empty(cfg.d);
    let mut final_errors = vec![0.5; cfg.m];
    for i in 0..order.len() {
        let v = top_subspace(&estimates[..=i], cfg.k)?;
        let mut errors = Vec::with_capacity(i + 1);
        for (j, &task) in order[..=i].iter().enumerate() {
            let coords = v.basis().tr_mul(&batches[j].xs);
            let c = fit_direction(&coords, &batches[j].ys, cfg.perceptron_passes);
            let h = normalize(&v.embed(&c)?)?;
            errors.push(task_error_exact(&h, task, &gt)?);
        }
        if i + 1 == order.len() {
            for (j, &task) in order.iter().enumerate() {
                final_errors[task] = errors[j];
            }
        }
        let angle = max_principal_angle(&v, &truth)?;
        curves.push(
            order[i],
            errors[i],
            &errors,
            v.dim(),
            angle,
            n as u64 * (i as u64 + 1),
        );
        final_v = v;
    }
    let gamma_dim = gamma_effective_dimension(&estimates, cfg.gamma())?;
    Ok(curves.finish(
        ReportHead {
            mode: Mode::Joint,
            trial,
            seed,
            epsilon: cfg.epsilon,
            c_s: cfg.c_s,
            k: cfg.k,
        },
        final_errors,
        Vec::new(),
        Vec::new(),
        ledger,
        Vec::new(),
        Vec::new(),
        gamma_dim,
        final_v,
        start.elapsed(),
    ))
}

/// Span of the top `k` right singular vectors of the stacked estimates.
fn top_subspace(estimates: &[Vector], k: usize) -> Result<Subspace> {
    let d = estimates[0].len();
    let stacked = DMatrix::from_columns(estimates);
    // Eigenvectors of the d x d Gram matrix equal the left singular vectors of
    // the d x n stack, i.e. the right singular vectors of its transpose.
    let gram = &stacked * stacked.transpose();
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let r = k.min(estimates.len()).min(d);
    let cols: Vec<Vector> = order[..r]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    crate::geometry::orthonormalize(&cols)
}

/// Mean and population standard deviation of every curve across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub step: usize,
    pub avg_acc: (f64, f64),
    pub min_acc: (f64, f64),
    pub feature_dim: (f64, f64),
    pub angle: (f64, f64),
    pub samples_cum: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub mode: Mode,
    pub trials: usize,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn csv_header() -> &'static str {
        "mode,step,trials,avg_acc_mean,avg_acc_std,min_acc_mean,min_acc_std,feature_dim_mean,feature_dim_std,angle_mean,angle_std,samples_cum_mean,samples_cum_std"
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{:.9},{:.9},{:.3},{:.3}",
                self.mode,
                r.step,
                self.trials,
                r.avg_acc.0,
                r.avg_acc.1,
                r.min_acc.0,
                r.min_acc.1,
                r.feature_dim.0,
                r.feature_dim.1,
                r.angle.0,
                r.angle.1,
                r.samples_cum.0,
                r.samples_cum.1,
            );
        }
        out
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation across reports of one mode.
pub fn evaluate_report(reports: &[RunReport]) -> Result<SummaryTable> {
    let first = reports.first().ok_or(Error::EmptyInput("reports"))?;
    let len = first.accuracy_curve.len();
    for r in reports {
        if r.accuracy_curve.len() != len || r.mode != first.mode {
            return Err(invalid(
                "reports",
                format!(
                    "mismatched curves: {} {} steps vs {} {} steps",
                    first.mode,
                    len,
                    r.mode,
                    r.accuracy_curve.len()
                ),
            ));
        }
    }
    let rows = (0..len)
        .map(|i| SummaryRow {
            step: i,
            avg_acc: mean_std(reports.iter().map(|r| r.accuracy_curve[i])),
            min_acc: mean_std(reports.iter().map(|r| r.min_accuracy_curve[i])),
            feature_dim: mean_std(reports.iter().map(|r| r.feature_dim_curve[i] as f64)),
            angle: mean_std(reports.iter().map(|r| r.angle_curve[i])),
            samples_cum: mean_std(reports.iter().map(|r| r.samples_curve[i] as f64)),
        })
        .collect();
    Ok(SummaryTable {
        mode: first.mode,
        trials: reports.len(),
        rows,
    })
}

/// All trials of one grid point of a parameter sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub d: usize,
    pub epsilon: f64,
    pub reports: Vec<RunReport>,
}

impl SweepPoint {
    pub fn mean_samples(&self) -> f64 {
        self.reports
            .iter()
            .map(|r| r.samples_total as f64)
            .sum::<f64>()
            / self.reports.len() as f64
    }
}

fn sweep(
    config: &RunConfig,
    points: impl Iterator<Item = (usize, f64)>,
) -> Result<Vec<SweepPoint>> {
    points
        .map(|(d, epsilon)| {
            let cfg = RunConfig {
                d,
                epsilon,
                ..config.clone()
            };
            Ok(SweepPoint {
                d,
                epsilon,
                reports: run_trials(&cfg)?,
            })
        })
        .collect()
}

/// Runs `config` once per ambient dimension in `dims`.
pub fn sweep_dimension(config: &RunConfig, dims: &[usize]) -> Result<Vec<SweepPoint>> {
    if dims.is_empty() {
        return Err(Error::EmptyInput("dimension grid"));
    }
    sweep(config, dims.iter().map(|&d| (d, config.epsilon)))
}

/// Runs `config` once per target error in `epsilons`.
pub fn sweep_epsilon(config: &RunConfig, epsilons: &[f64]) -> Result<Vec<SweepPoint>> {
    if epsilons.is_empty() {
        return Err(Error::EmptyInput("epsilon grid"));
    }
    sweep(config, epsilons.iter().map(|&e| (config.d, e)))
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(invalid("grid", "a fit needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("grid", "all x values coincide"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// For adjacent sweep points, `(S_{j+1} / S_j) / (eps_j / eps_{j+1})`: 1 when
/// mean samples are exactly proportional to `1 / epsilon`.
pub fn inverse_eps_ratios(points: &[SweepPoint]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| (w[1].mean_samples() / w[0].mean_samples()) / (w[0].epsilon / w[1].epsilon))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::GroundTruth;

    fn small(mode: Mode) -> RunConfig {
        RunConfig {
            d: 20,
            k: 2,
            m: 12,
            n_per_task: 100,
            trials: 2,
            mode,
            ..RunConfig::default()
        }
    }

    #[test]
    fn single_task_learns_one_feature() {
        for mode in [Mode::Basic, Mode::Rr] {
            let cfg = RunConfig {
                m: 1,
                k: 1,
                ..small(mode)
            };
            let r = run_trial(&cfg, mode, 0).unwrap();
            assert_eq!(r.new_feature_events, vec![0]);
            assert_eq!(r.feature_dim_curve, vec![1]);
            assert!(r.invariant_failures(CheckMode::Oracle).is_empty());
        }
    }

    #[test]
    fn identical_tasks_need_one_feature() {
        let cfg = small(Mode::Basic);
        let w = DMatrix::from_fn(cfg.k, cfg.d, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let c = DMatrix::from_fn(cfg.m, cfg.k, |_, j| 1.0 + j as f64);
        let gt = Arc::new(GroundTruth::from_parts(9, w, c).unwrap());
        for mode in [Mode::Basic, Mode::Rr] {
            let r = run_on_problem(&cfg, mode, Arc::clone(&gt), 4, 0).unwrap();
            assert_eq!(r.new_feature_events.len(), 1, "{mode}");
            assert!(r.feature_dim_curve.iter().all(|&d| d == 1));
        }
    }

    #[test]
    fn rank_one_tasks_stay_one_dimensional_under_refinement() {
        let cfg = RunConfig {
            k: 1,
            ..small(Mode::Rr)
        };
        let r = run_trial(&cfg, Mode::Rr, 0).unwrap();
        assert!(
            r.feature_dim_curve.iter().all(|&d| d == 1),
            "{:?}",
            r.feature_dim_curve
        );
    }

    #[test]
    fn contracts_hold_in_both_check_modes() {
        for check_mode in [CheckMode::Oracle, CheckMode::MonteCarlo] {
            for mode in [Mode::Basic, Mode::Rr] {
                let cfg = RunConfig {
                    check_mode,
                    ..small(mode)
                };
                let r = run_trial(&cfg, mode, 1).unwrap();
                let failures = r.invariant_failures(check_mode);
                assert!(failures.is_empty(), "{mode} {check_mode:?}: {failures:?}");
                let (rep, comb) = r.samples_per_phase;
                assert_eq!(r.samples_total, rep + comb + r.samples_check);
                if check_mode == CheckMode::Oracle {
                    assert_eq!(r.samples_check, 0);
                    assert!(r.final_min_accuracy() >= 1.0 - cfg.epsilon);
                } else {
                    assert!(r.samples_check > 0);
                }
                if mode == Mode::Rr {
                    assert!(r.max_dim() < 2 * cfg.k);
                }
            }
        }
    }

    #[test]
    fn threshold_trigger_defers_refinement() {
        let cfg = RunConfig {
            refine_every: RefineTrigger::Threshold(50),
            ..small(Mode::Rr)
        };
        let r = run_trial(&cfg, Mode::Rr, 0).unwrap();
        assert!(r.refinements.is_empty());
        let basic = run_trial(&cfg, Mode::Basic, 0).unwrap();
        assert_eq!(r.feature_dim_curve, basic.feature_dim_curve);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small(Mode::Rr);
        let a = run_trial(&cfg, Mode::Rr, 0).unwrap();
        let b = run_trial(&cfg, Mode::Rr, 0).unwrap();
        assert_eq!(a.csv_rows(), b.csv_rows());
        let par = run_trials(&cfg).unwrap();
        assert_eq!(par[0].csv_rows(), a.csv_rows());
    }

    #[test]
    fn joint_rank_is_capped_by_tasks_seen() {
        let cfg = RunConfig {
            k: 4,
            ..small(Mode::Joint)
        };
        let r = run_trial(&cfg, Mode::Joint, 0).unwrap();
        for (i, &d) in r.feature_dim_curve.iter().enumerate() {
            assert_eq!(d, (i + 1).min(cfg.k));
        }
        assert_eq!(r.samples_total, (cfg.m * cfg.n_per_task) as u64);
    }

    #[test]
    fn joint_with_many_samples_recovers_subspace() {
        let cfg = RunConfig {
            n_per_task: 20_000,
            ..small(Mode::Joint)
        };
        let r = run_trial(&cfg, Mode::Joint, 0).unwrap();
        assert!(r.final_angle() < 0.1, "{}", r.final_angle());
    }

    #[test]
    fn summary_of_one_report_is_the_report() {
        let r = run_trial(&small(Mode::Basic), Mode::Basic, 0).unwrap();
        let table = evaluate_report(std::slice::from_ref(&r)).unwrap();
        for (row, acc) in table.rows.iter().zip(&r.accuracy_curve) {
            assert_eq!(row.avg_acc, (*acc, 0.0));
        }
        assert!(evaluate_report(&[]).is_err());
        let other = run_trial(
            &RunConfig {
                m: 5,
                ..small(Mode::Basic)
            },
            Mode::Basic,
            0,
        )
        .unwrap();
        assert!(evaluate_report(&[r, other]).is_err());
    }

    #[test]
    fn linear_fit_recovers_exact_lines() {
        let f = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let noisy = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((noisy.r2 - 0.2).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn epsilon_sweep_costs_more_at_smaller_epsilon() {
        let cfg = RunConfig {
            trials: 1,
            ..small(Mode::Basic)
        };
        let points = sweep_epsilon(&cfg, &[0.2, 0.1, 0.05]).unwrap();
        assert!(points
            .windows(2)
            .all(|w| w[1].mean_samples() > w[0].mean_samples()));
        assert_eq!(inverse_eps_ratios(&points).len(), 2);
        let dims = sweep_dimension(&cfg, &[20]).unwrap();
        assert_eq!(dims[0].reports.len(), 1);
        assert!(sweep_dimension(&cfg, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!((RunConfig::default().eps_acc() - 0.1 / (2.0 * 5f64.sqrt())).abs() < 1e-15);
        assert!(RunConfig {
            epsilon: 0.5,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            epsilon_acc: Some(0.2),
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            k: 0,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            k: 101,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            trials: 0,
            ..RunConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn enums_round_trip_through_text() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        for t in [RefineTrigger::OnNewFeature, RefineTrigger::Threshold(9)] {
            assert_eq!(t.to_string().parse::<RefineTrigger>().unwrap(), t);
        }
        assert!("sometimes".parse::<RefineTrigger>().is_err());
        assert!("threshold(x)".parse::<RefineTrigger>().is_err());
        assert_eq!(
            "minimal".parse::<RrRounding>().unwrap(),
            RrRounding::Minimal
        );
    }
}
