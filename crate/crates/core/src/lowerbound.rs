//! The adversarial construction behind the `d k^1.5 / eps` lower bound.
//!
//! The first `k` tasks are the coordinate vectors `e_1..e_k` of `R^{k+1}`; an
//! adversarial learner answers task `i` with `e_i + eps_i e_{k+1}`, so all errors
//! pile up on the spare coordinate. Later tasks are 0/1 combinations of a subset
//! `S` of the basis. They sit at a fixed angle from the learned span, and
//! learning them adversarially adds nothing to it. The only way to reach error
//! `eps` on all of them is `sum eps_i^2 <= eps^2`, which by Hölder costs at least
//! `d k^1.5 / eps` samples.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{basis_vector, max_principal_angle, normalize, Subspace, Vector};
use crate::learner::adversarial_learn;
use crate::rng::{substream, tag};

/// Largest `|S|` accepted by [`exhaustive_exceedance`].
pub const MAX_EXHAUSTIVE: usize = 24;

const REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundInstance {
    pub k: usize,
    /// Always `k + 1`.
    pub d: usize,
    pub seed: u64,
    /// Per basis-task learner errors.
    pub eps_vector: Vec<f64>,
    /// Zero-based, sorted indices of the basis tasks the random tasks combine.
    pub subset: Vec<usize>,
    pub basis_tasks: Vec<Vector>,
    /// Unit vectors `normalize(sum_{i in S} x_i e_i)`.
    pub random_tasks: Vec<Vector>,
}

impl LowerBoundInstance {
    /// The adversarial learner's answers `e_i + eps_i e_{k+1}` (normalized) for `i in S`.
    pub fn learned_features(&self) -> Result<Vec<Vector>> {
        self.subset
            .iter()
            .map(|&i| adversarial_learn(&self.basis_tasks[i], self.eps_vector[i], self.k))
            .collect()
    }

    /// `V = span{ a_hat_i : i in S }`.
    pub fn learned_span(&self) -> Result<Subspace> {
        Subspace::span(&self.learned_features()?)
    }

    /// `sum_{i in S} eps_i^2`.
    pub fn subset_energy(&self) -> f64 {
        self.subset
            .iter()
            .map(|&i| self.eps_vector[i].powi(2))
            .sum()
    }

    /// `(1/16) sqrt(sum_{i in S} eps_i^2)`.
    pub fn angle_threshold(&self) -> f64 {
        self.subset_energy().sqrt() / 16.0
    }

    /// Angle between a vector supported on `S` and `V`, in closed form:
    /// `sin theta = |s^T x| / (|x| sqrt(1 + |s|^2))`.
    pub fn angle_to_learned_span(&self, x: &Vector) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: x.len(),
            });
        }
        let norm = x.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        let dot: f64 = self.subset.iter().map(|&i| self.eps_vector[i] * x[i]).sum();
        let sin = dot.abs() / (norm * (1.0 + self.subset_energy()).sqrt());
        Ok(sin.min(1.0).asin())
    }

    /// What the adversarial learner returns for a task `x` supported on `S`:
    /// `(x, s^T x)` normalized, which lies in `V`.
    pub fn adversarial_feature(&self, x: &Vector) -> Result<Vector> {
        let mut out = x.clone();
        out[self.k] = self.subset.iter().map(|&i| self.eps_vector[i] * x[i]).sum();
        normalize(&out)
    }

    /// Random task `j`; tasks `0..n_random` are the ones stored on the instance.
    pub fn random_task(&self, j: usize) -> Vector {
        draw_random_task(self.seed, self.d, &self.subset, j)
    }

    /// Errors unless `eps_i <= 2 sqrt(sum_S eps^2 / |S|)` for every `i in S`.
    pub fn check_balance(&self) -> Result<()> {
        let rms = (self.subset_energy() / self.subset.len() as f64).sqrt();
        for &i in &self.subset {
            if self.eps_vector[i] > 2.0 * rms * (1.0 + REL_TOL) {
                return Err(Error::HypothesisViolated(format!(
                    "eps[{i}] = {} exceeds twice the subset RMS {rms}",
                    self.eps_vector[i]
                )));
            }
        }
        Ok(())
    }
}

fn draw_random_task(seed: u64, d: usize, subset: &[usize], j: usize) -> Vector {
    let mut rng = substream(seed, &[tag::LOWER_BOUND, j as u64]);
    loop {
        let mut x = Vector::zeros(d);
        for &i in subset {
            if rng.random::<bool>() {
                x[i] = 1.0;
            }
        }
        let norm = x.norm();
        if norm > 0.0 {
            return x / norm;
        }
    }
}

fn check_eps_vector(eps: &[f64]) -> Result<()> {
    for (i, &e) in eps.iter().enumerate() {
        if !(0.0..0.5).contains(&e) {
            return Err(invalid(
                "eps_vector",
                format!("entry {i} = {e} outside [0, 1/2)"),
            ));
        }
    }
    Ok(())
}

/// Builds the instance with `S` chosen as in the lower-bound argument
/// ([`proof_subset`]).
pub fn build_instance(
    k: usize,
    n_random: usize,
    seed: u64,
    eps_vector: &[f64],
) -> Result<LowerBoundInstance> {
    check_eps_vector(eps_vector)?;
    let subset = proof_subset(eps_vector)?;
    build_instance_on(k, n_random, seed, eps_vector, subset)
}

/// Builds the instance on an explicit subset `S` (zero-based indices).
pub fn build_instance_on(
    k: usize,
    n_random: usize,
    seed: u64,
    eps_vector: &[f64],
    mut subset: Vec<usize>,
) -> Result<LowerBoundInstance> {
    if k < 2 {
        return Err(invalid("k", format!("need k >= 2, got {k}")));
    }
    if eps_vector.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: eps_vector.len(),
        });
    }
    check_eps_vector(eps_vector)?;
    subset.sort_unstable();
    subset.dedup();
    if subset.is_empty() {
        return Err(Error::EmptyInput("subset"));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= k) {
        return Err(invalid("subset", format!("index {i} outside [0, {k})")));
    }
    let d = k + 1;
    let random_tasks = (0..n_random)
        .map(|j| draw_random_task(seed, d, &subset, j))
        .collect();
    Ok(LowerBoundInstance {
        k,
        d,
        seed,
        eps_vector: eps_vector.to_vec(),
        subset,
        basis_tasks: (0..k).map(|i| basis_vector(d, i)).collect(),
        random_tasks,
    })
}

/// The subset used against a given allocation.
///
/// Keeps the tasks with `eps_i >= sqrt(2 sum eps^2 / 3k)`. When at least `3k/4`
/// survive, they satisfy the balanced-subset hypothesis with `C = sqrt 2` and are
/// filtered with `p = 1/3`. Otherwise (the allocation is already expensive)
/// all of `[k]` is filtered with the factor 2 the angle bound needs.
pub fn proof_subset(eps: &[f64]) -> Result<Vec<usize>> {
    if eps.is_empty() {
        return Err(Error::EmptyInput("eps_vector"));
    }
    let k = eps.len();
    let total: f64 = eps.iter().map(|e| e * e).sum();
    let cut = (2.0 * total / (3.0 * k as f64)).sqrt();
    let large: Vec<usize> = (0..k)
        .filter(|&i| eps[i] >= cut * (1.0 - REL_TOL))
        .collect();
    if 4 * large.len() >= 3 * k {
        let b: Vec<f64> = large.iter().map(|&i| eps[i]).collect();
        let report = find_balanced_subset(&b, 1.0 / 3.0, SQRT_2)?;
        Ok(report.subset.iter().map(|&j| large[j]).collect())
    } else {
        let all: Vec<usize> = (0..k).collect();
        Ok(filter_to_fixpoint(eps, all, 2.0).0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetReport {
    /// Zero-based indices into `b`.
    pub subset: Vec<usize>,
    pub p: f64,
    pub c: f64,
    /// `sqrt((1/p) ln(C^2 / (1 - p)))`.
    pub gamma: f64,
    /// Filtering passes, including the final one that changes nothing.
    pub iterations: usize,
}

fn rms(b: &[f64], s: &[usize]) -> f64 {
    (s.iter().map(|&i| b[i] * b[i]).sum::<f64>() / s.len() as f64).sqrt()
}

fn filter_to_fixpoint(b: &[f64], mut s: Vec<usize>, gamma: f64) -> (Vec<usize>, usize) {
    let mut iterations = 0;
    loop {
        iterations += 1;
        let bound = gamma * rms(b, &s);
        let next: Vec<usize> = s.iter().copied().filter(|&i| b[i] <= bound).collect();
        if next.len() == s.len() {
            return (s, iterations);
        }
        s = next;
    }
}

/// Repeatedly drops entries above `gamma` times the RMS of the survivors.
///
/// Requires `b_i >= b_bar / C` with `b_bar` the RMS of all of `b`; the result
/// then keeps at least `k (1 - p)` entries.
pub fn find_balanced_subset(b: &[f64], p: f64, c: f64) -> Result<SubsetReport> {
    if b.is_empty() {
        return Err(Error::EmptyInput("b"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(c > 1.0) || !c.is_finite() {
        return Err(invalid("C", format!("must be finite and > 1, got {c}")));
    }
    if let Some(x) = b.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(invalid(
            "b",
            format!("entries must be finite and nonnegative, found {x}"),
        ));
    }
    let all: Vec<usize> = (0..b.len()).collect();
    let floor = rms(b, &all) / c;
    if let Some(i) = all
        .iter()
        .copied()
        .find(|&i| b[i] < floor * (1.0 - REL_TOL))
    {
        return Err(Error::HypothesisViolated(format!(
            "b[{i}] = {} is below RMS / C = {floor}",
            b[i]
        )));
    }
    let gamma = ((c * c / (1.0 - p)).ln() / p).sqrt();
    let (subset, iterations) = filter_to_fixpoint(b, all, gamma);
    Ok(SubsetReport {
        subset,
        p,
        c,
        gamma,
        iterations,
    })
}

/// Largest principal angle between `span{e_i + eps_i e_{k+1}}` and
/// `span{e_1..e_k}`; equals `arctan |eps|`.
pub fn adversarial_subspace_angle(eps_vector: &[f64]) -> Result<f64> {
    if eps_vector.is_empty() {
        return Err(Error::EmptyInput("eps_vector"));
    }
    check_eps_vector(eps_vector)?;
    let k = eps_vector.len();
    let learned: Vec<Vector> = eps_vector
        .iter()
        .enumerate()
        .map(|(i, &e)| adversarial_learn(&basis_vector(k + 1, i), e, k))
        .collect::<Result<_>>()?;
    let axes: Vec<usize> = (0..k).collect();
    max_principal_angle(
        &Subspace::span(&learned)?,
        &Subspace::coordinate(k + 1, &axes)?,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleStats {
    /// Angle of random task `j` to the learned span, for `j in 0..trials`.
    pub angles: Vec<f64>,
    pub threshold: f64,
    pub exceed_fraction: f64,
    /// `1 - exp(-|S| / 128)`.
    pub predicted_floor: f64,
    pub subset_size: usize,
}

impl AngleStats {
    pub fn csv_header() -> &'static str {
        "task,angle,threshold,exceeds"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.angles
            .iter()
            .enumerate()
            .map(|(j, a)| {
                format!(
                    "{j},{a:.12e},{:.12e},{}",
                    self.threshold,
                    u8::from(*a >= self.threshold)
                )
            })
            .collect()
    }
}

/// Angles of `trials` random tasks to the learned span and the fraction at or
/// above `(1/16) sqrt(sum_S eps_i^2)`.
pub fn new_task_angle_stats(instance: &LowerBoundInstance, trials: usize) -> Result<AngleStats> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    instance.check_balance()?;
    let angles: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|j| instance.angle_to_learned_span(&instance.random_task(j)))
        .collect::<Result<_>>()?;
    let threshold = instance.angle_threshold();
    let hits = angles.iter().filter(|&&a| a >= threshold).count();
    let s = instance.subset.len();
    Ok(AngleStats {
        exceed_fraction: hits as f64 / trials as f64,
        angles,
        threshold,
        predicted_floor: 1.0 - (-(s as f64) / 128.0).exp(),
        subset_size: s,
    })
}

/// Exact exceedance probability over all nonzero 0/1 patterns on `S`.
pub fn exhaustive_exceedance(instance: &LowerBoundInstance) -> Result<f64> {
    let s = instance.subset.len();
    if s > MAX_EXHAUSTIVE {
        return Err(invalid(
            "subset",
            format!("|S| = {s} exceeds {MAX_EXHAUSTIVE}"),
        ));
    }
    let threshold = instance.angle_threshold();
    let hits: usize = (1u64..1 << s)
        .into_par_iter()
        .map(|mask| {
            let mut x = Vector::zeros(instance.d);
            for (bit, &i) in instance.subset.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    x[i] = 1.0;
                }
            }
            instance
                .angle_to_learned_span(&x)
                .map(|a| usize::from(a >= threshold))
        })
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / ((1u64 << s) - 1) as f64)
}

/// Sample cost of one allocation of per-basis-task errors.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLedger {
    pub d: usize,
    pub k: usize,
    pub eps_target: f64,
    pub allocation: Vec<f64>,
    /// `sum_i d / eps_i`.
    pub basis_cost: f64,
    /// `n_random * k / eps`.
    pub new_task_cost: f64,
    pub total: f64,
    /// `d k^1.5 / eps`.
    pub holder_bound: f64,
    /// `basis_cost / holder_bound`; at least 1 whenever the allocation is feasible.
    pub ratio: f64,
    /// `arctan |allocation|`, the angle between learned and true spans.
    pub final_angle: f64,
    /// `sum eps_i^2 <= eps^2`.
    pub feasible: bool,
}

impl SampleLedger {
    pub fn csv_header() -> &'static str {
        "allocation,basis_cost,new_task_cost,total,holder_bound,ratio,final_angle,feasible"
    }

    pub fn csv_row(&self) -> String {
        let alloc: Vec<String> = self.allocation.iter().map(|e| format!("{e:.6e}")).collect();
        format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.9},{:.9},{}",
            alloc.join(";"),
            self.basis_cost,
            self.new_task_cost,
            self.total,
            self.holder_bound,
            self.ratio,
            self.final_angle,
            u8::from(self.feasible)
        )
    }
}

/// `d k^1.5 / eps`: the cheapest feasible basis cost.
pub fn holder_minimum(d: usize, k: usize, eps: f64) -> f64 {
    d as f64 * (k as f64).powf(1.5) / eps
}

/// `eps_i = eps / sqrt(k)`, the allocation attaining [`holder_minimum`].
pub fn uniform_allocation(k: usize, eps: f64) -> Vec<f64> {
    vec![eps / (k as f64).sqrt(); k]
}

/// Costs `allocation` with input dimension `d` (the harness itself lives in
/// `R^{k+1}`; the cost scales linearly in `d`).
pub fn sample_complexity_ledger(
    instance: &LowerBoundInstance,
    d: usize,
    eps_target: f64,
    allocation: &[f64],
) -> Result<SampleLedger> {
    let k = instance.k;
    if d < instance.d {
        return Err(invalid(
            "d",
            format!("must be at least k + 1 = {}, got {d}", instance.d),
        ));
    }
    if !(eps_target > 0.0 && eps_target < 0.5) {
        return Err(invalid(
            "eps_target",
            format!("must lie in (0, 1/2), got {eps_target}"),
        ));
    }
    if allocation.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: allocation.len(),
        });
    }
    check_eps_vector(allocation)?;
    if allocation.contains(&0.0) {
        return Err(invalid("allocation", "zero error has infinite cost"));
    }
    let basis_cost: f64 = allocation.iter().map(|e| d as f64 / e).sum();
    let new_task_cost = instance.random_tasks.len() as f64 * k as f64 / eps_target;
    let holder_bound = holder_minimum(d, k, eps_target);
    let norm = allocation.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(SampleLedger {
        d,
        k,
        eps_target,
        allocation: allocation.to_vec(),
        basis_cost,
        new_task_cost,
        total: basis_cost + new_task_cost,
        holder_bound,
        ratio: basis_cost / holder_bound,
        final_angle: norm.atan(),
        feasible: norm <= eps_target * (1.0 + REL_TOL),
    })
}

/// Cheapest allocation on the grid `eps_i^2 = eps^2 n_i / G`, `n_i >= 1`,
/// `sum n_i = G`, with `G = k * resolution` so the uniform point is on the grid.
///
/// Returns the best allocation, its basis cost and the number of grid points.
pub fn allocation_grid_search(
    d: usize,
    k: usize,
    eps: f64,
    resolution: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    if k == 0 || resolution == 0 {
        return Err(invalid("k/resolution", "must be positive"));
    }
    let g = k * resolution;
    let mut parts = vec![0usize; k];
    let mut best = (Vec::new(), f64::INFINITY);
    let mut count = 0;
    fn rec(pos: usize, left: usize, parts: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
        let k = parts.len();
        if pos + 1 == k {
            parts[pos] = left;
            visit(parts);
            return;
        }
        for n in 1..=left - (k - pos - 1) {
            parts[pos] = n;
            rec(pos + 1, left - n, parts, visit);
        }
    }
    rec(0, g, &mut parts, &mut |n| {
        count += 1;
        let alloc: Vec<f64> = n
            .iter()
            .map(|&ni| eps * (ni as f64 / g as f64).sqrt())
            .collect();
        let cost: f64 = alloc.iter().map(|e| d as f64 / e).sum();
        if cost < best.1 {
            best = (alloc, cost);
        }
    });
    Ok((best.0, best.1, count))
}

/// The tight example for the refinement algorithm: features
/// `e_i + eps_acc e_k` (`i < k`) in `R^k` and new tasks
/// `sum_{i<k} alpha_i e_i / sqrt(k - 1)` with signs `alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct TightExample {
    pub k: usize,
    pub eps_acc: f64,
    /// Best achievable error from the feature span, over all sign patterns.
    pub max_error: f64,
    /// Same, averaged uniformly over sign patterns.
    pub mean_error: f64,
}

/// Exact error profile of the tight example; the error of a pattern depends
/// only on `sum alpha_i`, so patterns are grouped by their number of `+1`s.
pub fn tight_example(k: usize, eps_acc: f64) -> Result<TightExample> {
    if k < 2 {
        return Err(invalid("k", format!("need k >= 2, got {k}")));
    }
    if !(0.0..1.0).contains(&eps_acc) {
        return Err(invalid(
            "eps_acc",
            format!("must lie in [0, 1), got {eps_acc}"),
        ));
    }
    let n = k - 1;
    let error = |plus: usize| {
        let sum = 2.0 * plus as f64 - n as f64;
        let sin =
            eps_acc * sum.abs() / ((n as f64).sqrt() * (1.0 + n as f64 * eps_acc * eps_acc).sqrt());
        sin.min(1.0).asin() / PI
    };
    // ln C(n, j) accumulated in log space so large k does not overflow.
    let mut log_binom = 0.0;
    let mut mean = 0.0;
    for j in 0..=n {
        if j > 0 {
            log_binom += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        mean += (log_binom - n as f64 * std::f64::consts::LN_2).exp() * error(j);
    }
    Ok(TightExample {
        k,
        eps_acc,
        max_error: error(n),
        mean_error: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_vec_to_subspace;

    #[test]
    fn small_instance_layout() {
        let inst = build_instance(2, 3, 1, &[0.1, 0.1]).unwrap();
        assert_eq!(inst.d, 3);
        assert_eq!(
            inst.basis_tasks,
            vec![basis_vector(3, 0), basis_vector(3, 1)]
        );
        assert_eq!(inst.subset, vec![0, 1]);
        for t in &inst.random_tasks {
            assert!((t.norm() - 1.0).abs() < 1e-15);
            assert_eq!(t[2], 0.0);
        }
        assert_eq!(
            build_instance(16, 256, 0, &[0.02; 16])
                .unwrap()
                .random_tasks
                .len(),
            256
        );
        assert!(build_instance(1, 1, 0, &[0.1]).is_err());
        assert!(build_instance(2, 1, 0, &[0.1, 0.5]).is_err());
        assert!(build_instance(2, 1, 0, &[0.1]).is_err());
    }

    #[test]
    fn random_tasks_never_vanish() {
        // With |S| = 1 half the draws are zero and must be redrawn.
        let inst = build_instance_on(3, 200, 5, &[0.1; 3], vec![1]).unwrap();
        for t in &inst.random_tasks {
            assert_eq!(*t, basis_vector(4, 1));
        }
    }

    #[test]
    fn closed_form_angle_matches_projection() {
        let eps = [0.05, 0.2, 0.1, 0.15, 0.12];
        let inst = build_instance_on(5, 40, 3, &eps, vec![0, 1, 3, 4]).unwrap();
        let v = inst.learned_span().unwrap();
        for t in &inst.random_tasks {
            let direct = angle_vec_to_subspace(t, &v).unwrap();
            assert!((inst.angle_to_learned_span(t).unwrap() - direct).abs() < 1e-12);
            let learned = inst.adversarial_feature(t).unwrap();
            assert!(v.dist(&learned).unwrap() < 1e-12);
        }
    }

    #[test]
    fn lemma_examples() {
        assert!(adversarial_subspace_angle(&[0.0, 0.0]).unwrap().abs() < 1e-12);
        assert!((adversarial_subspace_angle(&[0.3]).unwrap() - 0.3f64.atan()).abs() < 1e-12);
        assert!((0.3f64.atan() - 0.29146).abs() < 1e-5);
        let eps = uniform_allocation(9, 0.2);
        assert!((adversarial_subspace_angle(&eps).unwrap() - 0.2f64.atan()).abs() < 1e-12);
    }

    #[test]
    fn balanced_subset_examples() {
        let r = find_balanced_subset(&[1.0, 1.0, 1.0, 2.0], 0.5, 2.0).unwrap();
        assert!((r.gamma - 2.0393).abs() < 1e-4);
        assert_eq!(r.subset, vec![0, 1, 2, 3]);
        assert_eq!(r.iterations, 1);
        let r = find_balanced_subset(&[3.0; 7], 0.3, 1.5).unwrap();
        assert_eq!((r.subset.len(), r.iterations), (7, 1));
        assert!(find_balanced_subset(&[0.1, 10.0], 0.5, 2.0).is_err());
        assert!(find_balanced_subset(&[1.0], 1.0, 2.0).is_err());
        assert!(find_balanced_subset(&[1.0], 0.5, 1.0).is_err());
    }

    #[test]
    fn balanced_subset_drops_outliers() {
        // RMS = sqrt(1.8) and gamma = sqrt(2 ln(C^2 / 0.5)) ~ 1.608: the 3 is dropped
        // on the first pass, the second pass keeps the nine 1s.
        let mut b = vec![1.0; 9];
        b.push(3.0);
        let r = find_balanced_subset(&b, 0.5, 1.35).unwrap();
        assert!((r.gamma - (2.0 * (1.35f64 * 1.35 / 0.5).ln()).sqrt()).abs() < 1e-12);
        assert_eq!(r.subset, (0..9).collect::<Vec<_>>());
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn proof_subset_is_balanced() {
        let skewed = [0.01, 0.2, 0.2, 0.2, 0.21, 0.2, 0.19, 0.2];
        let inst = build_instance(8, 10, 0, &skewed).unwrap();
        assert!(!inst.subset.contains(&0));
        inst.check_balance().unwrap();
        let spiky = [0.001, 0.001, 0.001, 0.001, 0.001, 0.001, 0.4];
        let inst = build_instance(7, 10, 0, &spiky).unwrap();
        assert_eq!(inst.subset, (0..6).collect::<Vec<_>>());
        inst.check_balance().unwrap();
        let unbalanced = build_instance_on(7, 10, 0, &spiky, (0..7).collect()).unwrap();
        assert!(new_task_angle_stats(&unbalanced, 10).is_err());
    }

    #[test]
    fn zero_errors_give_zero_angles() {
        let inst = build_instance(6, 20, 2, &[0.0; 6]).unwrap();
        let stats = new_task_angle_stats(&inst, 20).unwrap();
        assert!(stats.angles.iter().all(|&a| a == 0.0));
        assert_eq!(stats.threshold, 0.0);
        assert_eq!(stats.csv_rows().len(), 20);
    }

    #[test]
    fn stats_reuse_instance_tasks() {
        let inst = build_instance(6, 5, 11, &uniform_allocation(6, 0.1)).unwrap();
        let stats = new_task_angle_stats(&inst, 8).unwrap();
        for (j, t) in inst.random_tasks.iter().enumerate() {
            assert_eq!(stats.angles[j], inst.angle_to_learned_span(t).unwrap());
        }
    }

    #[test]
    fn ledger_examples() {
        let inst = build_instance(4, 0, 0, &uniform_allocation(4, 0.1)).unwrap();
        let l = sample_complexity_ledger(&inst, 100, 0.1, &uniform_allocation(4, 0.1)).unwrap();
        assert!((l.basis_cost - 100.0 * 8.0 / 0.1).abs() < 1e-9);
        assert!((l.ratio - 1.0).abs() < 1e-12);
        assert!(l.feasible);
        let skew = [0.09, 0.025, 0.025, 0.0229];
        let s = sample_complexity_ledger(&inst, 100, 0.1, &skew).unwrap();
        assert!(s.feasible && s.basis_cost > l.basis_cost);
        let bad = sample_complexity_ledger(&inst, 100, 0.1, &[0.1; 4]).unwrap();
        assert!(!bad.feasible && bad.final_angle > 0.1);
        assert!(sample_complexity_ledger(&inst, 3, 0.1, &skew).is_err());
        assert!(sample_complexity_ledger(&inst, 100, 0.1, &[0.0, 0.1, 0.1, 0.1]).is_err());
        let with_tasks = build_instance(4, 7, 0, &uniform_allocation(4, 0.1)).unwrap();
        let t =
            sample_complexity_ledger(&with_tasks, 100, 0.1, &uniform_allocation(4, 0.1)).unwrap();
        assert!((t.new_task_cost - 7.0 * 4.0 / 0.1).abs() < 1e-9);
    }

    #[test]
    fn grid_search_finds_uniform_point() {
        let (alloc, cost, count) = allocation_grid_search(10, 3, 0.1, 4).unwrap();
        assert_eq!(count, 55); // C(11, 2)
        assert!((cost - holder_minimum(10, 3, 0.1)).abs() < 1e-9);
        for e in alloc {
            assert!((e - 0.1 / 3f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn tight_example_matches_geometry() {
        let (k, eps_acc) = (6, 0.05);
        let feats: Vec<Vector> = (0..k - 1)
            .map(|i| adversarial_learn(&basis_vector(k, i), eps_acc, k - 1).unwrap())
            .collect();
        let span = Subspace::span(&feats).unwrap();
        let (mut max, mut sum) = (0.0f64, 0.0);
        for mask in 0u32..1 << (k - 1) {
            let a = Vector::from_fn(k, |i, _| {
                if i == k - 1 {
                    0.0
                } else if mask >> i & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            });
            let err = angle_vec_to_subspace(&a, &span).unwrap() / PI;
            max = max.max(err);
            sum += err;
        }
        let t = tight_example(k, eps_acc).unwrap();
        assert!((t.max_error - max).abs() < 1e-12);
        assert!((t.mean_error - sum / 32.0).abs() < 1e-12);
        assert!(t.max_error <= (k as f64).sqrt() * eps_acc);
        assert!(tight_example(400, 0.001).unwrap().mean_error.is_finite());
    }
}
