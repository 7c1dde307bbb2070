use std::f64::consts::{FRAC_PI_2, PI};

use lll_core::driver::{run_trial, Mode, RunConfig};
use lll_core::geometry::{
    angle_vec_to_subspace, max_principal_angle, orthonormalize, principal_angles, Subspace, Vector,
};
use lll_core::learner::{adversarial_learn, budget, CheckMode};
use lll_core::lowerbound::{
    adversarial_subspace_angle, build_instance, find_balanced_subset, holder_minimum,
    sample_complexity_ledger, uniform_allocation,
};
use lll_core::refinement::{max_distance, refine_with, RefineOptions};
use lll_core::synthetic::disagreement_exact;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vector(d: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-1.0f64..1.0, d).prop_map(Vector::from_vec)
}

fn unit(d: usize) -> impl Strategy<Value = Vector> {
    vector(d).prop_filter_map("nonzero", |v| {
        let n = v.norm();
        (n > 1e-3).then(|| v / n)
    })
}

fn subspace(d: usize, r: usize) -> impl Strategy<Value = Subspace> {
    prop::collection::vec(vector(d), r).prop_filter_map("full rank", |vs| {
        orthonormalize(&vs).ok().filter(|s| s.dim() == vs.len())
    })
}

/// Random orthogonal `r x r` matrix from the QR of a random square.
fn orthogonal(r: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, r * r).prop_filter_map("invertible", move |xs| {
        let m = DMatrix::from_vec(r, r, xs);
        (m.determinant().abs() > 1e-3).then(|| m.qr().q())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_idempotent_and_orthogonal(s in subspace(7, 3), x in vector(7)) {
        let p = s.project(&x).unwrap();
        let pp = s.project(&p).unwrap();
        prop_assert!((&p - &pp).norm() < 1e-8);
        let r = &x - &p;
        prop_assert!((x.norm_squared() - p.norm_squared() - r.norm_squared()).abs() < 1e-8);
        prop_assert!(s.basis().tr_mul(&r).norm() < 1e-8);
    }

    #[test]
    fn principal_angles_ignore_basis_choice(
        f in subspace(6, 3),
        g in subspace(6, 2),
        q in orthogonal(3),
    ) {
        let rotated = Subspace::from_orthonormal(f.basis() * q).unwrap();
        let a = principal_angles(&f, &g).unwrap();
        let b = principal_angles(&rotated, &g).unwrap();
        let c = principal_angles(&g, &f).unwrap();
        prop_assert_eq!(a.len(), 2);
        for i in 0..a.len() {
            prop_assert!((a.angles()[i] - b.angles()[i]).abs() < 1e-8);
            prop_assert!((a.angles()[i] - c.angles()[i]).abs() < 1e-8);
            prop_assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&a.angles()[i]));
        }
    }

    #[test]
    fn angle_to_own_span_is_zero(s in subspace(5, 2), c in vector(2)) {
        prop_assume!(c.norm() > 1e-3);
        let x = s.embed(&c).unwrap();
        prop_assert!(angle_vec_to_subspace(&x, &s).unwrap() < 1e-7);
        prop_assert!(max_principal_angle(&s, &s).unwrap() < 1e-7);
    }

    #[test]
    fn disagreement_is_angle_over_pi(u in unit(4), v in unit(4)) {
        let d = disagreement_exact(&u, &v).unwrap();
        prop_assert!((d - u.dot(&v).clamp(-1.0, 1.0).acos() / PI).abs() < 1e-12);
        prop_assert_eq!(d, disagreement_exact(&v, &u).unwrap());
        let neg = disagreement_exact(&u, &(-&v)).unwrap();
        prop_assert!((d + neg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_is_monotone(dim in 1usize..500, eps in 0.01f64..0.49, c_s in 0.5f64..8.0) {
        let b = budget(dim, eps, c_s).unwrap();
        prop_assert!(budget(dim + 1, eps, c_s).unwrap() >= b);
        prop_assert!(budget(dim, eps * 0.9, c_s).unwrap() >= b);
        prop_assert_eq!(b, (c_s * dim as f64 * (1.0 / eps).ln() / eps).ceil() as u64);
    }

    #[test]
    fn adversarial_learner_stays_within_budget(a in unit(5), eps in 0.0f64..0.9) {
        // Zero out the adversarial coordinate and renormalize.
        let mut a = a;
        a[4] = 0.0;
        prop_assume!(a.norm() > 1e-3);
        let a = &a / a.norm();
        let h = adversarial_learn(&a, eps, 4).unwrap();
        prop_assert!((h.norm() - 1.0).abs() < 1e-12);
        prop_assert!((&h - &a).norm() <= eps + 1e-12);
    }

    #[test]
    fn learned_span_angle_is_arctan_of_norm(eps in prop::collection::vec(0.0f64..0.2, 1..12)) {
        let norm = eps.iter().map(|e| e * e).sum::<f64>().sqrt();
        prop_assume!(norm <= 0.5);
        let angle = adversarial_subspace_angle(&eps).unwrap();
        prop_assert!((angle - norm.atan()).abs() < 1e-6);
    }

    #[test]
    fn balanced_subset_postconditions(
        raw in prop::collection::vec(0.0f64..1.0, 2..60),
        p in 0.05f64..0.95,
        c in 1.05f64..4.0,
    ) {
        // Entries in [1, C] have RMS at most C, so b_i >= 1 >= RMS / C always holds.
        let b: Vec<f64> = raw.iter().map(|&x| 1.0 + x * (c - 1.0)).collect();
        let r = find_balanced_subset(&b, p, c).unwrap();
        let k = b.len();
        prop_assert!(r.subset.len() as f64 >= k as f64 * (1.0 - p) - 1e-9);
        prop_assert!(r.iterations <= k);
        let s_rms = (r.subset.iter().map(|&i| b[i] * b[i]).sum::<f64>() / r.subset.len() as f64).sqrt();
        for &i in &r.subset {
            prop_assert!(b[i] <= r.gamma * s_rms * (1.0 + 1e-12));
        }
    }

    #[test]
    fn feasible_allocations_cost_at_least_uniform(
        raw in prop::collection::vec(0.05f64..1.0, 2..9),
        eps in 0.01f64..0.3,
    ) {
        let k = raw.len();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let alloc: Vec<f64> = raw.iter().map(|x| x / norm * eps).collect();
        let inst = build_instance(k, 0, 0, &uniform_allocation(k, eps)).unwrap();
        let l = sample_complexity_ledger(&inst, 50, eps, &alloc).unwrap();
        prop_assert!(l.feasible);
        prop_assert!(l.basis_cost >= holder_minimum(50, k, eps) * (1.0 - 1e-9));
        prop_assert!((l.total - l.basis_cost - l.new_task_cost).abs() <= 1e-9 * l.total);
    }

    #[test]
    fn learning_combination_tasks_adds_nothing(seed in any::<u64>(), k in 2usize..10) {
        let eps: Vec<f64> = (0..k).map(|i| 0.01 + 0.01 * (i % 3) as f64).collect();
        let inst = build_instance(k, 20, seed, &eps).unwrap();
        let v = inst.learned_span().unwrap();
        for t in &inst.random_tasks {
            let learned = inst.adversarial_feature(t).unwrap();
            prop_assert!(v.dist(&learned).unwrap() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn refinement_certificate_holds(
        w in prop::collection::vec(unit(8), 3..10),
        k in 1usize..3,
    ) {
        let (v, cert) = refine_with(&w, k, 0.05, &RefineOptions::default()).unwrap();
        prop_assert!(v.dim() < 2 * k);
        prop_assert!(cert.dims == v.dim());
        prop_assert!(cert.lower_bound <= cert.sdp_value + 1e-6);
        prop_assert!((max_distance(&w, &v).unwrap() - cert.max_distance).abs() < 1e-12);
        prop_assert!(cert.holds(), "{:?}", cert);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn small_runs_keep_their_contracts(seed in any::<u64>(), rr in any::<bool>()) {
        let mode = if rr { Mode::Rr } else { Mode::Basic };
        let cfg = RunConfig { d: 12, k: 2, m: 10, trials: 1, seed, mode, ..RunConfig::default() };
        let r = run_trial(&cfg, mode, 0).unwrap();
        prop_assert!(r.invariant_failures(CheckMode::Oracle).is_empty());
        prop_assert!(r.feature_dim_curve.windows(2).all(|w| mode == Mode::Rr || w[1] >= w[0]));
        prop_assert!(r.samples_curve.windows(2).all(|w| w[1] >= w[0]));
    }
}
