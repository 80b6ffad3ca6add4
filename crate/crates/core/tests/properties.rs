use nalgebra::DVector;
use nestdec_core::cases::random_parametric_problem;
use nestdec_core::projection::project;
use nestdec_core::{
    anti_cycling_step, classify_active, kkt_residual, solve, AntiCyclingDecision, ConstraintOracle, ConvexProgram,
    NodeId, Solution,
};
use proptest::prelude::*;

fn value_at(p: &ConvexProgram, pin: &[f64]) -> Option<(f64, Solution)> {
    let sol = solve(&p.clone().pinned(DVector::from_column_slice(pin)), None).ok()?;
    sol.is_optimal().then(|| (sol.objective, sol))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn feasible(p: &ConvexProgram, v: &[f64]) -> bool {
    p.constraints.iter().all(|c| if c.is_equality() { c.value(v).abs() <= 1e-12 } else { c.value(v) <= 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn optimum_satisfies_kkt(seed in 0u64..10_000) {
        let p = random_parametric_problem(seed);
        let sol = solve(&p, None).unwrap();
        prop_assert!(sol.is_optimal());
        let r = kkt_residual(&p, &sol.primal, &sol.duals).unwrap();
        prop_assert!(r.feasibility <= 1e-7 && r.complementarity <= 1e-6, "{r:?}");
        prop_assert!(sol.kkt.max() <= 1e-6, "{:?}", sol.kkt);
    }

    #[test]
    fn no_feasible_neighbor_beats_optimum(seed in 0u64..10_000, dirs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 20)) {
        let p = random_parametric_problem(seed);
        let sol = solve(&p, None).unwrap();
        let nx = p.blocks.n_internal;
        for d in dirs {
            let mut v = sol.primal.clone();
            for i in 0..nx {
                v[i] += 0.1 * d[i];
            }
            if feasible(&p, v.as_slice()) {
                prop_assert!(p.objective_value(v.as_slice()) >= sol.objective - 1e-7);
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_optimum(seed in 0u64..10_000, shift in -0.5f64..0.5) {
        let p = random_parametric_problem(seed);
        let cold = solve(&p, None).unwrap();
        let warm = cold.primal.map(|v| v + shift);
        let again = solve(&p, Some(&warm)).unwrap();
        prop_assert!(again.is_optimal());
        prop_assert!(rel(again.objective, cold.objective) <= 1e-7);
    }

    #[test]
    fn first_order_model_is_a_global_underestimator(seed in 0u64..10_000, samples in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 100)) {
        let p = random_parametric_problem(seed);
        let sol = solve(&p, None).unwrap();
        let pair = project(&p, &sol, 1e-6, NodeId::ROOT).unwrap();
        for (a, b) in samples {
            let q = [0.5 * a, 0.5 * b];
            if let Some((v, _)) = value_at(&p, &q) {
                let model = pair.first.evaluate(&DVector::from_column_slice(&q)).unwrap();
                prop_assert!(v - model >= -1e-7, "slack {} at {q:?}", v - model);
            }
        }
    }
}

/// Central differences of the value function and of the analytic gradient.
#[test]
fn expansions_match_finite_differences() {
    let h = 1e-5;
    let mut checked_gradient = 0;
    let mut checked_hessian = 0;
    for seed in 0..16u64 {
        let p = random_parametric_problem(seed);
        let (_, sol) = value_at(&p, &[0.0, 0.0]).unwrap();
        let pair = project(&p, &sol, 1e-6, NodeId::ROOT).unwrap();
        let g = &pair.first.gradient;
        let mut hess_fd = nalgebra::DMatrix::zeros(2, 2);
        let mut same_active = true;
        let base_part = classify_active(&sol, &p.clone().pinned(DVector::zeros(2)), 1e-6).unwrap();
        for j in 0..2 {
            let mut up = [0.0; 2];
            let mut dn = [0.0; 2];
            up[j] = h;
            dn[j] = -h;
            let (vu, su) = value_at(&p, &up).unwrap();
            let (vd, sd) = value_at(&p, &dn).unwrap();
            let fd = (vu - vd) / (2.0 * h);
            let err = (g[j] - fd).abs() / fd.abs().max(1.0);
            assert!(err <= 1e-4, "seed {seed}: gradient {} vs {fd}", g[j]);

            let pu = p.clone().pinned(DVector::from_column_slice(&up));
            let pd = p.clone().pinned(DVector::from_column_slice(&dn));
            let gu = project(&pu, &su, 1e-6, NodeId::ROOT).unwrap().first.gradient;
            let gd = project(&pd, &sd, 1e-6, NodeId::ROOT).unwrap().first.gradient;
            same_active &= classify_active(&su, &pu, 1e-6).unwrap().active == base_part.active
                && classify_active(&sd, &pd, 1e-6).unwrap().active == base_part.active;
            hess_fd.set_column(j, &((gu - gd) / (2.0 * h)));
        }
        checked_gradient += 1;
        if !same_active || !base_part.degenerate.is_empty() {
            continue;
        }
        let second = pair.second.expect("second-order model on a nondegenerate active set");
        let hess = second.hessian.unwrap();
        let err = (&hess - &hess_fd).amax() / hess_fd.amax().max(1.0);
        assert!(err <= 1e-3, "seed {seed}: hessian {hess} vs {hess_fd}");
        checked_hessian += 1;
    }
    assert!(checked_gradient >= 10);
    assert!(checked_hessian >= 10, "only {checked_hessian} problems had a stable active set");
}

#[test]
fn anti_cycling_examples() {
    let a = DVector::from_vec(vec![1.0, 2.0]);
    let b = DVector::from_vec(vec![1.0, 2.5]);
    assert_eq!(anti_cycling_step(None, &a, 1e-9), AntiCyclingDecision::Proceed);
    assert_eq!(anti_cycling_step(Some(&a), &a, 1e-9), AntiCyclingDecision::Rollback);
    assert_eq!(anti_cycling_step(Some(&a), &b, 1e-9), AntiCyclingDecision::Proceed);
}
