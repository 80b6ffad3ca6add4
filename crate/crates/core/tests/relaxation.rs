use nalgebra::{DMatrix, DVector};
use nestdec_core::coordinator::compute_optimum;
use nestdec_core::{
    relax_lower, solve, Constraint, ConvexProgram, CoordinationConfig, HierarchyNode, LinearExpr, SolveStatus,
    VariableBlocks,
};

/// min 0 s.t. u ≤ 1 with `u` as the upper boundary block.
fn capped() -> ConvexProgram {
    let mut p = ConvexProgram::new(VariableBlocks::new(0, 1, 0));
    p.push(Constraint::le(LinearExpr::var(0, 1.0).plus(-1.0)));
    p
}

#[test]
fn infeasible_pin_is_absorbed_by_slack() {
    let pin = DVector::from_vec(vec![2.0]);
    assert_eq!(solve(&capped().pinned(pin.clone()), None).unwrap().status, SolveStatus::Infeasible);

    let relaxed = relax_lower(&capped(), &pin, &[10.0]).unwrap();
    assert_eq!(relaxed.blocks, VariableBlocks::new(2, 1, 0));
    let sol = solve(&relaxed, None).unwrap();
    assert!(sol.is_optimal());
    let (u, s) = (sol.primal[0], sol.primal[1]);
    assert!((u - 1.0).abs() < 1e-6, "u = {u}");
    assert!((s - 1.0).abs() < 1e-6, "s = {s}");
    assert!((sol.objective - 10.0).abs() < 1e-6, "objective {}", sol.objective);
}

#[test]
fn feasible_pin_with_large_penalty_is_exact() {
    // min (x − 3)² + 2xu + u² s.t. x ≤ u + 1, pinned at u = 0.5
    let mut p = ConvexProgram::new(VariableBlocks::new(1, 1, 0));
    p.objective.add_square(0, 3.0, 1.0);
    p.objective.quadratic[(0, 1)] += 1.0;
    p.objective.quadratic[(1, 0)] += 1.0;
    p.objective.quadratic[(1, 1)] += 2.0;
    p.push(Constraint::le(LinearExpr::new(vec![(0, 1.0), (1, -1.0)], -1.0)));
    let pin = DVector::from_vec(vec![0.5]);

    let exact = solve(&p.clone().pinned(pin.clone()), None).unwrap();
    let relaxed = relax_lower(&p, &pin, &[1e4]).unwrap();
    let sol = solve(&relaxed, None).unwrap();
    assert!(sol.is_optimal());
    let slack = sol.primal[2];
    assert!(slack.abs() <= 1e-7, "slack {slack}");
    assert!((sol.objective - exact.objective).abs() <= 1e-6, "{} vs {}", sol.objective, exact.objective);
    assert!((sol.primal[0] - exact.primal[0]).abs() <= 1e-6);
}

#[test]
fn penalty_shape_is_checked() {
    let pin = DVector::from_vec(vec![0.0]);
    assert!(relax_lower(&capped(), &pin, &[1.0, 2.0]).is_err());
    assert!(relax_lower(&capped(), &pin, &[-1.0]).is_err());
    assert!(relax_lower(&capped(), &DVector::zeros(2), &[1.0]).is_err());
}

#[test]
fn coordinator_relaxes_an_infeasible_child() {
    // root min (x − 5)² passes x down to a child that caps it at 1
    let mut root = ConvexProgram::new(VariableBlocks::new(0, 0, 1));
    root.objective.add_square(0, 5.0, 1.0);
    let mut tree = HierarchyNode::new("root", root).with_child(HierarchyNode::new("cap", capped()), DMatrix::identity(1, 1));
    tree.assign_ids();

    let child = &tree.children[0];
    let out = compute_optimum(child, Some(&DVector::from_vec(vec![2.0])), &CoordinationConfig::default()).unwrap();
    assert!(out.relaxed);
    assert!((out.slack - 1.0).abs() < 1e-6);
}
