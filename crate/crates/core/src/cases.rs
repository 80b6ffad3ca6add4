//! Built-in test problems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::HierarchyNode;
use crate::program::{Constraint, ConvexProgram, LinearExpr, VariableBlocks};

/// Optimal value of [`case_one`]: `(2√2 − x)²` is minimized jointly with `(x − 1)²`
/// at `x = (1 + 2√2)/2`, giving `(2√2 − 1)²/2 = 4.5 − 2√2`.
pub fn case_one_optimum() -> f64 {
    4.5 - 2.0 * std::f64::consts::SQRT_2
}

/// Three-level toy problem
///
/// ```text
/// min (x−1)² + (y1−2)² + (z−2)²
/// s.t. y1² + y2² ≤ x², z² ≤ y2², x ≥ 0, y2 ≥ 0
/// ```
///
/// split as root `x` → middle `(y1; u = x, l = y2)` → bottom `(z; u = y2)`. The
/// quadratic constraints are written as the cones `‖(y1, y2)‖ ≤ x` and `|z| ≤ y2`,
/// which coincide with them on `x, y2 ≥ 0`.
pub fn case_one() -> HierarchyNode {
    let mut root = ConvexProgram::new(VariableBlocks::new(0, 0, 1));
    root.objective.add_square(0, 1.0, 1.0);
    root.push(Constraint::le(LinearExpr::var(0, -1.0)));

    // [y1 | u | l]
    let mut middle = ConvexProgram::new(VariableBlocks::new(1, 1, 1));
    middle.objective.add_square(0, 2.0, 1.0);
    middle.push(Constraint::cone(
        vec![LinearExpr::var(0, 1.0), LinearExpr::var(2, 1.0)],
        LinearExpr::var(1, 1.0),
    ));
    middle.push(Constraint::le(LinearExpr::var(2, -1.0)));

    // [z | u]
    let mut bottom = ConvexProgram::new(VariableBlocks::new(1, 1, 0));
    bottom.objective.add_square(0, 2.0, 1.0);
    bottom.push(Constraint::cone(vec![LinearExpr::var(0, 1.0)], LinearExpr::var(1, 1.0)));

    let one = DMatrix::identity(1, 1);
    let mut tree = HierarchyNode::new("root", root).with_child(
        HierarchyNode::new("middle", middle).with_child(HierarchyNode::new("bottom", bottom), one.clone()),
        one,
    );
    tree.assign_ids();
    tree
}

/// A random convex program with a two-dimensional pinned parameter block, pinned at 0.
///
/// Quadratic objective with parameter coupling, a few linear constraints and (for odd
/// seeds) one second-order cone, all strictly feasible at `x = 0, p = 0` with margin,
/// so that small parameter moves keep the problem solvable.
pub fn random_parametric_problem(seed: u64) -> ConvexProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.gen_range(3..=5);
    let np = 2;
    let mut p = ConvexProgram::new(VariableBlocks::new(nx, np, 0));
    let n = nx + np;

    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = m.transpose() * &m * 0.5;
    for i in 0..nx {
        q[(i, i)] += 0.5;
    }
    p.objective.quadratic = q;
    p.objective.linear = DVector::from_fn(n, |i, _| if i < nx { rng.gen_range(-3.0..3.0) } else { 0.0 });

    let n_lin = rng.gen_range(2..=4);
    for _ in 0..n_lin {
        let mut terms: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        terms.retain(|&(_, c)| c.abs() > 0.05);
        let margin = rng.gen_range(0.3..1.0);
        p.push(Constraint::le(LinearExpr::new(terms, -margin)));
    }
    if seed % 2 == 1 {
        let rows: Vec<LinearExpr> = (0..2)
            .map(|_| {
                let terms = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
                LinearExpr::new(terms, rng.gen_range(-0.2..0.2))
            })
            .collect();
        let bound_terms = (0..n).map(|j| (j, rng.gen_range(-0.3..0.3))).collect();
        p.push(Constraint::cone(rows, LinearExpr::new(bound_terms, rng.gen_range(1.0..1.5))));
    }
    p.pinned(DVector::zeros(np))
}

/// Two-level problem: a root choosing `l ∈ [−¼, ¼]²` at cost `½‖l − c‖²` above a
/// [`random_parametric_problem`] child whose parameter block is `l`.
pub fn random_bilevel(seed: u64) -> HierarchyNode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut root = ConvexProgram::new(VariableBlocks::new(0, 0, 2));
    for i in 0..2 {
        root.objective.add_square(i, rng.gen_range(-0.5..0.5), 0.5);
        root.push(Constraint::le(LinearExpr::var(i, 1.0).plus(-0.25)));
        root.push(Constraint::le(LinearExpr::var(i, -1.0).plus(-0.25)));
    }
    let child = random_parametric_problem(seed).unpinned();
    let mut tree = HierarchyNode::new("root", root).with_child(HierarchyNode::new("child", child), DMatrix::identity(2, 2));
    tree.assign_ids();
    tree
}
