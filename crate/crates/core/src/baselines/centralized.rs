use nalgebra::DVector;

use crate::coordinator::CoordinationError;
use crate::hierarchy::{HierarchyNode, NodeId};
use crate::program::{Constraint, ConvexProgram, LinearExpr, QuadraticObjective, VariableBlocks};
use crate::solver::{self, Solution, SolveStatus, SolverSettings};

/// Where each node's variables sit in the flattened program.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatLayout {
    pub nodes: Vec<(NodeId, String, usize, VariableBlocks)>,
}

impl FlatLayout {
    /// The slice of `v` holding node `id`'s variables.
    pub fn local(&self, id: NodeId, v: &DVector<f64>) -> Option<DVector<f64>> {
        let (_, _, off, blocks) = self.nodes.iter().find(|n| n.0 == id)?;
        Some(v.rows(*off, blocks.total()).into_owned())
    }
}

/// One program holding every node's variables, with `u_child = I·l_parent` as
/// equality constraints.
pub fn flatten(tree: &HierarchyNode) -> (ConvexProgram, FlatLayout) {
    let mut nodes = Vec::new();
    let mut offset = 0;
    for n in tree.iter() {
        nodes.push((n.id, n.name.clone(), offset, n.problem.blocks));
        offset += n.problem.dim();
    }
    let total = offset;
    let mut flat = ConvexProgram::new(VariableBlocks::new(total, 0, 0));
    let mut objective = QuadraticObjective::zero(total);
    for (n, (_, _, off, _)) in tree.iter().zip(&nodes) {
        let off = *off;
        let d = n.problem.dim();
        let obj = &n.problem.objective;
        objective.constant += obj.constant;
        objective.linear.rows_mut(off, d).copy_from(&obj.linear);
        objective.quadratic.view_mut((off, off), (d, d)).copy_from(&obj.quadratic);
        let map = |i: usize| i + off;
        flat.constraints.extend(n.problem.constraints.iter().map(|c| c.remapped(&map)));
    }
    flat.objective = objective;
    let offset_of = |id: NodeId| nodes.iter().find(|x| x.0 == id).map(|x| x.2).unwrap();
    for parent in tree.iter() {
        let l0 = offset_of(parent.id) + parent.problem.blocks.lower().start;
        for c in &parent.children {
            let u0 = offset_of(c.id) + c.problem.blocks.upper().start;
            for r in 0..c.mapping.nrows() {
                let mut terms = vec![(u0 + r, 1.0)];
                for j in 0..c.mapping.ncols() {
                    let v = c.mapping[(r, j)];
                    if v != 0.0 {
                        terms.push((l0 + j, -v));
                    }
                }
                flat.push(Constraint::eq(LinearExpr::new(terms, 0.0)));
            }
        }
    }
    (flat, FlatLayout { nodes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedResult {
    pub objective: f64,
    pub solution: Solution,
    pub program: ConvexProgram,
    pub layout: FlatLayout,
}

/// Solves the flattened program directly.
pub fn solve_centralized(tree: &HierarchyNode, settings: &SolverSettings) -> Result<CentralizedResult, CoordinationError> {
    tree.validate()?;
    let (program, layout) = flatten(tree);
    let solution = solver::solve_with(&program, None, settings)
        .map_err(|source| CoordinationError::Program { node: tree.id, source })?;
    if solution.status != SolveStatus::Optimal {
        return Err(CoordinationError::Solve { node: tree.id, status: solution.status });
    }
    Ok(CentralizedResult { objective: solution.objective, solution, program, layout })
}
