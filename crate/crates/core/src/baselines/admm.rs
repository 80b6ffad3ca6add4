//! Nested consensus ADMM.
//!
//! Each parent/child edge carries the consensus constraint `u_child = I·l_parent`.
//! A parent alternates with its children: every child minimizes its subtree cost plus
//! `yᵀ(u − I·l) + ρ/2‖u − I·l‖²` (recursively, by ADMM over its own children), then the
//! parent minimizes its cost plus the same terms over `l`, then the duals move by
//! `ρ(u − I·l)`. A level pair stops when the primal residual `‖u − I·l‖` and the dual
//! residual `ρ‖I(l⁺ − l)‖` are both within tolerance.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::CoordinationError;
use crate::hierarchy::{HierarchyNode, NodeId};
use crate::program::ConvexProgram;
use crate::solver::{self, Solution, SolveStatus, SolverSettings};
use crate::trace::{IterationRecord, IterationTrace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    /// Stop once `‖u − Il‖ ≤ primal_tol·(√p + max(‖u‖, ‖Il‖))` ...
    pub primal_tol: f64,
    /// ... and `ρ‖I(l⁺ − l)‖ ≤ dual_tol·(√n + ‖Iᵀy‖)`.
    pub dual_tol: f64,
    /// Iteration cap per level pair.
    pub max_iter: usize,
    pub solver: SolverSettings,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { rho: 3.0, primal_tol: 1e-6, dual_tol: 1e-6, max_iter: 1000, solver: SolverSettings::default() }
    }
}

impl AdmmConfig {
    pub fn with_tolerance(rho: f64, tol: f64) -> Self {
        Self { rho, primal_tol: tol, dual_tol: tol, ..Self::default() }
    }

    fn validate(&self) -> Result<(), CoordinationError> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(CoordinationError::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.primal_tol > 0.0 && self.dual_tol > 0.0) {
            return Err(CoordinationError::InvalidConfig("ADMM tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(CoordinationError::InvalidConfig("ADMM max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmNodeOutcome {
    pub id: NodeId,
    pub name: String,
    pub local_primal: DVector<f64>,
    pub local_objective: f64,
    /// Sum of local objectives over the subtree.
    pub subtree_objective: f64,
    pub iterations: usize,
    pub trace: IterationTrace,
    pub children: Vec<AdmmNodeOutcome>,
}

impl AdmmNodeOutcome {
    pub fn iter(&self) -> impl Iterator<Item = &AdmmNodeOutcome> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            stack.extend(n.children.iter().rev());
            Some(n)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmResult {
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub trace: IterationTrace,
    pub outcome: AdmmNodeOutcome,
}

/// Augmentation `yᵀu + ρ/2‖u − v‖²` on a node's upper block.
struct Augment<'a> {
    y: &'a DVector<f64>,
    v: &'a DVector<f64>,
    rho: f64,
}

#[derive(Default)]
struct EdgeState {
    l: Option<DVector<f64>>,
    y: Vec<DVector<f64>>,
    children: Vec<EdgeState>,
}

fn augmented(problem: &ConvexProgram, aug: Option<&Augment>) -> ConvexProgram {
    let mut p = problem.clone().unpinned();
    if let Some(a) = aug {
        let start = p.blocks.upper().start;
        for (k, i) in p.blocks.upper().enumerate() {
            debug_assert_eq!(i, start + k);
            p.objective.quadratic[(i, i)] += a.rho;
            p.objective.linear[i] += a.y[k] - a.rho * a.v[k];
            p.objective.constant += 0.5 * a.rho * a.v[k] * a.v[k] - a.y[k] * a.v[k];
        }
    }
    p
}

fn solve_checked(node: NodeId, p: &ConvexProgram, settings: &SolverSettings) -> Result<Solution, CoordinationError> {
    let sol = solver::solve_with(p, None, settings).map_err(|source| CoordinationError::Program { node, source })?;
    if sol.status != SolveStatus::Optimal {
        return Err(CoordinationError::Solve { node, status: sol.status });
    }
    Ok(sol)
}

fn block(v: &DVector<f64>, r: std::ops::Range<usize>) -> DVector<f64> {
    v.rows(r.start, r.len()).into_owned()
}

fn admm_node(
    node: &HierarchyNode,
    aug: Option<&Augment>,
    state: &mut EdgeState,
    cfg: &AdmmConfig,
) -> Result<AdmmNodeOutcome, CoordinationError> {
    let own = augmented(&node.problem, aug);
    let finish = |primal: DVector<f64>, iterations, trace, children: Vec<AdmmNodeOutcome>| {
        let local_objective = node.problem.objective_value(primal.as_slice());
        let subtree_objective = local_objective + children.iter().map(|c| c.subtree_objective).sum::<f64>();
        AdmmNodeOutcome {
            id: node.id,
            name: node.name.clone(),
            local_primal: primal,
            local_objective,
            subtree_objective,
            iterations,
            trace,
            children,
        }
    };
    if node.is_leaf() {
        let sol = solve_checked(node.id, &own, &cfg.solver)?;
        return Ok(finish(sol.primal, 1, IterationTrace::new(node.id), Vec::new()));
    }

    let kids = node.children.len();
    let lower = own.blocks.lower();
    if state.children.len() != kids {
        state.children = (0..kids).map(|_| EdgeState::default()).collect();
        state.y = node.children.iter().map(|c| DVector::zeros(c.problem.blocks.n_upper)).collect();
    }
    let mut l = match &state.l {
        Some(l) => l.clone(),
        None => block(&solve_checked(node.id, &own, &cfg.solver)?.primal, lower.clone()),
    };
    let mut trace = IterationTrace::new(node.id);

    for k in 1..=cfg.max_iter {
        let targets: Vec<DVector<f64>> = node.children.iter().map(|c| &c.mapping * &l).collect();
        let ys = state.y.clone();
        let answers: Vec<Result<AdmmNodeOutcome, CoordinationError>> = node
            .children
            .par_iter()
            .zip(state.children.par_iter_mut())
            .zip(targets.par_iter().zip(ys.par_iter()))
            .map(|((c, st), (v, y))| admm_node(c, Some(&Augment { y, v, rho: cfg.rho }), st, cfg))
            .collect();
        let outcomes = answers.into_iter().collect::<Result<Vec<_>, _>>()?;
        let us: Vec<DVector<f64>> = node
            .children
            .iter()
            .zip(&outcomes)
            .map(|(c, o)| block(&o.local_primal, c.problem.blocks.upper()))
            .collect();

        // parent update over l
        let mut parent = own.clone();
        for ((c, u), y) in node.children.iter().zip(&us).zip(&state.y) {
            let i = &c.mapping;
            let q = i.transpose() * i * cfg.rho;
            let lin = -(i.transpose() * (y + u * cfg.rho));
            let mut qv = parent.objective.quadratic.view_mut((lower.start, lower.start), (lower.len(), lower.len()));
            qv += q;
            let mut lv = parent.objective.linear.rows_mut(lower.start, lower.len());
            lv += lin;
            parent.objective.constant += 0.5 * cfg.rho * u.norm_squared() + y.dot(u);
        }
        let sol = solve_checked(node.id, &parent, &cfg.solver)?;
        let l_new = block(&sol.primal, lower.clone());

        // residuals and their absolute-plus-relative thresholds
        let (mut r2, mut s2, mut u2, mut il2, mut y2, mut dim) = (0.0, 0.0, 0.0, 0.0, 0.0, 0);
        for ((c, u), y) in node.children.iter().zip(&us).zip(state.y.iter_mut()) {
            let il = &c.mapping * &l_new;
            let gap = u - &il;
            r2 += gap.norm_squared();
            s2 += (&c.mapping * (&l_new - &l)).norm_squared();
            *y += gap * cfg.rho;
            u2 += u.norm_squared();
            il2 += il.norm_squared();
            y2 += (c.mapping.transpose() * &*y).norm_squared();
            dim += u.len();
        }
        let (r, s) = (r2.sqrt(), cfg.rho * s2.sqrt());
        let primal_tol = cfg.primal_tol * ((dim as f64).sqrt() + u2.max(il2).sqrt());
        let dual_tol = cfg.dual_tol * ((lower.len() as f64).sqrt() + y2.sqrt());
        let change = (&l_new - &l).norm();
        l = l_new;
        state.l = Some(l.clone());

        let local_primal = sol.primal.clone();
        let sum_children: f64 = outcomes.iter().map(|o| o.subtree_objective).sum();
        trace.records.push(IterationRecord {
            k,
            boundary: l.iter().copied().collect(),
            upper_objective: node.problem.objective_value(local_primal.as_slice()) + sum_children,
            child_values: outcomes.iter().map(|o| o.subtree_objective).collect(),
            lower_bound_objective: None,
            l_norm_change: change,
            inner_iterations: outcomes.iter().map(|o| o.iterations).collect(),
            rollback: false,
        });
        if r <= primal_tol && s <= dual_tol {
            return Ok(finish(local_primal, k, trace, outcomes));
        }
    }
    let last_change = trace.records.last().map_or(f64::INFINITY, |r| r.l_norm_change);
    Err(CoordinationError::MaxOuterIterations { node: node.id, iterations: cfg.max_iter, last_change })
}

/// Runs nested ADMM over the whole tree.
pub fn solve_admm(tree: &HierarchyNode, cfg: &AdmmConfig) -> Result<AdmmResult, CoordinationError> {
    cfg.validate()?;
    tree.validate()?;
    let mut state = EdgeState::default();
    let outcome = admm_node(tree, None, &mut state, cfg)?;
    let trace = outcome.trace.clone();
    Ok(AdmmResult {
        objective: outcome.subtree_objective,
        outer_iterations: outcome.iterations,
        inner_iterations: trace.inner_iterations(),
        trace,
        outcome,
    })
}
