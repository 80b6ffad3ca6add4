//! Recursive nested coordination.
//!
//! A node with children iterates: send `I·l` down to every child, collect each child's
//! value-function expansions, and re-solve its own problem with one epigraph variable
//! `o` per child bounded below by the latest second-order model and every first-order
//! model seen so far. It stops when `‖l⁽ᵏ⁾ − l⁽ᵏ⁻¹⁾‖₂ ≤ ε`. The converged problem, cuts
//! included, is what the node's own parent expands.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hierarchy::{HierarchyError, HierarchyNode, NodeId};
use crate::program::{Constraint, ConvexProgram, LinearExpr, VariableBlocks};
use crate::projection::{self, ProjectionError, ProjectionExpansion, ProjectionPair, DEFAULT_ACT_TOL};
use crate::solver::{self, Solution, SolveStatus, SolverSettings};
use crate::trace::{IterationRecord, IterationTrace};
use crate::ProgramError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutMode {
    /// Latest second-order model plus all first-order models (the nested method).
    SecondOrder,
    /// First-order models only (nested generalized Benders).
    FirstOrderOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinationConfig {
    pub epsilon: f64,
    pub max_outer: usize,
    /// Penalty `c` on boundary slack when a pinned problem is infeasible; `None` picks
    /// [`default_penalty`] per node.
    pub penalty: Option<f64>,
    pub anti_cycling: bool,
    pub act_tol: f64,
    pub cut_mode: CutMode,
    /// Drop first-order cuts whose base point repeats an earlier cut's.
    pub prune_dominated_cuts: bool,
    /// Relative radius around the newest second-order cut inside which older first-order
    /// cuts are left out of the coordination problem.
    pub cut_merge_radius: f64,
    pub solver: SolverSettings,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_outer: 100,
            penalty: None,
            anti_cycling: false,
            act_tol: DEFAULT_ACT_TOL,
            cut_mode: CutMode::SecondOrder,
            prune_dominated_cuts: false,
            cut_merge_radius: 1e-4,
            solver: SolverSettings::default(),
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CoordinationError::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_outer == 0 {
            return Err(CoordinationError::InvalidConfig("max_outer must be at least 1".into()));
        }
        if let Some(c) = self.penalty {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(CoordinationError::InvalidConfig(format!("penalty must be nonnegative, got {c}")));
            }
        }
        if !(self.act_tol > 0.0) {
            return Err(CoordinationError::InvalidConfig("act_tol must be positive".into()));
        }
        if !(self.cut_merge_radius >= 0.0) {
            return Err(CoordinationError::InvalidConfig("cut_merge_radius must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoordinationError {
    #[error("node {node}: no convergence after {iterations} outer iterations (last change {last_change:.3e})")]
    MaxOuterIterations { node: NodeId, iterations: usize, last_change: f64 },
    #[error("node {node}: solve ended with status {status:?}")]
    Solve { node: NodeId, status: SolveStatus },
    #[error("node {node}: {source}")]
    Program { node: NodeId, source: ProgramError },
    #[error("node {node}: {source}")]
    Projection { node: NodeId, source: ProjectionError },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("{0}")]
    Shape(String),
}

impl CoordinationError {
    /// The node the failure is attributed to, if any.
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Self::MaxOuterIterations { node, .. }
            | Self::Solve { node, .. }
            | Self::Program { node, .. }
            | Self::Projection { node, .. } => Some(*node),
            _ => None,
        }
    }
}

/// `1e4·(1 + largest objective coefficient)`.
pub fn default_penalty(problem: &ConvexProgram) -> f64 {
    let scale = problem.objective.linear.amax().max(problem.objective.quadratic.amax());
    1e4 * (1.0 + scale)
}

/// Replaces the pin `u = pin` by the penalized epigraph
/// `u − pin ≤ s`, `pin − u ≤ s`, objective `+ cᵀs`.
///
/// The returned program has internal block `[x, u, s]`, upper block `pin` (pinned) and
/// the original lower block, so its value-function expansions are taken with respect
/// to the pin. `c_ply` has length 1 (broadcast) or `n_upper`.
pub fn relax_lower(problem: &ConvexProgram, pin: &DVector<f64>, c_ply: &[f64]) -> Result<ConvexProgram, CoordinationError> {
    let VariableBlocks { n_internal: ni, n_upper: nu, n_lower: nl } = problem.blocks;
    if pin.len() != nu {
        return Err(CoordinationError::DimensionMismatch { what: "pin", expected: nu, found: pin.len() });
    }
    if c_ply.len() != 1 && c_ply.len() != nu {
        return Err(CoordinationError::DimensionMismatch { what: "penalty", expected: nu, found: c_ply.len() });
    }
    if c_ply.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(CoordinationError::InvalidConfig("penalty must be nonnegative".into()));
    }
    let map = |i: usize| if i < ni + nu { i } else { i + 2 * nu };
    let n = ni + 3 * nu + nl;
    let mut out = ConvexProgram::new(VariableBlocks::new(ni + 2 * nu, nu, nl));
    out.objective = problem.objective.remapped(&map, n);
    out.constraints = problem.constraints.iter().map(|c| c.remapped(&map)).collect();
    for i in 0..nu {
        let (u, s, p) = (ni + i, ni + nu + i, ni + 2 * nu + i);
        let c = if c_ply.len() == 1 { c_ply[0] } else { c_ply[i] };
        out.objective.linear[s] += c;
        out.push(Constraint::le(LinearExpr::new(vec![(u, 1.0), (p, -1.0), (s, -1.0)], 0.0)));
        out.push(Constraint::le(LinearExpr::new(vec![(p, 1.0), (u, -1.0), (s, -1.0)], 0.0)));
    }
    Ok(out.pinned(pin.clone()))
}

/// Result of coordinating one subtree at a given pin.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeOutcome {
    pub id: NodeId,
    pub name: String,
    /// The converged problem this node presents to its parent (pinned, cuts included).
    pub formulation: ConvexProgram,
    pub solution: Solution,
    /// Coordination rounds at this node (1 for a leaf).
    pub iterations: usize,
    pub trace: IterationTrace,
    /// The node's own variables `[x, u, l]` at the solution.
    pub local_primal: DVector<f64>,
    /// Value of the node's own objective at `local_primal`.
    pub local_objective: f64,
    /// Whether the pin had to be relaxed.
    pub relaxed: bool,
    /// Largest boundary slack when relaxed.
    pub slack: f64,
    /// Children's outcomes from the final round.
    pub children: Vec<NodeOutcome>,
}

impl NodeOutcome {
    pub fn objective(&self) -> f64 {
        self.solution.objective
    }

    /// Pre-order walk over this outcome and its descendants.
    pub fn iter(&self) -> impl Iterator<Item = &NodeOutcome> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            stack.extend(n.children.iter().rev());
            Some(n)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinationResult {
    pub objective: f64,
    pub outer_iterations: usize,
    /// Sum over outer rounds of every child's rounds.
    pub inner_iterations: usize,
    pub trace: IterationTrace,
    pub outcome: NodeOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AntiCyclingDecision {
    Proceed,
    /// Pin the children at the first-order master's solution instead of `l⁽ᵏ⁾`.
    Rollback,
}

/// Rollback when the first-order master returns the same boundary twice in a row.
pub fn anti_cycling_step(previous: Option<&DVector<f64>>, current: &DVector<f64>, tol: f64) -> AntiCyclingDecision {
    match previous {
        Some(p) if p.len() == current.len() && (p - current).amax() <= tol => AntiCyclingDecision::Rollback,
        _ => AntiCyclingDecision::Proceed,
    }
}

struct Local {
    program: ConvexProgram,
    /// original variable index → index in `program`
    var_map: Vec<usize>,
    relaxed: bool,
}

impl Local {
    fn local_primal(&self, sol: &Solution) -> DVector<f64> {
        DVector::from_iterator(self.var_map.len(), self.var_map.iter().map(|&i| sol.primal[i]))
    }

    fn slack(&self, sol: &Solution, original: &ConvexProgram) -> f64 {
        if !self.relaxed {
            return 0.0;
        }
        let VariableBlocks { n_internal: ni, n_upper: nu, .. } = original.blocks;
        (0..nu).fold(0.0f64, |a, i| a.max(sol.primal[ni + nu + i].abs()))
    }
}

fn solve_local(node: &HierarchyNode, pin: Option<&DVector<f64>>, config: &CoordinationConfig) -> Result<(Local, Solution), CoordinationError> {
    let mut program = node.problem.clone();
    if let Some(p) = pin {
        if p.len() != program.blocks.n_upper {
            return Err(CoordinationError::DimensionMismatch {
                what: "pin",
                expected: program.blocks.n_upper,
                found: p.len(),
            });
        }
        program = program.pinned(p.clone());
    }
    let identity: Vec<usize> = (0..program.dim()).collect();
    let sol = solver::solve_with(&program, None, &config.solver)
        .map_err(|source| CoordinationError::Program { node: node.id, source })?;
    match (sol.status, pin) {
        (SolveStatus::Optimal, _) => Ok((Local { program, var_map: identity, relaxed: false }, sol)),
        // a pinned solve that fails for any reason is retried with the penalized pin
        (_, Some(p)) => {
            let c = config.penalty.unwrap_or_else(|| default_penalty(&node.problem));
            let relaxed = relax_lower(&node.problem, p, &[c])?;
            log::debug!("node {}: pinned solve ended {:?}, relaxing with penalty {c:.3e}", node.id, sol.status);
            let sol = solver::solve_with(&relaxed, None, &config.solver)
                .map_err(|source| CoordinationError::Program { node: node.id, source })?;
            if sol.status != SolveStatus::Optimal {
                return Err(CoordinationError::Solve { node: node.id, status: sol.status });
            }
            let nu = node.problem.blocks.n_upper;
            let ni = node.problem.blocks.n_internal;
            let var_map = (0..node.problem.dim()).map(|i| if i < ni + nu { i } else { i + 2 * nu }).collect();
            Ok((Local { program: relaxed, var_map, relaxed: true }, sol))
        }
        (status, _) => Err(CoordinationError::Solve { node: node.id, status }),
    }
}

/// Cut `o ≥ model(I·l)` over the formulation's lower block.
fn cut_constraint(exp: &ProjectionExpansion, mapping: &DMatrix<f64>, l_start: usize, o: usize) -> Constraint {
    let b = &exp.base_point;
    let g = &exp.gradient;
    let nl = mapping.ncols();
    match &exp.hessian {
        None => {
            let coef = mapping.transpose() * g;
            let mut terms: Vec<(usize, f64)> =
                (0..nl).filter(|&j| coef[j] != 0.0).map(|j| (l_start + j, coef[j])).collect();
            terms.push((o, -1.0));
            Constraint::le(LinearExpr::new(terms, exp.base_value - g.dot(b)))
        }
        Some(h) => {
            // ½(Il − b)ᵀH(Il − b) ≤ o − gᵀ(Il − b) − J, kept centred at b so the cone
            // entries vanish at the base point instead of cancelling in large numbers
            let f = crate::linalg::psd_factor(h, 1e-12);
            let rows_coef = &f * mapping;
            let fb = &f * b;
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let w: Vec<LinearExpr> = (0..rows_coef.nrows())
                .map(|r| {
                    let terms = (0..nl)
                        .filter(|&j| rows_coef[(r, j)] != 0.0)
                        .map(|j| (l_start + j, s * rows_coef[(r, j)]))
                        .collect();
                    LinearExpr::new(terms, -s * fb[r])
                })
                .collect();
            let coef = mapping.transpose() * g;
            let mut terms: Vec<(usize, f64)> =
                (0..nl).filter(|&j| coef[j] != 0.0).map(|j| (l_start + j, -coef[j])).collect();
            terms.push((o, 1.0));
            let t = LinearExpr::new(terms, g.dot(b) - exp.base_value);
            Constraint::rotated_cone(w, t, LinearExpr::new(vec![], 1.0))
        }
    }
}

#[derive(Default)]
struct CutPool {
    firsts: Vec<ProjectionExpansion>,
    second: Option<ProjectionExpansion>,
}

impl CutPool {
    fn add(&mut self, pair: ProjectionPair, mode: CutMode, prune: bool) {
        if prune {
            self.firsts.retain(|f| (&f.base_point - &pair.first.base_point).amax() > 1e-12);
        }
        self.firsts.push(pair.first);
        self.second = match mode {
            CutMode::SecondOrder => pair.second,
            CutMode::FirstOrderOnly => None,
        };
    }

    /// Cuts for the coordination problem. First-order cuts based within `radius` of the
    /// second-order cut's base point are left out while that cut is present: the newest
    /// one shares its base point and is dominated everywhere, and older ones that nearly
    /// touch it make the multipliers of the coordination problem non-unique.
    fn coordination_cuts(&self, radius: f64) -> Vec<&ProjectionExpansion> {
        let mut out: Vec<&ProjectionExpansion> = Vec::with_capacity(self.firsts.len() + 1);
        match &self.second {
            Some(s) => {
                let r = radius * (1.0 + s.base_point.amax());
                out.extend(
                    self.firsts[..self.firsts.len() - 1]
                        .iter()
                        .filter(|f| (&f.base_point - &s.base_point).amax() > r),
                );
                out.push(s);
            }
            None => out.extend(&self.firsts),
        }
        out
    }
}

fn lower_block(program: &ConvexProgram, sol: &Solution) -> DVector<f64> {
    let r = program.blocks.lower();
    DVector::from_iterator(r.len(), r.map(|i| sol.primal[i]))
}

/// Coordinates the subtree rooted at `node` with its upper block pinned at `pin`
/// (`None` for the root).
pub fn compute_optimum(
    node: &HierarchyNode,
    pin: Option<&DVector<f64>>,
    config: &CoordinationConfig,
) -> Result<NodeOutcome, CoordinationError> {
    let (local, init) = solve_local(node, pin, config)?;
    let mut trace = IterationTrace::new(node.id);
    if local.relaxed && config.penalty == Some(0.0) {
        trace.warnings.push(format!("node {}: zero penalty makes the relaxation vacuous", node.id));
    }
    if node.is_leaf() {
        let local_primal = local.local_primal(&init);
        let slack = local.slack(&init, &node.problem);
        return Ok(NodeOutcome {
            id: node.id,
            name: node.name.clone(),
            local_objective: node.problem.objective_value(local_primal.as_slice()),
            local_primal,
            relaxed: local.relaxed,
            slack,
            formulation: local.program,
            solution: init,
            iterations: 1,
            trace,
            children: Vec::new(),
        });
    }

    let kids = node.children.len();
    let mut base = local.program.clone();
    let o0 = base.add_internal(kids);
    for k in 0..kids {
        base.objective.linear[o0 + k] += 1.0;
    }
    let shift = |i: usize| if i >= o0 { i + kids } else { i };
    let var_map: Vec<usize> = local.var_map.iter().map(|&i| shift(i)).collect();
    let l_start = base.blocks.lower().start;

    let mut pools: Vec<CutPool> = (0..kids).map(|_| CutPool::default()).collect();
    let mut l_prev = lower_block(&local.program, &init);
    let mut pin_source = l_prev.clone();
    let mut last_master: Option<DVector<f64>> = None;
    let mut last_change = f64::INFINITY;

    for k in 1..=config.max_outer {
        let answers: Vec<Result<(NodeOutcome, ProjectionPair), CoordinationError>> = node
            .children
            .par_iter()
            .map(|c| {
                let child_pin = &c.mapping * &pin_source;
                let out = compute_optimum(c, Some(&child_pin), config)?;
                let pair = projection::project(&out.formulation, &out.solution, config.act_tol, c.id)
                    .map_err(|source| CoordinationError::Projection { node: c.id, source })?;
                Ok((out, pair))
            })
            .collect();
        let mut outcomes = Vec::with_capacity(kids);
        for (pool, ans) in pools.iter_mut().zip(answers) {
            let (out, pair) = ans?;
            if let Some(note) = &pair.note {
                trace.warnings.push(format!("round {k}: {note}"));
            }
            pool.add(pair, config.cut_mode, config.prune_dominated_cuts);
            outcomes.push(out);
        }
        let inner: Vec<usize> = outcomes.iter().map(|o| o.iterations).collect();

        let mut upper = base.clone();
        for (c, pool) in pools.iter().enumerate() {
            for cut in pool.coordination_cuts(config.cut_merge_radius) {
                upper.push(cut_constraint(cut, &node.children[c].mapping, l_start, o0 + c));
            }
        }
        let sol = solver::solve_with(&upper, None, &config.solver)
            .map_err(|source| CoordinationError::Program { node: node.id, source })?;
        if sol.status != SolveStatus::Optimal {
            return Err(CoordinationError::Solve { node: node.id, status: sol.status });
        }
        let l_k = lower_block(&upper, &sol);
        let change = (&l_k - &l_prev).norm();
        last_change = change;

        let mut lower_bound = None;
        let mut rollback = false;
        let converged = change <= config.epsilon;
        if config.anti_cycling {
            let mut master = base.clone();
            for (c, pool) in pools.iter().enumerate() {
                for cut in &pool.firsts {
                    master.push(cut_constraint(cut, &node.children[c].mapping, l_start, o0 + c));
                }
            }
            let msol = solver::solve_with(&master, None, &config.solver)
                .map_err(|source| CoordinationError::Program { node: node.id, source })?;
            if msol.status == SolveStatus::Optimal {
                lower_bound = Some(msol.objective);
                let l_tilde = lower_block(&master, &msol);
                if !converged && anti_cycling_step(last_master.as_ref(), &l_tilde, 1e-9) == AntiCyclingDecision::Rollback {
                    rollback = true;
                }
                last_master = Some(l_tilde);
            }
        }

        trace.records.push(IterationRecord {
            k,
            boundary: l_k.iter().copied().collect(),
            upper_objective: sol.objective,
            child_values: (0..kids).map(|c| sol.primal[o0 + c]).collect(),
            lower_bound_objective: lower_bound,
            l_norm_change: change,
            inner_iterations: inner,
            rollback,
        });

        if converged {
            let local_primal = DVector::from_iterator(var_map.len(), var_map.iter().map(|&i| sol.primal[i]));
            let slack = local.slack(&sol, &node.problem);
            if local.relaxed && slack > 1e-7 {
                trace.warnings.push(format!("node {}: boundary slack {slack:.3e} at convergence", node.id));
            }
            for o in &outcomes {
                trace.warnings.extend(o.trace.warnings.iter().cloned());
            }
            return Ok(NodeOutcome {
                id: node.id,
                name: node.name.clone(),
                local_objective: node.problem.objective_value(local_primal.as_slice()),
                local_primal,
                relaxed: local.relaxed,
                slack,
                formulation: upper,
                solution: sol,
                iterations: k,
                trace,
                children: outcomes,
            });
        }
        pin_source = match (&last_master, rollback) {
            (Some(m), true) => m.clone(),
            _ => l_k.clone(),
        };
        l_prev = l_k;
    }
    Err(CoordinationError::MaxOuterIterations { node: node.id, iterations: config.max_outer, last_change })
}

/// Expansions of a converged formulation re-pinned at `pin`.
pub fn compute_projection_nested(
    formulation: &ConvexProgram,
    pin: &DVector<f64>,
    owner: NodeId,
    config: &CoordinationConfig,
) -> Result<ProjectionPair, CoordinationError> {
    let program = formulation.clone().pinned(pin.clone());
    let sol = solver::solve_with(&program, None, &config.solver)
        .map_err(|source| CoordinationError::Program { node: owner, source })?;
    if sol.status != SolveStatus::Optimal {
        return Err(CoordinationError::Solve { node: owner, status: sol.status });
    }
    projection::project(&program, &sol, config.act_tol, owner).map_err(|source| CoordinationError::Projection { node: owner, source })
}

/// Runs the coordination over the whole tree.
pub fn solve_nested(tree: &HierarchyNode, config: &CoordinationConfig) -> Result<CoordinationResult, CoordinationError> {
    config.validate()?;
    tree.validate()?;
    let outcome = compute_optimum(tree, None, config)?;
    let trace = outcome.trace.clone();
    Ok(CoordinationResult {
        objective: outcome.objective(),
        outer_iterations: outcome.iterations,
        inner_iterations: trace.inner_iterations(),
        trace,
        outcome,
    })
}

/// Two-level run: every child of `upper` must be a leaf.
pub fn solve_bilevel(upper: &HierarchyNode, config: &CoordinationConfig) -> Result<CoordinationResult, CoordinationError> {
    if upper.children.iter().any(|c| !c.is_leaf()) {
        return Err(CoordinationError::Shape("bilevel run needs leaf children".into()));
    }
    solve_nested(upper, config)
}
