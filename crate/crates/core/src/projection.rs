//! Value-function expansions of a pinned lower problem.
//!
//! For a program pinned at `u = p`, the optimal value `J(p)` is expanded around `p`
//! from the optimal primal-dual pair alone:
//!
//! * gradient: `∇J = ∇ₚL(x̂, λ̂, p)` (envelope theorem);
//! * Hessian: `[R; I]ᵀ ∇²L [R; I]` where `R = dx/dp` solves the KKT sensitivity system
//!   restricted to the active constraints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hierarchy::NodeId;
use crate::linalg;
use crate::program::{ConstraintForm, ConstraintOracle, ConvexProgram};
use crate::solver::{Solution, SolveStatus};

pub const DEFAULT_ACT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectionError {
    #[error("solution is not optimal ({0:?})")]
    NotOptimal(SolveStatus),
    #[error("constraints {0:?} are weakly active (zero multiplier) or at a cone vertex")]
    DegenerateActiveSet(Vec<usize>),
    #[error("sensitivity system is singular (relative residual {residual:.2e})")]
    SingularKktMatrix { residual: f64 },
    #[error("value-function Hessian has eigenvalue {min_eigenvalue:.3e}")]
    NonConvexValueFunction { min_eigenvalue: f64 },
    #[error("expected a point of dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Split of the constraint indices at an optimum. Equalities are always active.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSetPartition {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub degenerate: Vec<usize>,
    /// Subset of `degenerate`: cone constraints sitting at their vertex, where the
    /// constraint is not differentiable.
    pub vertex: Vec<usize>,
}

impl ActiveSetPartition {
    /// Treats weakly active constraints as strictly inactive, as if each had been
    /// loosened by a tiny margin. Vertex cones stay degenerate.
    pub fn weak_as_inactive(&self) -> Self {
        let mut out = self.clone();
        out.degenerate.retain(|i| self.vertex.contains(i));
        out.inactive.extend(self.degenerate.iter().filter(|i| !self.vertex.contains(i)));
        out.inactive.sort_unstable();
        out
    }
}

/// `R = dx/dp` over the free variables and `S = dλ/dp` over all constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpansionOrder {
    First,
    Second,
}

/// Taylor model of a value function around `base_point`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionExpansion {
    pub base_point: DVector<f64>,
    pub base_value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
    pub order: ExpansionOrder,
    pub owner: NodeId,
}

impl ProjectionExpansion {
    pub fn dim(&self) -> usize {
        self.base_point.len()
    }

    pub fn evaluate(&self, point: &DVector<f64>) -> Result<f64, ProjectionError> {
        if point.len() != self.dim() {
            return Err(ProjectionError::DimensionMismatch { expected: self.dim(), found: point.len() });
        }
        let d = point - &self.base_point;
        let mut v = self.base_value + self.gradient.dot(&d);
        if let Some(h) = &self.hessian {
            v += 0.5 * d.dot(&(h * &d));
        }
        Ok(v)
    }

    /// The first-order model with the same base point and gradient.
    pub fn to_first_order(&self) -> Self {
        Self { hessian: None, order: ExpansionOrder::First, ..self.clone() }
    }

    pub fn with_owner(mut self, owner: NodeId) -> Self {
        self.owner = owner;
        self
    }
}

pub fn evaluate_expansion(exp: &ProjectionExpansion, point: &DVector<f64>) -> Result<f64, ProjectionError> {
    exp.evaluate(point)
}

fn require_optimal(solution: &Solution) -> Result<(), ProjectionError> {
    if solution.status == SolveStatus::Optimal {
        Ok(())
    } else {
        Err(ProjectionError::NotOptimal(solution.status))
    }
}

/// Classifies constraints as active, inactive or degenerate at `solution`.
///
/// Tolerances are `act_tol·(1 + max|g|)` on constraint values and
/// `act_tol·(1 + max λ)` on multipliers. A constraint that is neither clearly
/// tight-with-multiplier nor clearly slack-without-multiplier is degenerate.
pub fn classify_active(
    solution: &Solution,
    program: &ConvexProgram,
    act_tol: f64,
) -> Result<ActiveSetPartition, ProjectionError> {
    require_optimal(solution)?;
    let v = solution.primal.as_slice();
    let m = program.constraints.len();
    let values: Vec<f64> = program.constraints.iter().map(|c| c.value(v)).collect();
    let g_tol = act_tol * (1.0 + values.iter().fold(0.0f64, |a, g| a.max(g.abs())));
    // cone multipliers are measured by their head z0, which stays finite at a vertex
    let l_max = program.constraints.iter().enumerate().fold(0.0f64, |a, (i, c)| match c.form {
        ConstraintForm::Cone { .. } => a.max(solution.cone_duals[i].first().map_or(0.0, |z| z.abs())),
        _ => a.max(solution.duals[i].abs()),
    });
    let l_tol = act_tol * (1.0 + l_max);

    let mut part = ActiveSetPartition::default();
    for (i, c) in program.constraints.iter().enumerate() {
        if c.is_equality() {
            part.active.push(i);
            continue;
        }
        if let ConstraintForm::Cone { rows, bound } = &c.form {
            // classified on the cone itself: slack t − ‖r‖ and head multiplier z0
            let t = bound.eval(v);
            let rn = rows.iter().map(|r| r.eval(v).powi(2)).sum::<f64>().sqrt();
            let z0 = solution.cone_duals.get(i).and_then(|z| z.first().copied()).unwrap_or(0.0);
            let scale = 1.0 + t.abs();
            let tight = t - rn <= act_tol * scale;
            let priced = z0 > l_tol;
            if tight && priced && t <= act_tol {
                part.degenerate.push(i);
                part.vertex.push(i);
            } else if tight && priced {
                part.active.push(i);
            } else if !tight && !priced {
                part.inactive.push(i);
            } else if tight {
                part.degenerate.push(i);
            } else {
                // slack with a multiplier: complementarity not resolved
                part.degenerate.push(i);
            }
            continue;
        }
        let tight = values[i].abs() <= g_tol;
        let priced = solution.duals[i] > l_tol;
        match (tight, priced) {
            (true, true) => part.active.push(i),
            (false, false) => part.inactive.push(i),
            _ => part.degenerate.push(i),
        }
    }
    debug_assert_eq!(part.active.len() + part.inactive.len() + part.degenerate.len(), m);
    Ok(part)
}

/// `∇ₚL` at the solution. Cone constraints use their conic multipliers, which stay
/// meaningful at the cone vertex.
pub fn parameter_gradient(program: &ConvexProgram, solution: &Solution) -> DVector<f64> {
    let params = program.parameter_indices();
    let v = solution.primal.as_slice();
    let mut full = program.objective.gradient(v);
    for (i, c) in program.constraints.iter().enumerate() {
        match &c.form {
            ConstraintForm::Cone { rows, bound } => {
                let z = &solution.cone_duals[i];
                if z.is_empty() {
                    continue;
                }
                bound.accumulate(-z[0], full.as_mut_slice());
                for (r, &zr) in rows.iter().zip(&z[1..]) {
                    r.accumulate(-zr, full.as_mut_slice());
                }
            }
            _ => {
                let l = solution.duals[i];
                if l != 0.0 {
                    c.add_gradient(v, l, full.as_mut_slice());
                }
            }
        }
    }
    DVector::from_iterator(params.len(), params.iter().map(|&i| full[i]))
}

fn masked_duals(solution: &Solution, part: &ActiveSetPartition) -> Vec<f64> {
    let mut d = vec![0.0; solution.duals.len()];
    for &i in &part.active {
        d[i] = solution.duals[i];
    }
    d
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| m[(rows[a], cols[b])])
}

/// Solves the KKT sensitivity system over the active set:
///
/// ```text
/// [ H_xx  G_Aᵀ ] [ R   ]     [ H_xp ]
/// [ G_A   0    ] [ S_A ] = − [ G_Ap ]
/// ```
///
/// Primal directions left undetermined by the system (e.g. variables with no cost
/// and no active constraint) get a near minimum-norm value; they do not affect the
/// value-function Hessian.
pub fn sensitivity(
    program: &ConvexProgram,
    solution: &Solution,
    partition: &ActiveSetPartition,
) -> Result<SensitivityResult, ProjectionError> {
    require_optimal(solution)?;
    if !partition.degenerate.is_empty() {
        return Err(ProjectionError::DegenerateActiveSet(partition.degenerate.clone()));
    }
    let free = program.free_indices();
    let params = program.parameter_indices();
    let (nf, np, na) = (free.len(), params.len(), partition.active.len());
    let m = program.constraints.len();
    if np == 0 {
        return Ok(SensitivityResult { r: DMatrix::zeros(nf, 0), s: DMatrix::zeros(m, 0) });
    }
    let v = solution.primal.as_slice();
    let duals = masked_duals(solution, partition);
    let h = program.lagrangian_hessian(v, &duals);
    let grads: Vec<DVector<f64>> =
        partition.active.iter().map(|&i| program.constraints[i].gradient(v)).collect();

    let n = nf + na;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (nf, nf)).copy_from(&submatrix(&h, &free, &free));
    let mut rhs = DMatrix::zeros(n, np);
    rhs.view_mut((0, 0), (nf, np)).copy_from(&(-submatrix(&h, &free, &params)));
    for (a, g) in grads.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            k[(nf + a, c)] = g[j];
            k[(c, nf + a)] = g[j];
        }
        for (c, &j) in params.iter().enumerate() {
            rhs[(nf + a, c)] = -g[j];
        }
    }
    let delta = 1e-10 * (1.0 + k.amax());
    let reg: Vec<f64> = (0..n).map(|i| if i < nf { delta } else { -delta }).collect();
    let (x, residual) = linalg::solve_regularized(&k, &reg, &rhs, 20)
        .ok_or(ProjectionError::SingularKktMatrix { residual: f64::INFINITY })?;
    if residual > 1e-7 {
        return Err(ProjectionError::SingularKktMatrix { residual });
    }
    let r = x.rows(0, nf).into_owned();
    let mut s = DMatrix::zeros(m, np);
    for (a, &i) in partition.active.iter().enumerate() {
        s.set_row(i, &x.row(nf + a));
    }
    Ok(SensitivityResult { r, s })
}

fn base_point(program: &ConvexProgram) -> DVector<f64> {
    program.fixed_upper.clone().unwrap_or_else(|| DVector::zeros(0))
}

/// First-order (cutting-plane) model: `J(p) ≥ J(p̂) + ∇Jᵀ(p − p̂)` for convex problems.
pub fn first_order_expansion(
    program: &ConvexProgram,
    solution: &Solution,
) -> Result<ProjectionExpansion, ProjectionError> {
    require_optimal(solution)?;
    Ok(ProjectionExpansion {
        base_point: base_point(program),
        base_value: solution.objective,
        gradient: parameter_gradient(program, solution),
        hessian: None,
        order: ExpansionOrder::First,
        owner: NodeId::default(),
    })
}

/// Second-order model with Hessian `[R; I]ᵀ ∇²L [R; I]`, symmetrized and with tiny
/// negative eigenvalues clipped to zero.
pub fn second_order_expansion(
    program: &ConvexProgram,
    solution: &Solution,
    partition: &ActiveSetPartition,
    sens: &SensitivityResult,
) -> Result<ProjectionExpansion, ProjectionError> {
    require_optimal(solution)?;
    let free = program.free_indices();
    let params = program.parameter_indices();
    let v = solution.primal.as_slice();
    let h = program.lagrangian_hessian(v, &masked_duals(solution, partition));
    let h_ff = submatrix(&h, &free, &free);
    let h_fp = submatrix(&h, &free, &params);
    let h_pp = submatrix(&h, &params, &params);
    let r = &sens.r;
    let cross = r.transpose() * &h_fp;
    let hess = r.transpose() * &h_ff * r + &cross + cross.transpose() + h_pp;
    let hess = linalg::symmetrize(&hess);
    let floor = 1e-8 * (1.0 + hess.amax());
    let hess = linalg::clip_to_psd(&hess, floor).ok_or_else(|| ProjectionError::NonConvexValueFunction {
        min_eigenvalue: linalg::min_eigenvalue(&hess),
    })?;
    Ok(ProjectionExpansion {
        base_point: base_point(program),
        base_value: solution.objective,
        gradient: parameter_gradient(program, solution),
        hessian: Some(hess),
        order: ExpansionOrder::Second,
        owner: NodeId::default(),
    })
}

/// The Hessian through the other route: `H_pp + H_px R + G_Apᵀ S_A`.
pub fn hessian_via_multiplier_sensitivity(
    program: &ConvexProgram,
    solution: &Solution,
    partition: &ActiveSetPartition,
    sens: &SensitivityResult,
) -> DMatrix<f64> {
    let free = program.free_indices();
    let params = program.parameter_indices();
    let v = solution.primal.as_slice();
    let h = program.lagrangian_hessian(v, &masked_duals(solution, partition));
    let mut out = submatrix(&h, &params, &params) + submatrix(&h, &params, &free) * &sens.r;
    for &i in &partition.active {
        let g = program.constraints[i].gradient(v);
        for (a, &pa) in params.iter().enumerate() {
            for b in 0..params.len() {
                out[(a, b)] += g[pa] * sens.s[(i, b)];
            }
        }
    }
    out
}

/// Both expansions of a solved pinned program.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionPair {
    pub first: ProjectionExpansion,
    /// Absent when the second-order model could not be formed (see `note`).
    pub second: Option<ProjectionExpansion>,
    pub note: Option<String>,
}

/// Computes first- and second-order expansions. Weakly active constraints are first
/// treated as strictly inactive; if the second-order model still cannot be formed,
/// only the first-order model is returned, with the reason in `note`.
pub fn project(
    program: &ConvexProgram,
    solution: &Solution,
    act_tol: f64,
    owner: NodeId,
) -> Result<ProjectionPair, ProjectionError> {
    let first = first_order_expansion(program, solution)?.with_owner(owner);
    let part = classify_active(solution, program, act_tol)?;
    let mut note = None;
    let part = if part.degenerate.is_empty() {
        part
    } else {
        let relaxed = part.weak_as_inactive();
        let msg = format!("node {owner}: degenerate constraints {:?} treated as inactive", part.degenerate);
        log::debug!("{msg}");
        note = Some(msg);
        relaxed
    };
    let second = sensitivity(program, solution, &part)
        .and_then(|sens| second_order_expansion(program, solution, &part, &sens));
    match second {
        Ok(s) => Ok(ProjectionPair { first, second: Some(s.with_owner(owner)), note }),
        Err(e) => {
            let msg = format!("node {owner}: first-order expansion only ({e})");
            log::debug!("{msg}");
            Ok(ProjectionPair { first, second: None, note: Some(msg) })
        }
    }
}
