//! Nested decomposition for multilevel hierarchical convex programs.
//!
//! Each level of a tree of convex programs exchanges only boundary values (downward)
//! and first/second-order expansions of its value function (upward). The crate ships
//! its own conic interior-point solver, the KKT sensitivity machinery that produces the
//! expansions, the recursive coordinator, and the baselines used to check it.

pub mod baselines;
pub mod cases;
pub mod coordinator;
pub mod hierarchy;
mod linalg;
pub mod program;
pub mod projection;
pub mod solver;
pub mod trace;

pub use program::{
    Constraint, ConstraintForm, ConstraintOracle, ConvexProgram, LinearExpr, QuadraticObjective, Sense,
    VariableBlocks,
};
pub use hierarchy::{HierarchyError, HierarchyNode, NodeId};
pub use projection::{
    classify_active, evaluate_expansion, first_order_expansion, second_order_expansion, sensitivity,
    ActiveSetPartition, ExpansionOrder, ProjectionError, ProjectionExpansion, SensitivityResult,
};
pub use baselines::{solve_admm, solve_benders, solve_centralized, AdmmConfig, AdmmResult, CentralizedResult};
pub use coordinator::{
    anti_cycling_step, compute_optimum, default_penalty, relax_lower, solve_bilevel, solve_nested, AntiCyclingDecision,
    CoordinationConfig, CoordinationError, CoordinationResult, CutMode, NodeOutcome,
};
pub use solver::{kkt_residual, solve, solve_with, KktResiduals, Solution, SolveStatus, SolverSettings};
pub use trace::{IterationRecord, IterationTrace, TRACE_HEADER};

/// Malformed program data.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),
    #[error("{0} matrix is not symmetric")]
    NotSymmetric(&'static str),
    #[error("{}", match .constraint { Some(k) => format!("constraint {k} is not convex"), None => "objective is not convex".to_string() })]
    NotConvex { constraint: Option<usize> },
    #[error("constraint {constraint} references variable {index} but the program has {dim}")]
    IndexOutOfRange { constraint: usize, index: usize, dim: usize },
    #[error("equality constraint {0} is not affine")]
    NonAffineEquality(usize),
}
