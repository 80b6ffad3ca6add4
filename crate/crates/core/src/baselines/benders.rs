use crate::coordinator::{solve_nested, CoordinationConfig, CoordinationError, CoordinationResult, CutMode};
use crate::hierarchy::HierarchyNode;

/// Nested generalized Benders: the same coordination loop with first-order cuts only.
pub fn solve_benders(tree: &HierarchyNode, config: &CoordinationConfig) -> Result<CoordinationResult, CoordinationError> {
    let config = CoordinationConfig { cut_mode: CutMode::FirstOrderOnly, ..config.clone() };
    solve_nested(tree, &config)
}
