use nestdec_core::{Constraint, ConvexProgram, LinearExpr};

use crate::spec::Quantity;

/// Boundary coordinates of one port inside a program's upper or lower block.
#[derive(Clone, Debug, PartialEq)]
pub struct PortBlock {
    pub name: String,
    pub quantities: Vec<Quantity>,
    /// Offset inside the block (not the full variable vector).
    pub offset: usize,
    pub dim: usize,
}

impl PortBlock {
    /// Position of `(quantity, period)` inside the port. Dispatch ports have one
    /// quantity and one coordinate per period; branch-flow ports one per quantity.
    pub fn coordinate(&self, quantity: Quantity, period: usize) -> Option<usize> {
        let k = self.quantities.iter().position(|&q| q == quantity)?;
        if self.quantities.len() == 1 {
            (period < self.dim).then_some(period)
        } else {
            (period == 0).then_some(k)
        }
    }
}

/// A grid turned into a convex program, with labels for every variable.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltGrid {
    pub name: String,
    pub program: ConvexProgram,
    pub upper: Option<PortBlock>,
    pub lower: Vec<PortBlock>,
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl BuiltGrid {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn lower_port(&self, name: &str) -> Option<&PortBlock> {
        self.lower.iter().find(|p| p.name == name)
    }
}

/// `lo ≤ expr ≤ hi`; equal bounds become one equality.
pub(crate) fn push_range(p: &mut ConvexProgram, expr: LinearExpr, lo: Option<f64>, hi: Option<f64>) {
    match (lo, hi) {
        (Some(a), Some(b)) if a == b => {
            p.push(Constraint::eq(expr.plus(-a)));
        }
        _ => {
            if let Some(a) = lo.filter(|a| a.is_finite()) {
                p.push(Constraint::le(expr.negated().plus(a)));
            }
            if let Some(b) = hi.filter(|b| b.is_finite()) {
                p.push(Constraint::le(expr.plus(-b)));
            }
        }
    }
}
