//! Per-iteration records of a coordination run.

use serde::{Deserialize, Serialize};

use crate::hierarchy::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Lower boundary vector `l⁽ᵏ⁾` of the coordinating node.
    pub boundary: Vec<f64>,
    /// Objective of the coordination problem: local cost plus `Σ o`.
    pub upper_objective: f64,
    /// Value-function estimate `o` per child at `l⁽ᵏ⁾`.
    pub child_values: Vec<f64>,
    /// Objective of the first-order-only master, when anti-cycling is on and the master
    /// is bounded.
    pub lower_bound_objective: Option<f64>,
    /// `‖l⁽ᵏ⁾ − l⁽ᵏ⁻¹⁾‖₂`.
    pub l_norm_change: f64,
    /// Iterations each child spent to answer this round (1 for a leaf).
    pub inner_iterations: Vec<usize>,
    /// The pins for the next round come from the first-order master instead of `l⁽ᵏ⁾`.
    pub rollback: bool,
}

impl IterationRecord {
    pub fn sum_o(&self) -> f64 {
        self.child_values.iter().sum()
    }

    pub fn inner_total(&self) -> usize {
        self.inner_iterations.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub node: NodeId,
    pub records: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

pub const TRACE_HEADER: [&str; 6] = ["k", "l_norm_change", "upper_obj", "lower_bound_obj", "sum_o", "inner_iters"];

impl IterationTrace {
    pub fn new(node: NodeId) -> Self {
        Self { node, ..Self::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }

    pub fn inner_iterations(&self) -> usize {
        self.records.iter().map(|r| r.inner_total()).sum()
    }

    /// Rows matching [`TRACE_HEADER`]; a missing lower bound is an empty field.
    pub fn csv_rows(&self) -> Vec<[String; 6]> {
        self.records
            .iter()
            .map(|r| {
                [
                    r.k.to_string(),
                    format!("{:e}", r.l_norm_change),
                    format!("{:.12e}", r.upper_objective),
                    r.lower_bound_objective.map(|v| format!("{v:.12e}")).unwrap_or_default(),
                    format!("{:.12e}", r.sum_o()),
                    r.inner_total().to_string(),
                ]
            })
            .collect()
    }

    /// Lower-bound objectives recorded so far, in iteration order.
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.lower_bound_objective).collect()
    }
}
