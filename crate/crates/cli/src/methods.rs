use std::collections::BTreeMap;
use std::time::Instant;

use clap::ValueEnum;
use nalgebra::DVector;
use nestdec_core::{
    solve_admm, solve_benders, solve_centralized, solve_nested, AdmmConfig, CoordinationConfig, CoordinationError,
    HierarchyNode, IterationTrace, NodeId, SolverSettings,
};
use nestdec_grid::{solve_isolated, GridError};
use serde::Serialize;

use crate::problem::Loaded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Centralized,
    Nested,
    Benders,
    Admm,
    /// Every grid on its own at the agreed exchange schedules (grid files only).
    Isolated,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "centralized",
            Method::Nested => "nested",
            Method::Benders => "benders",
            Method::Admm => "admm",
            Method::Isolated => "isolated",
        }
    }
}

/// Knobs shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOptions {
    pub epsilon: f64,
    /// Outer-iteration cap; `None` keeps each method's own default.
    pub max_outer: Option<usize>,
    pub rho: f64,
    pub penalty: Option<f64>,
    pub anti_cycling: bool,
}

impl RunOptions {
    pub fn coordination(&self) -> CoordinationConfig {
        let mut c = CoordinationConfig {
            epsilon: self.epsilon,
            penalty: self.penalty,
            anti_cycling: self.anti_cycling,
            ..CoordinationConfig::default()
        };
        if let Some(m) = self.max_outer {
            c.max_outer = m;
        }
        c
    }

    pub fn admm(&self) -> AdmmConfig {
        let mut c = AdmmConfig::with_tolerance(self.rho, self.epsilon);
        if let Some(m) = self.max_outer {
            c.max_iter = m;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeReport {
    pub level: usize,
    pub index: usize,
    /// The node's own cost at the reported point.
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub relaxed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

/// Everything a method produced, converged or not.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub outcome: Result<Converged, Failure>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct Converged {
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub trace: Option<IterationTrace>,
    pub boundary_values: BTreeMap<String, Vec<f64>>,
    pub per_node: BTreeMap<String, NodeReport>,
}

/// A method that did not produce a solution.
#[derive(Clone, Debug)]
pub struct Failure {
    /// Bad data or configuration rather than a solver outcome.
    pub input_error: bool,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn run_method(method: Method, problem: &Loaded, options: &RunOptions) -> MethodRun {
    let start = Instant::now();
    let outcome = dispatch(method, problem, options);
    MethodRun { method, outcome, wall_time: start.elapsed().as_secs_f64() }
}

fn dispatch(method: Method, problem: &Loaded, options: &RunOptions) -> Result<Converged, Failure> {
    let tree = &problem.tree;
    let coordination = |r: nestdec_core::CoordinationResult| {
        let mut out = Converged::empty(r.objective, r.outer_iterations, r.inner_iterations, Some(r.trace));
        for n in r.outcome.iter() {
            out.add_node(tree, n.id, &n.name, &n.local_primal, n.local_objective, Some(n.iterations));
            if n.relaxed {
                let rep = out.per_node.get_mut(&n.name).expect("just added");
                rep.relaxed = true;
                rep.slack = Some(n.slack);
            }
        }
        out
    };
    match method {
        Method::Centralized => {
            let c = solve_centralized(tree, &options.coordination().solver).map_err(|e| coordination_failure(tree, e))?;
            let mut out = Converged::empty(c.objective, 1, 0, None);
            for node in tree.iter() {
                let local = c.layout.local(node.id, &c.solution.primal).expect("flattened layout covers the tree");
                let obj = node.problem.objective_value(local.as_slice());
                out.add_node(tree, node.id, &node.name, &local, obj, None);
            }
            Ok(out)
        }
        Method::Nested => solve_nested(tree, &options.coordination()).map(coordination).map_err(|e| coordination_failure(tree, e)),
        Method::Benders => solve_benders(tree, &options.coordination()).map(coordination).map_err(|e| coordination_failure(tree, e)),
        Method::Admm => {
            let r = solve_admm(tree, &options.admm()).map_err(|e| coordination_failure(tree, e))?;
            let mut out = Converged::empty(r.objective, r.outer_iterations, r.inner_iterations, Some(r.trace));
            for n in r.outcome.iter() {
                out.add_node(tree, n.id, &n.name, &n.local_primal, n.local_objective, Some(n.iterations));
            }
            Ok(out)
        }
        Method::Isolated => {
            let file = problem.grid.as_ref().ok_or_else(|| Failure {
                input_error: true,
                message: "the isolated method needs a grid file (--grid)".into(),
            })?;
            let grids = solve_isolated(file, &SolverSettings::default()).map_err(grid_failure)?;
            let total = grids.iter().map(|g| g.objective).sum();
            let mut out = Converged::empty(total, 1, grids.len(), None);
            for g in &grids {
                let id = tree.iter().find(|n| n.name == g.name).map(|n| n.id).unwrap_or_default();
                out.per_node.insert(
                    g.name.clone(),
                    NodeReport { level: id.level, index: id.index, objective: g.objective, iterations: None, relaxed: false, slack: None },
                );
            }
            Ok(out)
        }
    }
}

impl Converged {
    fn empty(objective: f64, outer: usize, inner: usize, trace: Option<IterationTrace>) -> Self {
        Self {
            objective,
            outer_iterations: outer,
            inner_iterations: inner,
            trace,
            boundary_values: BTreeMap::new(),
            per_node: BTreeMap::new(),
        }
    }

    fn add_node(
        &mut self,
        tree: &HierarchyNode,
        id: NodeId,
        name: &str,
        local: &DVector<f64>,
        objective: f64,
        iterations: Option<usize>,
    ) {
        if let Some(node) = tree.find(id) {
            let upper = node.problem.blocks.upper();
            if !upper.is_empty() && local.len() >= upper.end {
                self.boundary_values.insert(name.to_string(), local.as_slice()[upper].to_vec());
            }
        }
        self.per_node.insert(
            name.to_string(),
            NodeReport { level: id.level, index: id.index, objective, iterations, relaxed: false, slack: None },
        );
    }
}

fn coordination_failure(tree: &HierarchyNode, e: CoordinationError) -> Failure {
    let input_error = matches!(
        e,
        CoordinationError::Hierarchy(_)
            | CoordinationError::InvalidConfig(_)
            | CoordinationError::DimensionMismatch { .. }
            | CoordinationError::Shape(_)
            | CoordinationError::Program { .. }
    );
    // the error names (level, index); add the grid's own name
    let message = match e.node().and_then(|id| tree.find(id)) {
        Some(n) => format!("in {}: {e}", n.name),
        None => e.to_string(),
    };
    Failure { input_error, message }
}

fn grid_failure(e: GridError) -> Failure {
    Failure { input_error: !matches!(e, GridError::Isolated { .. }), message: e.to_string() }
}
