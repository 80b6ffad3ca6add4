//! Grid trees: file schema, boundary coupling and isolated runs.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use nestdec_core::{solve_with, Constraint, HierarchyNode, LinearExpr, SolveStatus, SolverSettings};
use serde::{Deserialize, Serialize};

use crate::built::{BuiltGrid, PortBlock};
use crate::ded::build_ded;
use crate::opf::build_opf_radial;
use crate::spec::{GridModel, GridSpec, Quantity};
use crate::GridError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Per-unit on a common base.
    Pu,
    Si,
}

/// Top level of a grid-spec file: the root grid plus its subtree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub format_version: u32,
    pub units: Units,
    #[serde(flatten)]
    pub root: GridNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    #[serde(flatten)]
    pub spec: GridSpec,
    #[serde(default, skip_serializing_if = "Hierarchy::is_empty")]
    pub hierarchy: Hierarchy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    #[serde(default)]
    pub children: Vec<GridNode>,
    #[serde(default)]
    pub coupling: Vec<Coupling>,
}

impl Hierarchy {
    pub fn is_empty(&self) -> bool {
        self.children.is_empty() && self.coupling.is_empty()
    }
}

/// Links a lower port of the parent to the upper port of a child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub child: String,
    pub parent_port: String,
    pub child_port: String,
    /// Exchange agreed in advance, used by isolated runs. Empty means zero power and
    /// unit squared voltage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<f64>,
}

impl GridNode {
    pub fn node_count(&self) -> usize {
        1 + self.hierarchy.children.iter().map(GridNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.hierarchy.children.iter().map(GridNode::depth).max().unwrap_or(0)
    }

    /// Pre-order walk.
    pub fn iter(&self) -> Vec<&GridNode> {
        let mut out = vec![self];
        for c in &self.hierarchy.children {
            out.extend(c.iter());
        }
        out
    }

    fn coupling_for(&self, child: &str) -> Option<&Coupling> {
        self.hierarchy.coupling.iter().find(|c| c.child == child)
    }
}

impl GridFile {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.format_version != FORMAT_VERSION {
            return Err(GridError::UnsupportedVersion(self.format_version));
        }
        let mut names = HashSet::new();
        for node in self.root.iter() {
            node.spec.validate()?;
            if !names.insert(node.spec.name.as_str()) {
                return Err(GridError::DuplicateId { grid: node.spec.name.clone(), kind: "grid", id: node.spec.name.clone() });
            }
            let children: HashSet<&str> = node.hierarchy.children.iter().map(|c| c.spec.name.as_str()).collect();
            for c in &node.hierarchy.coupling {
                if !children.contains(c.child.as_str()) {
                    return Err(GridError::Coupling(format!("grid {}: coupling names unknown child {}", node.spec.name, c.child)));
                }
            }
            for c in &node.hierarchy.children {
                if c.spec.model != node.spec.model {
                    return Err(GridError::Coupling(format!("grid {} and child {} use different models", node.spec.name, c.spec.name)));
                }
            }
        }
        Ok(())
    }
}

/// Builds the program for one grid according to its model.
pub fn build_grid(spec: &GridSpec) -> Result<BuiltGrid, GridError> {
    match spec.model {
        GridModel::Ded => build_ded(spec),
        GridModel::OpfRadial => build_opf_radial(spec),
        GridModel::Meshed => Err(GridError::MeshedModel(spec.name.clone())),
    }
}

/// Mapping `I` with `u_child = I·l_parent`. Without a coupling the child is decoupled
/// and `I` has no rows.
pub fn attach_boundary(parent: &BuiltGrid, child: &BuiltGrid, coupling: Option<&Coupling>) -> Result<DMatrix<f64>, GridError> {
    let cols = parent.program.blocks.n_lower;
    let Some(c) = coupling else {
        return Ok(DMatrix::zeros(0, cols));
    };
    let from = parent
        .lower_port(&c.parent_port)
        .ok_or_else(|| GridError::UnknownPort { grid: parent.name.clone(), port: c.parent_port.clone() })?;
    let to = child
        .upper
        .as_ref()
        .filter(|u| u.name == c.child_port)
        .ok_or_else(|| GridError::UnknownPort { grid: child.name.clone(), port: c.child_port.clone() })?;
    if to.quantities.len() == 1 && from.quantities.len() == 1 && to.dim != from.dim {
        return Err(GridError::Coupling(format!(
            "port {} has {} periods but port {} has {}",
            from.name, from.dim, to.name, to.dim
        )));
    }
    let mut m = DMatrix::zeros(to.dim, cols);
    for row in 0..to.dim {
        let (q, t) = port_coordinate(to, row);
        let col = from.coordinate(q, t).ok_or_else(|| GridError::UnmatchedQuantity {
            parent_port: from.name.clone(),
            child_port: to.name.clone(),
            quantity: q,
        })?;
        m[(row, from.offset + col)] = 1.0;
    }
    Ok(m)
}

fn port_coordinate(b: &PortBlock, k: usize) -> (Quantity, usize) {
    if b.quantities.len() == 1 {
        (b.quantities[0], k)
    } else {
        (b.quantities[k], 0)
    }
}

/// A hierarchy of grid programs. `grids` follows the tree's pre-order.
#[derive(Clone, Debug)]
pub struct GridTree {
    pub tree: HierarchyNode,
    pub grids: Vec<BuiltGrid>,
}

impl GridTree {
    pub fn grid(&self, name: &str) -> Option<&BuiltGrid> {
        self.grids.iter().find(|g| g.name == name)
    }
}

/// Builds every grid and wires parents to children through their ports.
pub fn build_hierarchy(file: &GridFile) -> Result<GridTree, GridError> {
    file.validate()?;
    let mut grids = Vec::new();
    let mut tree = build_node(&file.root, &mut grids)?;
    tree.assign_ids();
    tree.validate()?;
    Ok(GridTree { tree, grids })
}

fn build_node(node: &GridNode, out: &mut Vec<BuiltGrid>) -> Result<HierarchyNode, GridError> {
    let built = build_grid(&node.spec)?;
    let mut h = HierarchyNode::new(node.spec.name.clone(), built.program.clone());
    let pos = out.len();
    out.push(built);
    let mut used = HashSet::new();
    for child in &node.hierarchy.children {
        let coupling = node
            .coupling_for(&child.spec.name)
            .ok_or_else(|| GridError::Coupling(format!("grid {}: no coupling for child {}", node.spec.name, child.spec.name)))?;
        if !used.insert(coupling.parent_port.clone()) {
            return Err(GridError::Coupling(format!("grid {}: port {} feeds two children", node.spec.name, coupling.parent_port)));
        }
        let child_pos = out.len();
        let sub = build_node(child, out)?;
        let mapping = attach_boundary(&out[pos], &out[child_pos], Some(coupling))?;
        h = h.with_child(sub, mapping);
    }
    for port in node.spec.lower_ports() {
        if !used.contains(&port.name) {
            return Err(GridError::Coupling(format!("grid {}: lower port {} has no child", node.spec.name, port.name)));
        }
    }
    Ok(h)
}

/// Cost of one grid run on its own.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IsolatedGrid {
    pub name: String,
    pub level: usize,
    pub objective: f64,
}

fn schedule_for(c: &Coupling, port: &PortBlock) -> Result<DVector<f64>, GridError> {
    if c.schedule.is_empty() {
        return Ok(DVector::from_iterator(port.dim, (0..port.dim).map(|k| match port_coordinate(port, k).0 {
            Quantity::V => 1.0,
            _ => 0.0,
        })));
    }
    if c.schedule.len() != port.dim {
        return Err(GridError::Coupling(format!(
            "schedule for {} has {} entries, port {} needs {}",
            c.child,
            c.schedule.len(),
            port.name,
            port.dim
        )));
    }
    Ok(DVector::from_column_slice(&c.schedule))
}

/// Runs every grid on its own with all boundary exchanges fixed to the agreed schedules.
pub fn solve_isolated(file: &GridFile, settings: &SolverSettings) -> Result<Vec<IsolatedGrid>, GridError> {
    file.validate()?;
    let mut out = Vec::new();
    isolated_node(&file.root, None, 1, settings, &mut out)?;
    Ok(out)
}

fn isolated_node(
    node: &GridNode,
    incoming: Option<&Coupling>,
    level: usize,
    settings: &SolverSettings,
    out: &mut Vec<IsolatedGrid>,
) -> Result<(), GridError> {
    let built = build_grid(&node.spec)?;
    let mut program = built.program.clone();
    if let (Some(c), Some(u)) = (incoming, &built.upper) {
        program = program.pinned(schedule_for(c, u)?);
    } else if built.upper.is_some() {
        return Err(GridError::Coupling(format!("grid {} has an upper port but no parent", node.spec.name)));
    }
    let lower_start = program.blocks.lower().start;
    for port in &built.lower {
        let c = node
            .hierarchy
            .coupling
            .iter()
            .find(|c| c.parent_port == port.name)
            .ok_or_else(|| GridError::Coupling(format!("grid {}: lower port {} has no child", node.spec.name, port.name)))?;
        let s = schedule_for(c, port)?;
        for k in 0..port.dim {
            program.push(Constraint::eq(LinearExpr::var(lower_start + port.offset + k, 1.0).plus(-s[k])));
        }
    }
    let sol = solve_with(&program, None, settings).map_err(|source| GridError::Program { grid: node.spec.name.clone(), source })?;
    if sol.status != SolveStatus::Optimal {
        return Err(GridError::Isolated { grid: node.spec.name.clone(), status: sol.status });
    }
    out.push(IsolatedGrid { name: node.spec.name.clone(), level, objective: sol.objective });
    for child in &node.hierarchy.children {
        isolated_node(child, node.coupling_for(&child.spec.name), level + 1, settings, out)?;
    }
    Ok(())
}
