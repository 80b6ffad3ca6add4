//! Trees of local convex programs coupled through boundary variables.
//!
//! A child's upper block `u` is tied to its parent's lower block `l` through a
//! mapping matrix: `u_child = I · l_parent`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::program::ConvexProgram;
use crate::ProgramError;

/// Position of a node: `level` counts from 1 at the root, `index` is unique within a level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl NodeId {
    pub const ROOT: NodeId = NodeId { level: 1, index: 1 };
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.level, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HierarchyError {
    #[error("node {node}: mapping is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    MappingShape {
        node: NodeId,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("root node {0} has a non-empty upper boundary block")]
    RootHasUpper(NodeId),
    #[error("leaf node {0} has a non-empty lower boundary block")]
    LeafHasLower(NodeId),
    #[error("node {node}: {source}")]
    Program { node: NodeId, source: ProgramError },
}

/// One local problem and its children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub id: NodeId,
    pub name: String,
    /// The local program, unpinned. Its upper block is driven by the parent.
    pub problem: ConvexProgram,
    /// `I`: rows = this node's `n_upper`, columns = the parent's `n_lower`.
    pub mapping: DMatrix<f64>,
    pub children: Vec<HierarchyNode>,
}

impl HierarchyNode {
    pub fn new(name: impl Into<String>, problem: ConvexProgram) -> Self {
        let n_upper = problem.blocks.n_upper;
        Self {
            id: NodeId::ROOT,
            name: name.into(),
            problem: problem.unpinned(),
            mapping: DMatrix::zeros(n_upper, 0),
            children: Vec::new(),
        }
    }

    /// Attaches `child` with `u_child = mapping · l_self`.
    pub fn with_child(mut self, mut child: HierarchyNode, mapping: DMatrix<f64>) -> Self {
        child.mapping = mapping;
        self.children.push(child);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Numbers nodes level by level (root = (1, 1)), left to right.
    pub fn assign_ids(&mut self) {
        let mut counters: Vec<usize> = Vec::new();
        let mut queue: VecDeque<Vec<usize>> = VecDeque::from([Vec::new()]);
        while let Some(path) = queue.pop_front() {
            let node = path.iter().fold(&mut *self, |n, &k| &mut n.children[k]);
            let level = path.len() + 1;
            if counters.len() < level {
                counters.push(0);
            }
            counters[level - 1] += 1;
            node.id = NodeId { level, index: counters[level - 1] };
            for k in 0..node.children.len() {
                let mut p = path.clone();
                p.push(k);
                queue.push_back(p);
            }
        }
    }

    /// Checks tree shape, mapping dimensions and every local program.
    pub fn validate(&self) -> Result<(), HierarchyError> {
        if self.problem.blocks.n_upper != 0 {
            return Err(HierarchyError::RootHasUpper(self.id));
        }
        self.validate_subtree()
    }

    fn validate_subtree(&self) -> Result<(), HierarchyError> {
        self.problem
            .validate()
            .map_err(|source| HierarchyError::Program { node: self.id, source })?;
        if self.is_leaf() && self.problem.blocks.n_lower != 0 {
            return Err(HierarchyError::LeafHasLower(self.id));
        }
        for c in &self.children {
            let (r, k) = c.mapping.shape();
            let (er, ek) = (c.problem.blocks.n_upper, self.problem.blocks.n_lower);
            if (r, k) != (er, ek) {
                return Err(HierarchyError::MappingShape {
                    node: c.id,
                    rows: r,
                    cols: k,
                    expected_rows: er,
                    expected_cols: ek,
                });
            }
            c.validate_subtree()?;
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Depth-first (pre-order) iterator over the subtree.
    pub fn iter(&self) -> impl Iterator<Item = &HierarchyNode> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            stack.extend(n.children.iter().rev());
            Some(n)
        })
    }

    pub fn find(&self, id: NodeId) -> Option<&HierarchyNode> {
        self.iter().find(|n| n.id == id)
    }
}
