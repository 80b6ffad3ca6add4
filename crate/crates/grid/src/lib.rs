//! Power-grid models for nested decomposition.
//!
//! Two local models are provided: a multi-period economic dispatch QP and a radial
//! branch-flow OPF relaxed to an SOCP. Adjacent grids appear in each other's models as
//! virtual generators (ports); a grid-spec file describes a tree of grids and which
//! ports couple them, and [`build_hierarchy`] turns it into a [`HierarchyNode`] tree.
//!
//! [`HierarchyNode`]: nestdec_core::HierarchyNode

mod built;
mod ded;
mod network;
mod opf;
mod spec;

use std::path::Path;

pub use built::{BuiltGrid, PortBlock};
pub use ded::build_ded;
pub use network::{
    attach_boundary, build_grid, build_hierarchy, solve_isolated, Coupling, GridFile, GridNode, GridTree, Hierarchy,
    IsolatedGrid, Units, FORMAT_VERSION,
};
pub use opf::{build_opf_radial, orient_radial, OrientedLine};
pub use spec::{Bus, Generator, GridModel, GridSpec, Line, Load, Port, PortRole, Quantity, Reserves};

use nestdec_core::{HierarchyError, ProgramError, SolveStatus};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("grid {0}: meshed AC models are nonconvex and not supported; use opf_radial")]
    MeshedModel(String),
    #[error("grid {grid}: generator {generator} has a2 = {a2}, cost must be convex")]
    ConvexityViolation { grid: String, generator: String, a2: f64 },
    #[error("grid {grid}: {kind} {id} has inconsistent bounds")]
    InvalidBounds { grid: String, kind: &'static str, id: String },
    #[error("grid {grid}: duplicate {kind} id {id}")]
    DuplicateId { grid: String, kind: &'static str, id: String },
    #[error("grid {grid}: {kind} {id} refers to missing bus {bus}")]
    DanglingBus { grid: String, kind: &'static str, id: String, bus: u32 },
    #[error("grid {grid}: {what} of {id} needs {expected} finite values, found {found}")]
    SeriesLength { grid: String, what: &'static str, id: String, expected: usize, found: usize },
    #[error("grid {grid}: {what}")]
    Invalid { grid: String, what: String },
    #[error("grid {grid}: network is not radial ({reason})")]
    NonRadialTopology { grid: String, reason: String },
    #[error("grid {0}: radial model needs an upper port or a slack_bus")]
    MissingSlack(String),
    #[error("grid {grid}: no port named {port}")]
    UnknownPort { grid: String, port: String },
    #[error("port {child_port} expects {quantity:?}, which port {parent_port} does not carry")]
    UnmatchedQuantity { parent_port: String, child_port: String, quantity: Quantity },
    #[error("{0}")]
    Coupling(String),
    #[error("grid {grid}: isolated run ended with {status:?}")]
    Isolated { grid: String, status: SolveStatus },
    #[error("grid {grid}: {source}")]
    Program { grid: String, source: ProgramError },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Parses grid-spec JSON text and validates it.
pub fn parse_grid_str(text: &str) -> Result<GridFile, GridError> {
    let file: GridFile = serde_json::from_str(text).map_err(|e| GridError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.validate()?;
    Ok(file)
}

pub fn parse_grid_file(path: impl AsRef<Path>) -> Result<GridFile, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io { path: path.display().to_string(), source })?;
    parse_grid_str(&text)
}

/// Canonical pretty-printed JSON. Parsing it gives back an equal [`GridFile`].
pub fn to_json_string(file: &GridFile) -> String {
    serde_json::to_string_pretty(file).expect("grid files serialize")
}
