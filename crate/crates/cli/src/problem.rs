use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use nestdec_core::cases::{case_one, random_bilevel};
use nestdec_core::HierarchyNode;
use nestdec_grid::{build_hierarchy, parse_grid_file, GridFile};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltIn {
    /// Three-level toy problem with a known optimum.
    Case1,
    /// Two-level random QP/SOCP drawn from `--seed`.
    Random,
}

/// Where the hierarchy came from, echoed into reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Problem { name: BuiltIn, seed: u64 },
    Grid { path: PathBuf },
}

pub struct Loaded {
    pub tree: HierarchyNode,
    /// Present for grid files; isolated runs need the exchange schedules.
    pub grid: Option<GridFile>,
}

pub fn load_builtin(name: BuiltIn, seed: u64) -> Loaded {
    let tree = match name {
        BuiltIn::Case1 => case_one(),
        BuiltIn::Random => random_bilevel(seed),
    };
    Loaded { tree, grid: None }
}

pub fn load_grid(path: &Path) -> anyhow::Result<Loaded> {
    let file = parse_grid_file(path).with_context(|| format!("loading {}", path.display()))?;
    let built = build_hierarchy(&file).with_context(|| format!("building {}", path.display()))?;
    Ok(Loaded { tree: built.tree, grid: Some(file) })
}
