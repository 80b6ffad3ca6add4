use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use nestdec_core::{IterationTrace, TRACE_HEADER};
use serde::Serialize;

use crate::methods::{MethodRun, NodeReport, RunOptions};
use crate::problem::Source;

/// Run configuration echoed into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub source: Source,
    pub options: RunOptions,
}

/// Solution file. Holds no timings, so identical runs give identical bytes.
#[derive(Debug, Serialize)]
pub struct SolutionFile<'a> {
    pub method: &'static str,
    pub status: &'static str,
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<&'a str>,
    pub outer_iterations: Option<usize>,
    pub inner_iterations: Option<usize>,
    pub boundary_values: BTreeMap<String, Vec<f64>>,
    pub per_node: BTreeMap<String, NodeReport>,
    pub config: &'a ConfigEcho,
}

impl<'a> SolutionFile<'a> {
    pub fn new(run: &'a MethodRun, config: &'a ConfigEcho) -> Self {
        match &run.outcome {
            Ok(c) => Self {
                method: run.method.name(),
                status: "converged",
                objective: Some(c.objective),
                error: None,
                outer_iterations: Some(c.outer_iterations),
                inner_iterations: Some(c.inner_iterations),
                boundary_values: c.boundary_values.clone(),
                per_node: c.per_node.clone(),
                config,
            },
            Err(f) => Self {
                method: run.method.name(),
                status: if f.input_error { "input_error" } else { "not_converged" },
                objective: None,
                error: Some(&f.message),
                outer_iterations: None,
                inner_iterations: None,
                boundary_values: BTreeMap::new(),
                per_node: BTreeMap::new(),
                config,
            },
        }
    }
}

/// One method's line in the stdout summary and comparison table.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub method: &'static str,
    pub status: &'static str,
    pub objective: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub inner_iterations: Option<usize>,
    pub wall_time_s: f64,
    pub trace_rows: usize,
    pub config: &'a ConfigEcho,
}

impl<'a> RunReport<'a> {
    pub fn new(run: &MethodRun, config: &'a ConfigEcho) -> Self {
        let sol = SolutionFile::new(run, config);
        Self {
            method: sol.method,
            status: sol.status,
            objective: sol.objective,
            outer_iterations: sol.outer_iterations,
            inner_iterations: sol.inner_iterations,
            wall_time_s: run.wall_time,
            trace_rows: run.outcome.as_ref().ok().and_then(|c| c.trace.as_ref()).map_or(0, |t| t.records.len()),
            config,
        }
    }
}

pub fn write_solution(path: &Path, sol: &SolutionFile) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(sol)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes the trace as CSV. An empty trace is an error and leaves no file behind.
pub fn emit_trace(trace: &IterationTrace, path: &Path) -> anyhow::Result<()> {
    if trace.is_empty() {
        bail!("trace is empty; {} not written", path.display());
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for row in trace.csv_rows() {
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cell(v: Option<impl ToString>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

/// Fixed-width comparison table; `reference` adds a relative-gap column.
pub fn format_table(rows: &[RunReport], reference: Option<f64>) -> String {
    let mut out = format!(
        "{:<12} {:<14} {:>20} {:>11} {:>7} {:>7} {:>10}\n",
        "method", "status", "objective", "rel_gap", "outer", "inner", "time_s"
    );
    for r in rows {
        let gap = match (r.objective, reference) {
            (Some(o), Some(c)) => format!("{:.3e}", (o - c).abs() / c.abs().max(1.0)),
            _ => "-".into(),
        };
        out.push_str(&format!(
            "{:<12} {:<14} {:>20} {:>11} {:>7} {:>7} {:>10.3}\n",
            r.method,
            r.status,
            r.objective.map_or_else(|| "-".into(), |o| format!("{o:.10}")),
            gap,
            cell(r.outer_iterations),
            cell(r.inner_iterations),
            r.wall_time_s
        ));
    }
    out
}
