use std::path::PathBuf;

use nestdec_core::{solve_centralized, solve_nested, CoordinationConfig, SolverSettings};
use nestdec_grid::{build_hierarchy, parse_grid_file, solve_isolated};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

// Optima of the flattened fixtures from an independent cvxpy/Clarabel model
// (fixtures/make_fixtures.py).
const DED_REFERENCE: f64 = 165016.63220899977;
const OPF_REFERENCE: f64 = 79.39196143150795;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn ded_centralized_matches_reference() {
    let tree = build_hierarchy(&parse_grid_file(fixture("trilevel_ded.json")).unwrap()).unwrap();
    let c = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap();
    assert!(rel(c.objective, DED_REFERENCE) <= 1e-6, "{} vs {DED_REFERENCE}", c.objective);
}

#[test]
fn opf_centralized_matches_reference() {
    let tree = build_hierarchy(&parse_grid_file(fixture("trilevel_opf.json")).unwrap()).unwrap();
    let c = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap();
    assert!(rel(c.objective, OPF_REFERENCE) <= 1e-6, "{} vs {OPF_REFERENCE}", c.objective);
}

#[test]
fn ded_nested_and_isolated() {
    let file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
    let tree = build_hierarchy(&file).unwrap();
    let nested = solve_nested(&tree.tree, &CoordinationConfig { epsilon: 1e-6, ..Default::default() }).unwrap();
    println!("ded nested {} outer {} inner {}", nested.objective, nested.outer_iterations, nested.inner_iterations);
    assert!(rel(nested.objective, DED_REFERENCE) <= 1e-4, "{}", nested.objective);
    let isolated: f64 = solve_isolated(&file, &SolverSettings::default()).unwrap().iter().map(|g| g.objective).sum();
    assert!(isolated >= nested.objective - 1e-7, "{isolated} < {}", nested.objective);
}

#[test]
fn opf_nested() {
    let file = parse_grid_file(fixture("trilevel_opf.json")).unwrap();
    let tree = build_hierarchy(&file).unwrap();
    let nested = solve_nested(&tree.tree, &CoordinationConfig { epsilon: 1e-6, ..Default::default() }).unwrap();
    println!("opf nested {} outer {} inner {}", nested.objective, nested.outer_iterations, nested.inner_iterations);
    assert!(rel(nested.objective, OPF_REFERENCE) <= 1e-4, "{}", nested.objective);
}
