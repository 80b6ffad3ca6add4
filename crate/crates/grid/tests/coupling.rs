use std::path::PathBuf;

use nestdec_core::{solve, solve_centralized, SolverSettings};
use nestdec_grid::{attach_boundary, build_ded, build_grid, parse_grid_file, solve_isolated, Coupling, GridError, GridSpec};
use proptest::prelude::*;
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn coupling(child: &str, parent_port: &str, child_port: &str) -> Coupling {
    serde_json::from_value(json!({"child": child, "parent_port": parent_port, "child_port": child_port})).unwrap()
}

#[test]
fn dispatch_ports_map_period_by_period() {
    let file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
    let parent = build_grid(&file.root.spec).unwrap();
    let child = build_grid(&file.root.hierarchy.children[0].spec).unwrap();
    let m = attach_boundary(&parent, &child, Some(&coupling("dist1", "d1", "up"))).unwrap();
    assert_eq!((m.nrows(), m.ncols()), (24, parent.program.blocks.n_lower));
    let port = parent.lower_port("d1").unwrap();
    for t in 0..24 {
        for j in 0..m.ncols() {
            assert_eq!(m[(t, j)], if j == port.offset + t { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn branch_flow_ports_select_three_coordinates() {
    let file = parse_grid_file(fixture("trilevel_opf.json")).unwrap();
    let parent = build_grid(&file.root.spec).unwrap();
    let child = build_grid(&file.root.hierarchy.children[1].spec).unwrap();
    let m = attach_boundary(&parent, &child, Some(&coupling("dist2", "d2", "up"))).unwrap();
    assert_eq!(m.nrows(), 3);
    assert_eq!(m.ncols(), parent.program.blocks.n_lower);
    let off = parent.lower_port("d2").unwrap().offset;
    for r in 0..3 {
        assert_eq!(m.row(r).sum(), 1.0);
        assert_eq!(m[(r, off + r)], 1.0);
    }
}

#[test]
fn absent_coupling_gives_no_rows() {
    let file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
    let parent = build_grid(&file.root.spec).unwrap();
    let child = build_grid(&file.root.hierarchy.children[0].spec).unwrap();
    let m = attach_boundary(&parent, &child, None).unwrap();
    assert_eq!(m.nrows(), 0);
    assert_eq!(m.ncols(), parent.program.blocks.n_lower);
}

#[test]
fn missing_quantity_is_reported() {
    let file = parse_grid_file(fixture("trilevel_opf.json")).unwrap();
    let mut parent_spec = file.root.spec.clone();
    parent_spec.ports[1].quantities = vec![nestdec_grid::Quantity::P, nestdec_grid::Quantity::Q];
    let parent = build_grid(&parent_spec).unwrap();
    let child = build_grid(&file.root.hierarchy.children[1].spec).unwrap();
    let err = attach_boundary(&parent, &child, Some(&coupling("dist2", "d2", "up"))).unwrap_err();
    assert!(matches!(err, GridError::UnmatchedQuantity { quantity: nestdec_grid::Quantity::V, .. }), "{err}");
}

#[test]
fn unknown_port_is_reported() {
    let file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
    let parent = build_grid(&file.root.spec).unwrap();
    let child = build_grid(&file.root.hierarchy.children[0].spec).unwrap();
    let err = attach_boundary(&parent, &child, Some(&coupling("dist1", "nope", "up"))).unwrap_err();
    assert!(matches!(err, GridError::UnknownPort { .. }), "{err}");
}

fn random_ded(loads: &[f64], caps: &[f64]) -> GridSpec {
    let gens: Vec<_> = caps
        .iter()
        .enumerate()
        .map(|(i, &c)| json!({"id": format!("g{i}"), "bus": 1, "a1": 5.0 + i as f64, "a2": 0.05, "p_min": 0.0, "p_max": c}))
        .collect();
    serde_json::from_value(json!({
        "name": "rand", "model": "ded", "periods": loads.len(), "buses": [{"id": 1}],
        "generators": gens,
        "loads": [{"id": "d", "bus": 1, "p": loads}]
    }))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dispatch_meets_demand(loads in prop::collection::vec(0.0f64..10.0, 1..5), caps in prop::collection::vec(4.0f64..8.0, 2..4)) {
        let g = build_ded(&random_ded(&loads, &caps)).unwrap();
        let sol = solve(&g.program, None).unwrap();
        prop_assert!(sol.is_optimal());
        for (t, d) in loads.iter().enumerate() {
            let supply: f64 = (0..caps.len()).map(|i| sol.primal[g.index_of(&format!("P[g{i},{t}]")).unwrap()]).sum();
            prop_assert!((supply - d).abs() < 1e-7, "period {}: {} vs {}", t, supply, d);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fixed_schedules_never_beat_coordination(shift in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
        for (c, s) in file.root.hierarchy.coupling.iter_mut().zip(&shift) {
            for v in c.schedule.iter_mut() {
                *v += s;
            }
        }
        let isolated = solve_isolated(&file, &SolverSettings::default());
        prop_assume!(isolated.is_ok());
        let isolated: f64 = isolated.unwrap().iter().map(|g| g.objective).sum();
        let tree = nestdec_grid::build_hierarchy(&file).unwrap();
        let coordinated = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap().objective;
        prop_assert!(isolated >= coordinated - 1e-6 * coordinated.abs(), "{} < {}", isolated, coordinated);
    }
}
