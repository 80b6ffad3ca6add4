use std::path::PathBuf;

use nestdec_core::{solve, solve_centralized, SolveStatus, SolverSettings};
use nestdec_grid::{build_ded, build_grid, build_hierarchy, build_opf_radial, orient_radial, parse_grid_file, GridSpec};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn spec(v: serde_json::Value) -> GridSpec {
    serde_json::from_value(v).unwrap()
}

fn ded_one_gen() -> serde_json::Value {
    json!({
        "name": "single", "model": "ded", "buses": [{"id": 1}],
        "generators": [{"id": "g1", "bus": 1, "a0": 0.0, "a1": 10.0, "a2": 0.1, "p_min": 0.0, "p_max": 10.0}],
        "loads": [{"id": "d1", "bus": 1, "p": [5.0]}]
    })
}

#[test]
fn single_generator_serves_the_load() {
    let g = build_ded(&spec(ded_one_gen())).unwrap();
    let sol = solve(&g.program, None).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[g.index_of("P[g1,0]").unwrap()] - 5.0).abs() < 1e-6);
    // 10·5 + 0.1·25
    assert!((sol.objective - 52.5).abs() < 1e-6, "{}", sol.objective);
}

#[test]
fn cheaper_generator_is_loaded_first() {
    let g = build_ded(&spec(json!({
        "name": "merit", "model": "ded", "buses": [{"id": 1}],
        "generators": [
            {"id": "a", "bus": 1, "a1": 10.0, "p_min": 0.0, "p_max": 10.0},
            {"id": "b", "bus": 1, "a1": 20.0, "p_min": 0.0, "p_max": 10.0}
        ],
        "loads": [{"id": "d", "bus": 1, "p": [12.0]}]
    })))
    .unwrap();
    let sol = solve(&g.program, None).unwrap();
    // enumerate the split of 12 between the units
    let oracle = (0..=10_000)
        .map(|k| k as f64 * 1e-3)
        .filter(|&a| (0.0..=10.0).contains(&(12.0 - a)))
        .map(|a| 10.0 * a + 20.0 * (12.0 - a))
        .fold(f64::INFINITY, f64::min);
    assert!((oracle - 140.0).abs() < 1e-9);
    assert!((sol.objective - oracle).abs() < 1e-6, "{}", sol.objective);
    assert!((sol.primal[g.index_of("P[a,0]").unwrap()] - 10.0).abs() < 1e-5);
    assert!((sol.primal[g.index_of("P[b,0]").unwrap()] - 2.0).abs() < 1e-5);
}

#[test]
fn ramp_limit_shifts_output_to_the_dear_unit() {
    let g = build_ded(&spec(json!({
        "name": "ramp", "model": "ded", "periods": 2, "buses": [{"id": 1}],
        "generators": [
            {"id": "a", "bus": 1, "a1": 10.0, "a2": 0.1, "p_min": 0.0, "p_max": 10.0, "ramp_up": 2.0},
            {"id": "b", "bus": 1, "a1": 30.0, "a2": 0.1, "p_min": 0.0, "p_max": 10.0}
        ],
        "loads": [{"id": "d", "bus": 1, "p": [5.0, 9.0]}]
    })))
    .unwrap();
    let sol = solve(&g.program, None).unwrap();
    let cost = |x: f64| 10.0 * x + 0.1 * x * x;
    let dear = |x: f64| 30.0 * x + 0.1 * x * x;
    let mut oracle = f64::INFINITY;
    for i in 0..=500 {
        let a0 = i as f64 * 0.01;
        for j in 0..=900 {
            let a1 = j as f64 * 0.01;
            if a1 - a0 > 2.0 + 1e-12 {
                continue;
            }
            oracle = oracle.min(cost(a0) + dear(5.0 - a0) + cost(a1) + dear(9.0 - a1));
        }
    }
    assert!((sol.objective - oracle).abs() < 1e-6, "{} vs {oracle}", sol.objective);
    let p = |l: &str| sol.primal[g.index_of(l).unwrap()];
    assert!((p("P[a,0]") - 5.0).abs() < 1e-5 && (p("P[a,1]") - 7.0).abs() < 1e-5);
    assert!(p("P[a,1]") - p("P[a,0]") <= 2.0 + 1e-7);
}

#[test]
fn balance_holds_every_period() {
    let g = build_ded(&spec(json!({
        "name": "two", "model": "ded", "periods": 3, "buses": [{"id": 1}],
        "generators": [
            {"id": "a", "bus": 1, "a1": 12.0, "a2": 0.05, "p_min": 1.0, "p_max": 8.0, "ramp_up": 3.0, "ramp_down": 3.0},
            {"id": "b", "bus": 1, "a1": 15.0, "a2": 0.02, "p_min": 0.0, "p_max": 6.0}
        ],
        "loads": [{"id": "d", "bus": 1, "p": [4.0, 9.0, 6.5]}, {"id": "e", "bus": 1, "p": [1.0, 1.5, 0.5]}]
    })))
    .unwrap();
    let sol = solve(&g.program, None).unwrap();
    for (t, demand) in [5.0, 10.5, 7.0].into_iter().enumerate() {
        let supply = sol.primal[g.index_of(&format!("P[a,{t}]")).unwrap()] + sol.primal[g.index_of(&format!("P[b,{t}]")).unwrap()];
        assert!((supply - demand).abs() < 1e-7, "period {t}: {supply} vs {demand}");
    }
}

#[test]
fn short_capacity_builds_with_a_warning() {
    let mut v = ded_one_gen();
    v["loads"][0]["p"] = json!([15.0]);
    let g = build_ded(&spec(v)).unwrap();
    assert_eq!(g.warnings.len(), 1, "{:?}", g.warnings);
}

#[test]
fn ramps_and_line_limits_add_two_rows_each() {
    let base = json!({
        "name": "count", "model": "ded", "periods": 4, "buses": [{"id": 1}],
        "generators": [
            {"id": "a", "bus": 1, "a1": 1.0, "p_min": 0.0, "p_max": 10.0},
            {"id": "b", "bus": 1, "a1": 2.0, "p_min": 0.0, "p_max": 10.0}
        ],
        "loads": [{"id": "d", "bus": 1, "p": [1.0, 2.0, 3.0, 4.0]}]
    });
    let rows = |v: &serde_json::Value| build_ded(&spec(v.clone())).unwrap().program.constraints.len();
    let plain = rows(&base);
    let mut ramped = base.clone();
    for g in 0..2 {
        ramped["generators"][g]["ramp_up"] = json!(1.0);
        ramped["generators"][g]["ramp_down"] = json!(1.0);
    }
    assert_eq!(rows(&ramped) - plain, 2 * 3 * 2);
    let mut lined = base.clone();
    lined["lines"] = json!([{"id": "l", "from": 1, "to": 1, "p_max": 5.0, "ptdf": {"a": 0.5}}]);
    assert_eq!(rows(&lined) - plain, 2 * 4);
}

fn feeder(load_p: f64, load_q: f64) -> GridSpec {
    spec(json!({
        "name": "feeder", "model": "opf_radial", "slack_bus": 1,
        "buses": [{"id": 1, "v_min": 1.0, "v_max": 1.0}, {"id": 2, "v_min": 0.8, "v_max": 1.2}],
        "generators": [{"id": "g", "bus": 1, "a1": 1.0, "p_min": -10.0, "p_max": 10.0, "q_min": -10.0, "q_max": 10.0}],
        "loads": [{"id": "d", "bus": 2, "p": [load_p], "q": [load_q]}],
        "lines": [{"id": "l12", "from": 1, "to": 2, "r": 0.01, "x": 0.01}]
    }))
}

/// Forward-backward sweep on one line: the receiving voltage `V₂` and current `I` with
/// `V₂·conj(I) = S_load`, `V₂ = V₁ − Z·I`.
fn sweep(v1: f64, r: f64, x: f64, p: f64, q: f64) -> (f64, f64) {
    let (mut vr, mut vi) = (v1, 0.0);
    let (mut ir, mut ii) = (0.0, 0.0);
    for _ in 0..200 {
        // I = conj(S / V)
        let d = vr * vr + vi * vi;
        ir = (p * vr + q * vi) / d;
        ii = (p * vi - q * vr) / d;
        vr = v1 - (r * ir - x * ii);
        vi = -(r * ii + x * ir);
    }
    (vr * vr + vi * vi, ir * ir + ii * ii)
}

#[test]
fn two_bus_feeder_matches_power_flow() {
    let g = build_opf_radial(&feeder(1.0, 0.5)).unwrap();
    let sol = solve(&g.program, None).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let (v2, l) = sweep(1.0, 0.01, 0.01, 1.0, 0.5);
    let at = |s: &str| sol.primal[g.index_of(s).unwrap()];
    assert!((at("v[2]") - v2).abs() < 1e-5, "{} vs {v2}", at("v[2]"));
    assert!((at("l[l12]") - l).abs() < 1e-5, "{} vs {l}", at("l[l12]"));
    // sending-end flow covers load plus losses
    assert!((at("P[l12]") - (1.0 + 0.01 * l)).abs() < 1e-5);
    let residual = at("P[l12]").powi(2) + at("Q[l12]").powi(2) - at("v[1]") * at("l[l12]");
    assert!(residual.abs() <= 1e-6, "{residual}");
}

#[test]
fn unloaded_feeder_carries_nothing() {
    let g = build_opf_radial(&feeder(0.0, 0.0)).unwrap();
    let sol = solve(&g.program, None).unwrap();
    let at = |s: &str| sol.primal[g.index_of(s).unwrap()];
    for s in ["P[l12]", "Q[l12]", "l[l12]", "Pg[g]", "Qg[g]"] {
        assert!(at(s).abs() < 1e-6, "{s} = {}", at(s));
    }
    assert!((at("v[2]") - 1.0).abs() < 1e-6);
}

#[test]
fn fixture_lines_are_tight_and_voltages_telescope() {
    let file = parse_grid_file(fixture("trilevel_opf.json")).unwrap();
    let tree = build_hierarchy(&file).unwrap();
    let c = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap();
    for (node, gn) in tree.tree.iter().zip(file.root.iter()) {
        let grid = tree.grid(&node.name).unwrap();
        assert_eq!(gn.spec.name, node.name);
        let x = c.layout.local(node.id, &c.solution.primal).unwrap();
        let at = |s: String| x[grid.index_of(&s).unwrap()];
        let root = gn.spec.upper_port().map(|p| p.bus).or(gn.spec.slack_bus).unwrap();
        let mut v = std::collections::HashMap::from([(root, at(format!("v[{root}]")))]);
        for ol in orient_radial(&gn.spec, root).unwrap() {
            let line = &gn.spec.lines[ol.line];
            let (p, q, l) = (at(format!("P[{}]", line.id)), at(format!("Q[{}]", line.id)), at(format!("l[{}]", line.id)));
            let vf = at(format!("v[{}]", ol.from));
            assert!(p * p + q * q - vf * l <= 1e-6, "{} {}", node.name, line.id);
            // accumulate drops from the root rather than reading each parent's value
            let drop = 2.0 * (line.r * p + line.x * q) - (line.r * line.r + line.x * line.x) * l;
            let vt = v[&ol.from] - drop;
            v.insert(ol.to, vt);
            let solved = at(format!("v[{}]", ol.to));
            assert!((vt - solved).abs() < 1e-8, "{} bus {}: {vt} vs {solved}", node.name, ol.to);
        }
    }
}

#[test]
fn build_grid_dispatches_on_model() {
    let g = build_grid(&spec(ded_one_gen())).unwrap();
    assert_eq!(g.labels, vec!["P[g1,0]".to_string()]);
    let g = build_grid(&feeder(1.0, 0.5)).unwrap();
    assert!(g.index_of("l[l12]").is_some());
}
