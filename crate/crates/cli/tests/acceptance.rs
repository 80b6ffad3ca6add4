//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line with its
//! measurements; the test fails if any criterion does.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use nestdec_core::cases::{case_one, random_parametric_problem};
use nestdec_core::projection::project;
use nestdec_core::{
    classify_active, default_penalty, relax_lower, solve, solve_admm, solve_benders, solve_centralized, solve_nested,
    solve_with, AdmmConfig, Constraint, ConvexProgram, CoordinationConfig, LinearExpr, NodeId, SolverSettings, VariableBlocks,
};
use nestdec_grid::{build_hierarchy, orient_radial, parse_grid_file, solve_isolated};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../grid/fixtures").join(name)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn config(epsilon: f64) -> CoordinationConfig {
    CoordinationConfig { epsilon, ..Default::default() }
}

/// Brute force over the toy problem: for each `x`, the best split of the middle cone.
fn case_one_grid_search() -> f64 {
    let step = 1e-3;
    let mut best = f64::INFINITY;
    for i in 0..=3000 {
        let x = i as f64 * step;
        let mut inner = f64::INFINITY;
        let mut k = 0;
        while k as f64 * step <= x {
            let y2 = k as f64 * step;
            let y1 = (x * x - y2 * y2).max(0.0).sqrt().min(2.0);
            let z = y2.min(2.0);
            inner = inner.min((y1 - 2.0).powi(2) + (z - 2.0).powi(2));
            k += 1;
        }
        best = best.min((x - 1.0).powi(2) + inner);
    }
    best
}

fn case_one_exactness() -> Verdict {
    let tree = case_one();
    let central = solve_centralized(&tree, &SolverSettings::default()).unwrap().objective;
    let start = Instant::now();
    let nested = match solve_nested(&tree, &config(1e-6)) {
        Ok(n) => n,
        Err(e) => return verdict(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let gap = (nested.objective - central).abs();
    let grid = case_one_grid_search();
    let pass = gap <= 1e-6 && secs < 5.0 && (grid - central).abs() <= 1e-2;
    verdict(pass, format!("nested {:.10} centralized {central:.10} gap {gap:.2e} grid-search {grid:.6} in {secs:.3}s", nested.objective))
}

fn case_one_iterations() -> Verdict {
    let tree = case_one();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [1e-4, 1e-5, 1e-6] {
        let (n, b, a) = match (
            solve_nested(&tree, &config(eps)),
            solve_benders(&tree, &config(eps)),
            solve_admm(&tree, &AdmmConfig::with_tolerance(3.0, eps)),
        ) {
            (Ok(n), Ok(b), Ok(a)) => (n.outer_iterations, b.outer_iterations, a.outer_iterations),
            _ => return verdict(false, format!("a method failed at eps {eps:e}")),
        };
        pass &= n <= 4 && a > b;
        if eps < 1e-4 {
            pass &= b > n;
        }
        parts.push(format!("eps {eps:e}: proposed {n} benders {b} admm {a}"));
    }
    verdict(pass, parts.join("; "))
}

fn value_at(p: &ConvexProgram, pin: &[f64]) -> Option<(f64, nestdec_core::Solution)> {
    let sol = solve(&p.clone().pinned(DVector::from_column_slice(pin)), None).ok()?;
    sol.is_optimal().then_some((sol.objective, sol))
}

fn projection_calculus() -> Verdict {
    let start = Instant::now();
    let h = 1e-5;
    let (mut grad_ok, mut hess_ok, mut problems) = (0, 0, 0);
    let (mut worst_grad, mut worst_hess, mut worst_slack) = (0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..16u64 {
        let p = random_parametric_problem(seed);
        let Some((_, sol)) = value_at(&p, &[0.0, 0.0]) else { continue };
        let Ok(pair) = project(&p, &sol, 1e-6, NodeId::ROOT) else { continue };
        problems += 1;
        let base = classify_active(&sol, &p.clone().pinned(DVector::zeros(2)), 1e-6).unwrap();
        let mut hess_fd = nalgebra::DMatrix::zeros(2, 2);
        let mut stable = base.degenerate.is_empty();
        let mut grad_err = 0.0f64;
        for j in 0..2 {
            let mut up = [0.0; 2];
            let mut dn = [0.0; 2];
            up[j] = h;
            dn[j] = -h;
            let (Some((vu, su)), Some((vd, sd))) = (value_at(&p, &up), value_at(&p, &dn)) else {
                stable = false;
                grad_err = f64::INFINITY;
                continue;
            };
            let fd = (vu - vd) / (2.0 * h);
            grad_err = grad_err.max((pair.first.gradient[j] - fd).abs() / fd.abs().max(1.0));
            let pu = p.clone().pinned(DVector::from_column_slice(&up));
            let pd = p.clone().pinned(DVector::from_column_slice(&dn));
            stable &= classify_active(&su, &pu, 1e-6).unwrap().active == base.active
                && classify_active(&sd, &pd, 1e-6).unwrap().active == base.active;
            let gu = project(&pu, &su, 1e-6, NodeId::ROOT).unwrap().first.gradient;
            let gd = project(&pd, &sd, 1e-6, NodeId::ROOT).unwrap().first.gradient;
            hess_fd.set_column(j, &((gu - gd) / (2.0 * h)));
        }
        worst_grad = worst_grad.max(grad_err);
        if grad_err <= 1e-4 {
            grad_ok += 1;
        }
        if stable {
            if let Some(hess) = pair.second.as_ref().and_then(|s| s.hessian.clone()) {
                let err = (&hess - &hess_fd).amax() / hess_fd.amax().max(1.0);
                worst_hess = worst_hess.max(err);
                if err <= 1e-3 {
                    hess_ok += 1;
                }
            }
        }
        // first-order model under the value function on a 10×10 sample grid
        for a in 0..10 {
            for b in 0..10 {
                let q = [-0.45 + 0.1 * a as f64, -0.45 + 0.1 * b as f64];
                if let Some((v, _)) = value_at(&p, &q) {
                    let model = pair.first.evaluate(&DVector::from_column_slice(&q)).unwrap();
                    worst_slack = worst_slack.min(v - model);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = problems >= 10 && grad_ok == problems && hess_ok >= 10 && worst_slack >= -1e-7 && secs < 60.0;
    verdict(
        pass,
        format!(
            "{problems} problems: gradients {grad_ok} ok (worst {worst_grad:.1e}), hessians {hess_ok} ok (worst {worst_hess:.1e}), \
             min lower-bound slack {worst_slack:.1e} in {secs:.1}s"
        ),
    )
}

fn ded_equivalence() -> Verdict {
    let start = Instant::now();
    let file = parse_grid_file(fixture("trilevel_ded.json")).unwrap();
    let tree = build_hierarchy(&file).unwrap();
    let central = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap().objective;
    let nested = match solve_nested(&tree.tree, &config(1e-6)) {
        Ok(n) => n,
        Err(e) => return verdict(false, e.to_string()),
    };
    let isolated: f64 = solve_isolated(&file, &SolverSettings::default()).unwrap().iter().map(|g| g.objective).sum();
    let secs = start.elapsed().as_secs_f64();
    let gap = rel(nested.objective, central);
    let pass = gap <= 1e-4 && isolated >= nested.objective && secs < 120.0;
    verdict(
        pass,
        format!(
            "nested {:.6} centralized {central:.6} rel gap {gap:.1e} ({} outer); isolated {isolated:.3} in {secs:.1}s",
            nested.objective, nested.outer_iterations
        ),
    )
}

fn opf_equivalence() -> Verdict {
    let start = Instant::now();
    let file = parse_grid_file(fixture("trilevel_opf.json")).unwrap();
    let tree = build_hierarchy(&file).unwrap();
    let central = solve_centralized(&tree.tree, &SolverSettings::default()).unwrap().objective;
    let nested = match solve_nested(&tree.tree, &config(1e-6)) {
        Ok(n) => n,
        Err(e) => return verdict(false, e.to_string()),
    };
    let specs: HashMap<&str, _> = file.root.iter().into_iter().map(|n| (n.spec.name.as_str(), &n.spec)).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut lines = 0;
    for out in nested.outcome.iter() {
        let grid = tree.grid(&out.name).unwrap();
        let spec = specs[out.name.as_str()];
        let at = |s: String| out.local_primal[grid.index_of(&s).unwrap()];
        let root = spec.upper_port().map(|p| p.bus).or(spec.slack_bus).unwrap();
        for ol in orient_radial(spec, root).unwrap() {
            let id = &spec.lines[ol.line].id;
            let r = at(format!("P[{id}]")).powi(2) + at(format!("Q[{id}]")).powi(2) - at(format!("v[{}]", ol.from)) * at(format!("l[{id}]"));
            worst = worst.max(r);
            lines += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let gap = rel(nested.objective, central);
    let pass = gap <= 1e-4 && worst <= 1e-6 && secs < 120.0;
    verdict(
        pass,
        format!(
            "nested {:.8} centralized {central:.8} rel gap {gap:.1e}; max cone residual {worst:.1e} over {lines} lines in {secs:.2}s",
            nested.objective
        ),
    )
}

/// Lower-bound column of a trace written by `nestdec solve --anti-cycling`.
fn cli_lower_bounds(source: &[&str], dir: &Path, tag: &str) -> Result<Vec<f64>, String> {
    let trace = dir.join(format!("{tag}.csv"));
    let mut args = vec!["nestdec", "solve", "--method", "nested", "--anti-cycling", "--trace-out", trace.to_str().unwrap()];
    args.extend_from_slice(source);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = nestdec_cli::run(args, &mut out, &mut err);
    if code != nestdec_cli::EXIT_OK {
        return Err(format!("{tag}: exit {code}: {}", String::from_utf8_lossy(&err)));
    }
    let mut r = csv::Reader::from_path(&trace).map_err(|e| e.to_string())?;
    let mut bounds = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if !rec[3].is_empty() {
            bounds.push(rec[3].parse::<f64>().map_err(|e| e.to_string())?);
        }
    }
    Ok(bounds)
}

fn anti_cycling() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ded = fixture("trilevel_ded.json").display().to_string();
    let opf = fixture("trilevel_opf.json").display().to_string();
    let cases: [(&str, Vec<&str>, f64); 3] = [
        ("case1", vec!["--problem", "case1"], solve_centralized(&case_one(), &SolverSettings::default()).unwrap().objective),
        ("ded", vec!["--grid", &ded], central_of(&ded)),
        ("opf", vec!["--grid", &opf], central_of(&opf)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (tag, source, central) in cases {
        match cli_lower_bounds(&source, dir.path(), tag) {
            Ok(b) => {
                let monotone = b.windows(2).all(|w| w[1] >= w[0]);
                let below = b.iter().all(|&v| v <= central + 1e-6);
                pass &= !b.is_empty() && monotone && below;
                let top = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                parts.push(format!("{tag}: {} bounds, monotone {monotone}, max − optimum {:.1e}", b.len(), top - central));
            }
            Err(e) => {
                pass = false;
                parts.push(e);
            }
        }
    }
    verdict(pass, parts.join("; "))
}

fn central_of(path: &str) -> f64 {
    let tree = build_hierarchy(&parse_grid_file(path).unwrap()).unwrap();
    solve_centralized(&tree.tree, &SolverSettings::default()).unwrap().objective
}

fn penalty_relaxation() -> Verdict {
    // min 0 s.t. u ≤ 1, pinned at u = 2
    let mut capped = ConvexProgram::new(VariableBlocks::new(0, 1, 0));
    capped.push(Constraint::le(LinearExpr::var(0, 1.0).plus(-1.0)));
    let pin = DVector::from_vec(vec![2.0]);
    let infeasible_ok = solve(&relax_lower(&capped, &pin, &[default_penalty(&capped)]).unwrap(), None)
        .map(|s| s.is_optimal())
        .unwrap_or(false);

    // The solver's tolerance is relative to the data scale, which the penalty inflates
    // by four orders; compare both optima at a tolerance finer than the 1e-6 bound.
    let tight = SolverSettings { tol: 1e-10, ..SolverSettings::default() };
    let (mut worst_slack, mut worst_gap, mut checked) = (0.0f64, 0.0f64, 0);
    for seed in 0..12u64 {
        let p = random_parametric_problem(seed);
        for pin in [[0.0, 0.0], [0.1, -0.1], [-0.2, 0.15]] {
            let pin = DVector::from_column_slice(&pin);
            let Ok(exact) = solve_with(&p.clone().pinned(pin.clone()), None, &tight) else { continue };
            if !exact.is_optimal() {
                continue;
            }
            let exact = exact.objective;
            let relaxed = relax_lower(&p, &pin, &[default_penalty(&p)]).unwrap();
            let Ok(sol) = solve_with(&relaxed, None, &tight) else { return verdict(false, format!("seed {seed}: relaxed solve failed")) };
            // slack variables sit at the end of the internal block
            let ni = relaxed.blocks.n_internal;
            let slack = sol.primal.rows(ni - 2, 2).amax();
            worst_slack = worst_slack.max(slack);
            worst_gap = worst_gap.max((sol.objective - exact).abs());
            checked += 1;
        }
    }
    let pass = infeasible_ok && checked >= 10 && worst_slack <= 1e-7 && worst_gap <= 1e-6;
    verdict(
        pass,
        format!("infeasible pin solvable {infeasible_ok}; {checked} feasible pins: max slack {worst_slack:.1e}, max objective gap {worst_gap:.1e}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("case I exactness", case_one_exactness),
        ("case I iteration counts", case_one_iterations),
        ("projection calculus", projection_calculus),
        ("trilevel DED equivalence", ded_equivalence),
        ("trilevel OPF equivalence", opf_equivalence),
        ("anti-cycling monotonicity", anti_cycling),
        ("penalty relaxation", penalty_relaxation),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        println!(
            "criterion {} {name}: {} ({}; {:.2}s)",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
