use nestdec_core::cases::{case_one, case_one_optimum};
use nestdec_core::{
    solve_admm, solve_benders, solve_centralized, solve_nested, AdmmConfig, CoordinationConfig, SolverSettings,
};

fn config(epsilon: f64) -> CoordinationConfig {
    CoordinationConfig { epsilon, ..Default::default() }
}

#[test]
fn centralized_matches_closed_form() {
    let c = solve_centralized(&case_one(), &SolverSettings::default()).unwrap();
    assert!((c.objective - case_one_optimum()).abs() < 1e-8, "{}", c.objective);
}

#[test]
fn nested_matches_centralized() {
    let tree = case_one();
    let central = solve_centralized(&tree, &SolverSettings::default()).unwrap().objective;
    let nested = solve_nested(&tree, &config(1e-6)).unwrap();
    assert!((nested.objective - central).abs() <= 1e-6, "{} vs {central}", nested.objective);

    let x = nested.outcome.local_primal[0];
    assert!((x - (1.0 + 2.0 * std::f64::consts::SQRT_2) / 2.0).abs() < 1e-5, "x = {x}");
}

#[test]
fn proposed_needs_few_outer_iterations() {
    let tree = case_one();
    for eps in [1e-4, 1e-5, 1e-6] {
        let n = solve_nested(&tree, &config(eps)).unwrap();
        assert!(n.outer_iterations <= 4, "eps {eps}: {}", n.outer_iterations);
        assert_eq!(n.outer_iterations, n.trace.outer_iterations());
        assert!(n.inner_iterations >= n.outer_iterations);
    }
}

#[test]
fn benders_needs_more_outer_iterations() {
    let tree = case_one();
    for eps in [1e-5, 1e-6] {
        let n = solve_nested(&tree, &config(eps)).unwrap();
        let b = solve_benders(&tree, &config(eps)).unwrap();
        assert!(b.outer_iterations > n.outer_iterations, "eps {eps}: {} vs {}", b.outer_iterations, n.outer_iterations);
        assert!((b.objective - case_one_optimum()).abs() < 1e-5);
    }
}

#[test]
fn admm_needs_more_iterations_than_benders() {
    let tree = case_one();
    for eps in [1e-4, 1e-5, 1e-6] {
        let b = solve_benders(&tree, &config(eps)).unwrap();
        let a = solve_admm(&tree, &AdmmConfig::with_tolerance(3.0, eps)).unwrap();
        assert!(a.outer_iterations > b.outer_iterations, "eps {eps}: {} vs {}", a.outer_iterations, b.outer_iterations);
        assert!((a.objective - case_one_optimum()).abs() < 1e-3);
    }
}

#[test]
fn anti_cycling_bounds_are_monotone_and_valid() {
    let tree = case_one();
    let cfg = CoordinationConfig { anti_cycling: true, ..config(1e-6) };
    let n = solve_nested(&tree, &cfg).unwrap();
    let lbs = n.trace.lower_bounds();
    assert!(!lbs.is_empty());
    for w in lbs.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{lbs:?}");
    }
    assert!(lbs.iter().all(|&v| v <= case_one_optimum() + 1e-6), "{lbs:?}");
    assert!((n.objective - case_one_optimum()).abs() <= 1e-6);
}

#[test]
fn runs_are_deterministic() {
    let tree = case_one();
    let a = solve_nested(&tree, &config(1e-6)).unwrap();
    let b = solve_nested(&tree, &config(1e-6)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn invalid_configs_are_rejected() {
    let tree = case_one();
    assert!(solve_nested(&tree, &config(0.0)).is_err());
    assert!(solve_nested(&tree, &CoordinationConfig { max_outer: 0, ..config(1e-6) }).is_err());
    assert!(solve_admm(&tree, &AdmmConfig::with_tolerance(-1.0, 1e-6)).is_err());
}

#[test]
fn outer_cap_is_reported() {
    let err = solve_nested(&case_one(), &CoordinationConfig { max_outer: 1, ..config(1e-6) }).unwrap_err();
    assert!(err.to_string().contains("iteration"), "{err}");
}
