use vfp_core::coordinator::{compare_configurations, run_hierarchical};
use vfp_core::error::CoordinatorError;
use vfp_core::scenario::{load_scenario, Scenario};

fn bundled(name: &str) -> Scenario {
    load_scenario(format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Closed-form composed map of the two-VFP toy: transmission equilibrium at
/// energies `(e_c, e_g)`, then each federation's allocation. Returns the
/// budgets and the next energies.
fn composed(e_c: f64, e_g: f64) -> ((f64, f64), (f64, f64)) {
    let (alpha, beta) = (30.0, 0.5);
    let (l_c, l_g) = (2.0 + e_c, e_g);
    let lam_g = (alpha + beta * (l_c + l_g)) / (1.0 + beta / 2.0);
    let p_g = lam_g / 2.0;
    let lam_c = alpha + beta * (l_c + l_g - p_g);
    let (gamma_c, gamma_g) = (lam_c * l_c, lam_g * (l_g - p_g));

    let (v, omega) = (100.0, 10.0);
    let mu_c = (v - (v * v - 2.0 * omega * gamma_c).sqrt()) / 2.0;
    let next_c = 2.0 * (v - mu_c) / omega;
    let (a, b) = (0.5, 5.0);
    let budget = -gamma_g;
    let mu_g = (b + (b * b + 8.0 * a * budget).sqrt()) / 2.0;
    let next_g = -(mu_g - b) / (2.0 * a);
    ((gamma_c, gamma_g), (next_c, next_g))
}

#[test]
fn two_vfp_matches_composed_map() {
    let mut s = bundled("two_vfp.toml");
    s.algorithm.tol_outer = 1e-7;
    s.algorithm.tol_transmission = 1e-10;
    s.algorithm.tol_allocation = 1e-11;
    s.algorithm.max_outer = 200;
    let r = run_hierarchical(&s).unwrap();

    let (mut e_c, mut e_g) = (10.0, -4.0);
    let mut gamma = (0.0, 0.0);
    for _ in 0..500 {
        let (g, (c, p)) = composed(e_c, e_g);
        gamma = g;
        e_c = c;
        e_g = p;
    }
    assert!(e_c < 120.0 && -e_g < 30.0, "oracle stays inside the boxes");
    let c = r.vfp_index("C").unwrap();
    let g = r.vfp_index("G").unwrap();
    assert!(
        (r.budgets[c].total - gamma.0).abs() < 1e-4,
        "{} vs {}",
        r.budgets[c].total,
        gamma.0
    );
    assert!(
        (r.budgets[g].total - gamma.1).abs() < 1e-4,
        "{} vs {}",
        r.budgets[g].total,
        gamma.1
    );
    assert!((r.energies[c] - e_c).abs() < 1e-5);
    assert!((r.energies[g] - e_g).abs() < 1e-5);
    assert!(r.outer_iterations > 2);
    assert!(r.residuals.allocation_balance < 1e-6);
}

#[test]
fn fixed_agents_stop_after_second_solve() {
    let r = run_hierarchical(&bundled("fixed_agents.toml")).unwrap();
    assert_eq!(r.outer_iterations, 2);
    assert_eq!(r.residuals.outer_change, 0.0);
    assert_eq!(r.energies, vec![10.0, -4.0]);
}

#[test]
fn window_violation_is_rejected_up_front() {
    let mut s = bundled("two_vfp.toml");
    let c = s.vfp.get_mut("C").unwrap();
    c.wholesale_max = vfp_core::scenario::Profile::Constant(-1.0);
    c.wholesale_min = vfp_core::scenario::Profile::Constant(-2.0);
    match run_hierarchical(&s) {
        Err(CoordinatorError::Precondition(msg)) => assert!(msg.contains("C period 1"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn runs_are_bit_identical() {
    let s = bundled("two_vfp.toml");
    let a = run_hierarchical(&s).unwrap();
    let b = run_hierarchical(&s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_more_outer_iteration_is_stable() {
    let s = bundled("two_vfp.toml");
    let r = run_hierarchical(&s).unwrap();
    let mut longer = s.clone();
    longer.algorithm.tol_outer = f64::MIN_POSITIVE;
    longer.algorithm.max_outer = r.outer_iterations + 1;
    let next = match run_hierarchical(&longer) {
        Err(CoordinatorError::NotConverged { partial, .. }) => partial,
        other => panic!("{other:?}"),
    };
    assert_eq!(next.outer_iterations, r.outer_iterations + 1);
    for (a, b) in r.budgets.iter().zip(&next.budgets) {
        assert!((a.total - b.total).abs() < s.algorithm.tol_outer);
    }
}

#[test]
fn comparison_covers_three_configurations() {
    let rows = compare_configurations(&bundled("two_vfp.toml")).unwrap();
    let labels: Vec<_> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["sharing+allocation", "sharing-only", "no-sharing"]);
    // Without the pool the consumer federation must buy its load wholesale.
    let alone = &rows[2];
    let c = alone.vfps.iter().position(|v| v == "C").unwrap();
    assert!((alone.wholesale_energy[c] - 12.0).abs() < 1e-6);
}
