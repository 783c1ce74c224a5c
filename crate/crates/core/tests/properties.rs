mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{bundled, exhaustive_binaries, random_commitment};
use vfp_core::allocation::{agent_best_response, update_weights};
use vfp_core::network::{compute_line_flows, nodal_balance_residual, FlowSensitivity, Line, NetworkTopology};
use vfp_core::qp::{solve_with_binaries, SolveStatus};
use vfp_core::scenario::{parse_scenario, serialize_scenario, Federation, Profile, WeightsVariant};

fn mesh() -> NetworkTopology {
    let line = |from, to, susceptance| Line {
        from,
        to,
        susceptance,
        min: -100.0,
        max: 100.0,
    };
    NetworkTopology {
        buses: vec![1, 2, 3, 4, 5],
        slack_bus: 1,
        lines: vec![
            line(1, 2, 10.0),
            line(2, 3, 5.0),
            line(3, 4, 8.0),
            line(4, 5, 12.0),
            line(5, 1, 6.0),
            line(2, 4, 3.0),
        ],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_round_trips(alpha in 1.0f64..500.0, beta in 1e-3f64..5.0, base in proptest::collection::vec(0.0f64..200.0, 24)) {
        let mut s = bundled("demo16.toml");
        let v = s.vfp.get_mut("A").unwrap();
        v.alpha = alpha;
        v.beta = beta;
        v.base_load = Profile::Series(base);
        let text = serialize_scenario(&s).unwrap();
        prop_assert_eq!(parse_scenario(&text).unwrap(), s);
    }

    #[test]
    fn flows_are_antisymmetric(theta in proptest::collection::vec(-0.5f64..0.5, 4)) {
        let net = mesh();
        let mut angles = vec![0.0];
        angles.extend(theta);
        let f = compute_line_flows(&net, &angles).unwrap();
        for l in &net.lines {
            let ab = f.flow_between(&net, l.from, l.to).unwrap();
            let ba = f.flow_between(&net, l.to, l.from).unwrap();
            prop_assert_eq!(ab, -ba);
        }
        // Injections that exactly produce these flows leave no residual.
        let zero = nodal_balance_residual(&net, &f, &[0.0; 5]);
        let r = nodal_balance_residual(&net, &f, &zero.iter().map(|x| -x).collect::<Vec<_>>());
        prop_assert!(r.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn sensitivity_balances_any_injection(inj in proptest::collection::vec(-50.0f64..50.0, 4)) {
        let net = mesh();
        let mut p = vec![-inj.iter().sum::<f64>()];
        p.extend(inj);
        let f = FlowSensitivity::new(&net).unwrap().flows(&p);
        let r = nodal_balance_residual(&net, &f, &p);
        prop_assert!(r.iter().all(|x| x.abs() < 1e-8), "{:?}", r);
    }

    #[test]
    fn consumer_demand_falls_and_supply_rises_with_price(k1 in 0.0f64..50.0, dk in 0.0f64..50.0) {
        let s = bundled("demo16.toml");
        let k2 = k1 + dk;
        for a in s.agent.values() {
            let (d1, s1) = agent_best_response(a, k1);
            let (d2, s2) = agent_best_response(a, k2);
            prop_assert!(d2 <= d1);
            prop_assert!(s2 >= s1);
        }
    }

    #[test]
    fn proportional_weights_keep_mean_one(
        raw in proptest::collection::vec(0.1f64..3.0, 2..8),
        cut in proptest::collection::vec(0.01f64..1.0, 8),
        budget in 1.0f64..1e4,
    ) {
        let n = raw.len();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let weights: Vec<f64> = raw.iter().map(|w| w / mean).collect();
        let total: f64 = cut[..n].iter().sum();
        let shares: Vec<f64> = cut[..n].iter().map(|c| budget * c / total).collect();
        let ids: Vec<String> = (0..n).map(|k| format!("n{k}")).collect();
        let next = update_weights(&ids, Federation::Consumers, &weights, &shares, budget, 0.5, WeightsVariant::Proportional).unwrap();
        let m = next.iter().sum::<f64>() / n as f64;
        prop_assert!((m - 1.0).abs() < 1e-12);
        prop_assert!(next.iter().all(|p| *p > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, bs) = random_commitment(&mut rng, k);
        let bb = solve_with_binaries(&p, &bs, 1e-9).unwrap();
        match exhaustive_binaries(&p, &bs, 1e-9) {
            Some(best) => {
                prop_assert_eq!(bb.solution.status, SolveStatus::Optimal);
                prop_assert!((bb.solution.objective - best).abs() < 1e-6);
            }
            None => prop_assert_eq!(bb.solution.status, SolveStatus::Infeasible),
        }
    }
}
