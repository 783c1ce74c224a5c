mod common;

use common::bundled;
use vfp_core::coordinator::{compare_configurations, run_hierarchical};
use vfp_core::report::{build_report, manifest, parse_table, read_manifest, write_manifest, write_report};
use vfp_core::scenario::parse_scenario;

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn series_match_result_fields_exactly() {
    let r = run_hierarchical(&bundled("two_vfp.toml")).unwrap();
    let before = r.clone();
    let report = build_report(&r, None);
    assert_eq!(r, before);

    let prices = parse_table(&report.files["prices.csv"]);
    assert_eq!(prices.len(), 2);
    for row in &prices {
        let i = r.vfp_index(&row[1]).unwrap();
        assert_eq!(num(&row[2]), r.prices.shared[i][0]);
        assert_eq!(num(&row[3]), r.prices.carbon[i][0]);
        assert_eq!(num(&row[4]), r.budgets[i].per_period[0]);
    }
    for row in parse_table(&report.files["shared_power.csv"]) {
        let d = &r.decisions[r.vfp_index(&row[1]).unwrap()];
        assert_eq!(num(&row[2]), d.load[0]);
        assert_eq!(num(&row[3]), d.production[0]);
        assert_eq!(num(&row[4]), d.shared[0]);
    }
    let alloc = parse_table(&report.files["allocation.csv"]);
    assert_eq!(alloc.len(), 3);
    for row in alloc {
        let state = r.allocations.iter().flatten().find(|a| a.vfp == row[0]).unwrap();
        let agent = state.agents.iter().find(|a| a.id == row[1]).unwrap();
        assert_eq!(num(&row[5]), agent.demand);
        assert_eq!(num(&row[7]), state.orientation * agent.share);
        assert_eq!(num(&row[8]), agent.utility);
    }
    let text = &report.files["shared_power.csv"];
    assert!(text.starts_with("# MW; shared_power > 0 is a purchase"));
    assert!(report.files["devices.csv"].contains("ESS output < 0 is charging"));
}

#[test]
fn idle_scenario_reports_zeros() {
    let s = parse_scenario(
        r#"
[network]
buses = [1]
slack_bus = 1

[vfp.A]
federation = "consumers"
bus = 1
emission_factor = 0.0
alpha = 10.0
beta = 1.0
base_load = 0.0
wholesale_min = -1.0
wholesale_max = 1.0

[market]
wholesale_buy = 20.0
wholesale_sell = 1.0
carbon_cap = 0.0

[algorithm]
periods = 3
"#,
    )
    .unwrap();
    let r = run_hierarchical(&s).unwrap();
    let report = build_report(&r, None);
    let lines: Vec<&str> = report.files["shared_power.csv"].lines().collect();
    assert_eq!(
        lines[1],
        "period,vfp,load,production,shared_power,wholesale_buy,wholesale_sell"
    );
    let rows = parse_table(&report.files["shared_power.csv"]);
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row[2..].iter().all(|v| num(v) == 0.0), "{row:?}");
    }
    assert_eq!(parse_table(&report.files["allocation.csv"]).len(), 0);
}

#[test]
fn comparison_table_has_one_row_per_configuration_and_vfp() {
    let s = bundled("two_vfp.toml");
    let r = run_hierarchical(&s).unwrap();
    let rows = compare_configurations(&s).unwrap();
    let report = build_report(&r, Some(&rows));
    let text = &report.files["comparison.csv"];
    assert!(text.contains(
        "configuration,vfp,energy_value,flexible_demand,production_cost,gt_emissions,emissions,budget,wholesale_energy"
    ));
    let table = parse_table(text);
    assert_eq!(table.len(), 6);
    assert_eq!(table[0][0], "sharing+allocation");
    assert_eq!(table[5][0], "no-sharing");
}

#[test]
fn files_and_manifest_are_written() {
    let s = bundled("two_vfp.toml");
    let r = run_hierarchical(&s).unwrap();
    let report = build_report(&r, None);
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &report).unwrap();
    let m = manifest(&s, b"bytes", &r, true, &report, 0.5);
    write_manifest(dir.path(), &m).unwrap();
    for name in report.files.keys() {
        let on_disk = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(&on_disk, &report.files[name]);
    }
    let back = read_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.outer_iterations, r.outer_iterations);
    assert_eq!(
        back.scenario_sha256,
        "277089d91c0bdf4f2e6862ba7e4a07605119431f5d13f726dd352b06f1b206a9"
    );
}

#[test]
fn unwritable_destination_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let report = build_report(&run_hierarchical(&bundled("fixed_agents.toml")).unwrap(), None);
    let err = write_report(&file.join("sub"), &report).unwrap_err();
    assert!(err.to_string().contains("cannot write report"));
}
