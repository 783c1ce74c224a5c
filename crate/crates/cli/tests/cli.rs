use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(name)
}

fn vfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfp")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn run_writes_every_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let s = scenario("two_vfp.toml");
    let o = vfp(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--compare",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    for f in [
        "prices.csv",
        "shared_power.csv",
        "carbon.csv",
        "devices.csv",
        "allocation.csv",
        "fra_trace.csv",
        "outer_trace.csv",
        "performance.csv",
        "comparison.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let o = vfp(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o.stdout).contains("status            converged"));
}

#[test]
fn validate_accepts_bundled_scenarios() {
    for name in ["two_vfp.toml", "fixed_agents.toml", "demo16.toml", "cobweb_beta3.toml"] {
        let o = vfp(&["validate", "--scenario", scenario(name).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", text(&o.stderr));
    }
}

#[test]
fn divergent_response_exits_one_with_cobweb_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let s = scenario("cobweb_beta3.toml");
    let o = vfp(&[
        "clear-transmission",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("diverges"));
    assert!(out.join("fra_trace.csv").is_file());
}

#[test]
fn outer_cap_writes_partial_results_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let s = scenario("two_vfp.toml");
    let o = vfp(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--max-outer",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("not-converged"));
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = vfp(&["validate", "--scenario", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[network\nbuses = [1]").unwrap();
    let o = vfp(&[
        "run",
        "--scenario",
        broken.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("line"));

    let s = scenario("two_vfp.toml");
    let o = vfp(&[
        "run",
        "--scenario",
        s.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--tol",
        "-1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("tol_outer"));

    let o = vfp(&["report", "--out", dir.path().join("empty").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_pass_commands_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("two_vfp.toml");
    for cmd in ["clear-transmission", "allocate"] {
        let out = dir.path().join(cmd);
        let o = vfp(&[cmd, "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", text(&o.stderr));
        assert!(out.join("prices.csv").is_file());
    }
}
