use std::process::{Command, Output};

fn covsteer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covsteer")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn lists_bundled_scenarios() {
    let out = covsteer(&["list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for name in ["rendezvous_poly", "rendezvous_uniform", "rendezvous_cone_geo", "rendezvous_hard"] {
        assert!(text.lines().any(|l| l == name), "{name} missing from {text}");
    }
}

#[test]
fn unknown_scenario_is_a_configuration_error() {
    let out = covsteer(&["solve", "no_such_scenario"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn indefinite_initial_covariance_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = covsteer::scenario::BUNDLED.iter().find(|b| b.0 == "rendezvous_uniform").unwrap().1;
    let bad = text.replacen("[10.0, 0.0, 0.0, 0.0, 0.0, 0.0]", "[-10.0, 0.0, 0.0, 0.0, 0.0, 0.0]", 1);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, bad).unwrap();
    let out = covsteer(&["solve", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("boundary.sigma0"), "{err}");
}

#[test]
fn solve_writes_artifacts_and_saved_policy_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = covsteer(&["--quiet", "--samples", "2000", "--out", out_dir, "solve", "rendezvous_uniform"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["report.json", "solution.json", "trajectories.csv", "allocation_trace.csv", "marginals.csv"] {
        assert!(dir.path().join(file).is_file(), "{file} not written");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["body"]["name"], "rendezvous_uniform");

    let solution = dir.path().join("solution.json");
    let out = covsteer(&["--quiet", "--samples", "2000", "--out", out_dir, "validate", "rendezvous_uniform", "--solution", solution.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("validation.json").is_file());
}

#[test]
fn laws_exit_status_reflects_the_ordering_counterexamples() {
    let out = covsteer(&["laws"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("PASS disk_law"), "{text}");
    assert!(text.contains("FAIL relaxation_ordering"), "{text}");
    assert_eq!(code(&out), 4);
}
