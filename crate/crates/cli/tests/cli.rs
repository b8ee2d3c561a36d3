use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mflq::examples::{negdef_closed_forms, NegdefParams};
use mflq::export::read_ensemble;
use mflq::schema::law_to_json;
use mflq::simulation::FeedbackLaw;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn mflq(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflq"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MFLQ_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn example(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = mflq(&out, &["--grid-steps", "1000", "example", name]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    out
}

#[test]
fn mean_variance_example_passes_and_manifest_hashes_match() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "mv");
    let report = json(out.join("report.json"));
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let manifest = json(out.join("manifest.json"));
    let entries = manifest["artifacts"].as_array().unwrap();
    assert!(entries.len() >= 5);
    for e in entries {
        let bytes = std::fs::read(out.join(e["file"].as_str().unwrap())).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(e["sha256"].as_str().unwrap(), hex);
    }
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn check_pd_names_the_control_weight_clause() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "mv");
    let o = mflq(
        &dir.path().join("pd"),
        &["check-pd", out.join("problem.json").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("control weight R"), "{}", stdout(&o));
    let report = json(dir.path().join("pd/pd_report.json"));
    assert_eq!(report["r_uniformly_pd"], false);
}

#[test]
fn speed_example_writes_figure_panels_and_compensator_passes_rc() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "speed");
    for f in [
        "fig_a_riccati",
        "fig_b_state",
        "fig_c_control",
        "fig_d_adjoint_y",
        "fig_e_adjoint_z",
    ] {
        let text = std::fs::read_to_string(out.join(format!("{f}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1002, "{f}");
    }
    let o = mflq(
        &dir.path().join("rc"),
        &[
            "check-rc",
            out.join("problem.json").to_str().unwrap(),
            out.join("compensator.json").to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn artifacts_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = example(dir.path().join("a").as_path(), "speed");
    let b = example(dir.path().join("b").as_path(), "speed");
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn simulate_dump_round_trips_and_cost_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "speed");
    let sim = dir.path().join("sim");
    let o = mflq(
        &sim,
        &[
            "--paths",
            "400",
            "--grid-steps",
            "400",
            "--seed",
            "7",
            "simulate",
            out.join("problem.json").to_str().unwrap(),
            "--dump",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let cost = json(sim.join("cost.json"));
    assert!(cost["z_score"].as_f64().unwrap().abs() < 4.0);
    let dump = read_ensemble(std::fs::File::open(sim.join("ensemble.bin")).unwrap()).unwrap();
    assert_eq!((dump.paths, dump.steps, dump.seed), (400, 400, 7));
    assert_eq!(dump.x.len(), 400 * 401);
}

#[test]
fn evaluate_zero_law_matches_closed_form_cost() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "negdef");
    let law = dir.path().join("law.json");
    std::fs::write(&law, law_to_json(&FeedbackLaw::zero(1, 1)).unwrap()).unwrap();
    let o = mflq(
        &dir.path().join("eval"),
        &[
            "evaluate",
            out.join("problem.json").to_str().unwrap(),
            law.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let cost = json(dir.path().join("eval/cost.json"))["oracle"].as_f64().unwrap();
    let expected = negdef_closed_forms(&NegdefParams::reference()).unwrap().zero_law_cost();
    assert!((cost - expected).abs() < 1e-6, "{cost} vs {expected}");
}

#[test]
fn validate_lists_violations_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = example(dir.path(), "negdef");
    let mut spec = json(out.join("problem.json"));
    spec["weights"]["Q"] = serde_json::json!({ "constant": [[-1.0]] });
    spec["x0"] = serde_json::json!([1.0, 2.0]);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    let o = mflq(&dir.path().join("v"), &["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("violation"));
    assert_eq!(json(dir.path().join("v/validation.json"))["valid"], false);
}

#[test]
fn input_errors_exit_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"T\": 1").unwrap();
    let out = dir.path().join("none");
    assert_eq!(mflq(&out, &["solve", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(
        mflq(&out, &["example", "speed", "--set", "gamma=0.1"]).status.code(),
        Some(2)
    );
    assert_eq!(mflq(&out, &["example", "mv", "--set", "rho=1"]).status.code(), Some(2));
    assert_eq!(
        mflq(&out, &["--grid-steps", "0", "example", "mv"]).status.code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env");
    let o = Command::new(env!("CARGO_BIN_EXE_mflq"))
        .args(["--grid-steps", "1000", "example", "negdef"])
        .env("MFLQ_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("manifest.json").exists());
}
