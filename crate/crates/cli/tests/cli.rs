//! End-to-end tests against the compiled binary: argument handling, output
//! layout, determinism, and diagnostics.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BUNDLED: [&str; 9] = [
    "ltc_asphalt",
    "ltc_grass",
    "ltc_crushed_concrete",
    "ltc_switching",
    "stc_baseline",
    "stc_front_slip",
    "stc_right_slip",
    "stc_four_wheel_slip",
    "stc_front_to_all",
];

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skidmode"));
    // Keep runs hermetic: the fallback output root must come from the
    // arguments under test, not the ambient environment.
    cmd.env_remove("IMM_OUT_DIR");
    cmd
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn assert_artifacts(dir: &Path) {
    for file in ["trace.csv", "weights.csv", "summary.json"] {
        assert!(dir.join(file).is_file(), "missing {} in {}", file, dir.display());
    }
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn list_scenarios_prints_the_bundled_names() {
    let out = bin().arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let text = stdout_of(&out);
    let names: Vec<&str> = text.lines().collect();
    assert_eq!(names, BUNDLED);
}

#[test]
fn run_single_scenario_writes_into_the_out_root() {
    let tmp = TempDir::new().unwrap();
    let out = bin()
        .args(["run", "ltc_asphalt", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).starts_with("ltc_asphalt: accuracy "));
    assert_artifacts(tmp.path());

    let s = summary(tmp.path());
    assert_eq!(s["scenario"]["name"], "ltc_asphalt");
    assert_eq!(s["seed"], 101);
    let accuracy = s["metrics"]["mode_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    let rmse = s["metrics"]["state_rmse"].as_array().unwrap();
    assert_eq!(rmse.len(), 2);
    assert!(rmse.iter().all(|v| v.as_f64().unwrap() > 0.0));
    assert!(s["metrics"]["latencies"].as_array().unwrap().len() == 1);

    let trace = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    assert_eq!(
        header,
        "t_s,true_mode,dominant_mode,mu_asphalt,mu_grass,mu_crushed_concrete,\
         fused_v_mps,fused_omega_radps,truth_v_mps,truth_omega_radps,\
         lik_asphalt,lik_grass,lik_crushed_concrete"
    );
    // 30 s at 20 Hz plus the initial snapshot and the header line.
    assert_eq!(trace.lines().count(), 602);
}

#[test]
fn run_multiple_scenarios_use_per_name_subdirectories() {
    let tmp = TempDir::new().unwrap();
    let out = bin()
        .args(["run", "ltc_asphalt", "stc_baseline", "--jobs", "2", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_artifacts(&tmp.path().join("ltc_asphalt"));
    assert_artifacts(&tmp.path().join("stc_baseline"));
    let text = stdout_of(&out);
    assert!(text.contains("ltc_asphalt: accuracy "));
    assert!(text.contains("stc_baseline: accuracy "));
}

#[test]
fn reruns_are_byte_identical_through_the_binary() {
    let tmp = TempDir::new().unwrap();
    for pass in ["a", "b"] {
        let out = bin()
            .args(["run", "ltc_grass", "--out"])
            .arg(tmp.path().join(pass))
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    for file in ["trace.csv", "weights.csv", "summary.json"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
}

#[test]
fn seed_flag_overrides_the_bundled_seed() {
    let tmp = TempDir::new().unwrap();
    for (dir, seed_args) in [("default", &[][..]), ("reseeded", &["--seed", "5"][..])] {
        let out = bin()
            .args(["run", "ltc_grass"])
            .args(seed_args)
            .arg("--out")
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    assert_eq!(summary(&tmp.path().join("default"))["seed"], 102);
    assert_eq!(summary(&tmp.path().join("reseeded"))["seed"], 5);
    let a = fs::read(tmp.path().join("default/trace.csv")).unwrap();
    let b = fs::read(tmp.path().join("reseeded/trace.csv")).unwrap();
    assert!(a != b, "different seeds produced identical traces");
}

#[test]
fn probability_update_flag_switches_the_weighting() {
    let tmp = TempDir::new().unwrap();
    let out = bin()
        .args(["run", "ltc_switching", "--probability-update", "predicted", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(summary(tmp.path())["scenario"]["probability_update"], "predicted");
}

#[test]
fn out_dir_env_var_supplies_the_default_root() {
    let tmp = TempDir::new().unwrap();
    let work = TempDir::new().unwrap();
    let out = bin()
        .args(["run", "ltc_asphalt"])
        .env("IMM_OUT_DIR", tmp.path())
        .current_dir(work.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_artifacts(tmp.path());
    assert!(!work.path().join("out").exists());
}

#[test]
fn unknown_scenario_name_fails() {
    let out = bin().args(["run", "no_such_scenario"]).output().unwrap();
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("loading scenario 'no_such_scenario'"), "stderr: {err}");
    assert!(err.contains("unknown bundled scenario"), "stderr: {err}");
}

#[test]
fn validate_accepts_every_bundled_scenario() {
    for name in BUNDLED {
        let out = bin().args(["validate", name]).output().unwrap();
        assert!(out.status.success(), "{name} failed validation");
        assert_eq!(stdout_of(&out), format!("ok: {name}\n"));
    }
}

#[test]
fn validate_names_the_offending_fields() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(
        &path,
        r#"{
            "name": "bad",
            "dt_s": 0.0,
            "bank": {
                "family": "ltc",
                "modes": [{"label": "a", "traction_factor": 1.5, "tau_s": 0.2}]
            },
            "maneuver": {"kind": "skidpad", "base_speed_mps": 0.5, "radius_m": 1.0,
                         "duration_s": 5.0},
            "schedule": [{"start_s": 0.0, "mode": 0}]
        }"#,
    )
    .unwrap();
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("dt_s: must be positive"), "stdout: {text}");
    assert!(
        text.contains("bank.modes[0].traction_factor: must lie in (0, 1]"),
        "stdout: {text}"
    );
}

#[test]
fn custom_config_file_validates_and_runs() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("tiny.json");
    fs::write(
        &path,
        r#"{
            "name": "tiny",
            "seed": 9,
            "bank": {
                "family": "stc",
                "modes": [
                    {"label": "clean", "k": 1.0, "m": 1.0},
                    {"label": "slipping", "k": 0.7, "m": 0.75}
                ]
            },
            "maneuver": {"kind": "sinusoidal", "base_speed_mps": 0.6,
                         "amplitude_rad_s": 0.8, "frequency_hz": 0.2,
                         "duration_s": 5.0},
            "schedule": [{"start_s": 0.0, "mode": 0}, {"start_s": 2.5, "mode": 1}]
        }"#,
    )
    .unwrap();

    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(stdout_of(&out), "ok: tiny\n");

    let out_dir = tmp.path().join("run");
    let out = bin().arg("run").arg(&path).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_artifacts(&out_dir);
    let s = summary(&out_dir);
    assert_eq!(s["scenario"]["name"], "tiny");
    assert_eq!(s["metrics"]["latencies"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_json_fails_with_the_load_context() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("broken.json");
    fs::write(&path, "{ not json").unwrap();
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("loading scenario"), "stderr: {}", stderr_of(&out));
}
