use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use battwin::learners::{ForestParams, LearnerConfig};
use battwin::synth::{linear_schedule, SynthParams};
use battwin::twin::TwinConfig;
use tempfile::TempDir;

fn battwin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_battwin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = battwin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two short synthetic batteries written as traces, then labeled.
fn fleet(dir: &Path) -> (PathBuf, PathBuf) {
    let base = SynthParams {
        sample_period: 60.0,
        ..SynthParams::default()
    };
    let params = vec![
        SynthParams {
            battery_id: "VEH".into(),
            soh_schedule: linear_schedule(100.0, 90.0, 11),
            seed: 1,
            ..base.clone()
        },
        SynthParams {
            battery_id: "HIST".into(),
            soh_schedule: linear_schedule(100.0, 70.0, 16),
            seed: 2,
            ..base
        },
    ];
    let cfg = dir.join("synth.json");
    fs::write(&cfg, serde_json::to_string(&params).unwrap()).unwrap();
    let synth = dir.join("synth");
    ok(&["synth", "--config", s(&cfg), "--out", s(&synth)]);
    let traces = synth.join("traces.csv");
    let labeled = dir.join("label");
    ok(&["label", "--dataset", s(&traces), "--out", s(&labeled)]);
    (traces, labeled.join("labeled.csv"))
}

fn small_twin(dir: &Path) -> PathBuf {
    let rf = |max_depth| {
        LearnerConfig::RandomForest(ForestParams {
            n_trees: 5,
            max_depth,
            ..ForestParams::default()
        })
    };
    let cfg = TwinConfig {
        soc_learner: rf(Some(16)),
        soh_learner: rf(None),
        vehicle_battery: Some("VEH".into()),
        historical_batteries: Some(vec!["HIST".into()]),
        ..TwinConfig::default()
    };
    let path = dir.join("twin.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_header_names_the_file() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("no_header.csv");
    fs::write(&bad, "B0005,1,0.0,4.1,2.0,24.0\n").unwrap();
    let out = battwin(&["ingest", "--input", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no_header.csv"), "{err}");
}

#[test]
fn ingest_reports_counts_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let (traces, _) = fleet(dir.path());
    let out = dir.path().join("ingest");
    let stdout = ok(&["ingest", "--input", s(&traces), "--out", s(&out)]);
    assert!(stdout.contains("HIST: 16 cycles"), "{stdout}");
    assert!(stdout.contains("total: 2 batteries, 27 cycles"), "{stdout}");
    // Canonical output is a fixed point.
    assert_eq!(
        fs::read(&traces).unwrap(),
        fs::read(out.join("dataset.csv")).unwrap()
    );
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn huge_epsilon_removes_nothing() {
    let dir = TempDir::new().unwrap();
    let (traces, _) = fleet(dir.path());
    let out = dir.path().join("eps");
    let stdout = ok(&["label", "--dataset", s(&traces), "--epsilon", "200", "--out", s(&out)]);
    assert!(stdout.contains("removed 0"), "{stdout}");
    let removed: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(out.join("removed.json")).unwrap()).unwrap();
    assert!(removed.is_empty());
}

#[test]
fn single_tree_fits_constant_target_exactly() {
    let dir = TempDir::new().unwrap();
    let (_, labeled) = fleet(dir.path());
    // Only the nominal cycle: its SOH target is one constant value.
    let out = dir.path().join("train");
    ok(&[
        "train", "--labeled", s(&labeled), "--target", "soh", "--batteries", "HIST",
        "--soh-band", "100", "--band-tolerance", "0.5", "--params", "n_trees=1",
        "--out", s(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["in_sample"]["mae_pct"], 0.0);
    assert_eq!(report["in_sample"]["max_err_pct"], 0.0);
}

#[test]
fn seeded_cross_validation_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    let (_, labeled) = fleet(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train", "--labeled", s(&labeled), "--target", "soc", "--params", "n_trees=3",
            "--kfold", "5", "--seed", "7", "--out", s(&out),
        ]);
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("cv.json")).unwrap()).unwrap();
        let model = fs::read(out.join("model.json")).unwrap();
        let errors: Vec<_> = v["folds"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| (f["mae_pct"].clone(), f["rmse_pct"].clone()))
            .collect();
        (errors, model)
    };
    let a = run("a");
    assert_eq!(a.0.len(), 5);
    assert_eq!(a, run("b"));
}

#[test]
fn no_retrain_run_has_no_model_updates() {
    let dir = TempDir::new().unwrap();
    let (_, labeled) = fleet(dir.path());
    let cfg = small_twin(dir.path());
    let out = dir.path().join("sim");
    ok(&[
        "simulate", "--labeled", s(&labeled), "--config", s(&cfg), "--no-retrain",
        "--out", s(&out),
    ]);
    let log = fs::read_to_string(out.join("run_log.jsonl")).unwrap();
    assert!(!log.contains("\"retrain_started\""));
    // Only the bootstrap install swaps a model in.
    assert_eq!(log.matches("\"model_swapped\"").count(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_retrains"], 0);
    let cycles = fs::read_to_string(out.join("cycles.csv")).unwrap();
    assert_eq!(cycles.lines().count(), 1 + 11);
}

#[test]
fn socket_and_inproc_logs_agree() {
    let dir = TempDir::new().unwrap();
    let (_, labeled) = fleet(dir.path());
    let cfg = small_twin(dir.path());
    let run = |transport: &str| {
        let out = dir.path().join(transport);
        ok(&[
            "simulate", "--labeled", s(&labeled), "--config", s(&cfg), "--transport", transport,
            "--delta", "2", "--out", s(&out),
        ]);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        assert!(summary["n_retrains"].as_u64().unwrap() > 0);
        fs::read(out.join("run_log.jsonl")).unwrap()
    };
    assert_eq!(run("inproc"), run("socket"));
}

#[test]
fn staleness_curves_have_one_column_per_band() {
    let dir = TempDir::new().unwrap();
    let (_, labeled) = fleet(dir.path());
    let out = dir.path().join("stale");
    let stdout = ok(&[
        "evaluate-staleness", "--labeled", s(&labeled), "--battery", "HIST",
        "--train-bands", "100,86,74", "--eval-band", "74", "--params", "n_trees=3",
        "--out", s(&out),
    ]);
    assert_eq!(stdout.lines().count(), 4, "{stdout}");
    let csv = fs::read_to_string(out.join("soc_curves.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "relative_time,truth,band_100,band_86,band_74"
    );
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5));
}

#[test]
fn report_marks_removed_cycles() {
    let dir = TempDir::new().unwrap();
    let traces = dir.path().join("spiky.csv");
    let mut text = String::from(
        "battery_id,cycle_index,relative_time_s,voltage_v,current_a,temperature_c\n",
    );
    // Three cycles at 2 A; the middle one lasts longest, so its SOH spikes.
    for (cycle, seconds) in [(0, 3600), (1, 3700), (2, 3400)] {
        for t in (0..=seconds).step_by(100) {
            let v = 4.1 - 1.0 * t as f64 / seconds as f64;
            text.push_str(&format!("B1,{cycle},{t},{v},2.0,24.0\n"));
        }
    }
    fs::write(&traces, text).unwrap();
    let out = dir.path().join("rep");
    ok(&["report", "--dataset", s(&traces), "--bands", "100", "--out", s(&out)]);
    let profile = fs::read_to_string(out.join("soh_profile.csv")).unwrap();
    let removed: Vec<&str> = profile
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(removed, ["false", "true", "false"]);
    assert!(fs::read_to_string(out.join("voltage_profiles.csv"))
        .unwrap()
        .starts_with("band,cycle_index,soh_pct,"));
}
