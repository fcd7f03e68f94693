mod common;

use std::path::Path;
use std::process::{Command, Output};

use sensorsim::imaging::SensorConfig;

use common::*;

fn sensorsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensorsim")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn dataset(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let mut entries = Vec::new();
    for (c, class) in ["a", "b"].iter().enumerate() {
        for i in 0..6 {
            let scene = natural_scene(64, (c * 10 + i) as u64, 0.03..0.05, 0.3);
            entries.push(write_entry(dir, &dn_image(scene, 2.0), &metadata(&format!("{class}{i}"), class, 2.0)));
        }
    }
    write_manifest(dir, vec!["a".into(), "b".into()], entries);
}

#[test]
fn simulate_then_score_with_iqa() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string(&SensorConfig::reference(0.5, 0.06)).unwrap()).unwrap();
    let out = dir.path().join("sim");
    let o = sensorsim(&[
        "simulate", "--config", s(&config), "--manifest", s(&data.join("manifest.json")), "--out", s(&out), "--explain",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let budget: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((budget["q"].as_f64().unwrap() - 0.625).abs() < 1e-9);
    let report = json(&out.join("report.json"));
    assert_eq!(report["entries"].as_array().unwrap().len(), 12);
    for id in ["a0", "b2"] {
        for suffix in [".bimg", ".ref.bimg", ".json"] {
            assert!(out.join(format!("{id}{suffix}")).exists(), "{id}{suffix}");
        }
    }

    // the references sit next to the outputs under a different suffix
    let refs = dir.path().join("refs");
    std::fs::create_dir_all(&refs).unwrap();
    for id in ["a0", "a1", "a2", "a3", "a4", "a5", "b0", "b1", "b2", "b3", "b4", "b5"] {
        std::fs::copy(out.join(format!("{id}.ref.bimg")), refs.join(format!("{id}.bimg"))).unwrap();
    }
    let csv = dir.path().join("ssim.csv");
    let o = sensorsim(&["iqa", "ssim", "--ref", s(&refs), "--test", s(&out), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("file,metric,value,per_band\n"));
    assert_eq!(text.lines().count(), 13);
    for line in text.lines().skip(1) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(v > 0.0 && v < 1.0, "{line}");
    }
}

#[test]
fn giqe_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, serde_json::to_string(&SensorConfig::reference(0.5, 0.06)).unwrap()).unwrap();
    let out = dir.path().join("giqe.csv");
    let o = sensorsim(&["giqe", "--config", s(&config), "--sweep", "focal_length_m=0.2:0.4:0.1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("focal_length_m,q,gsd_m,rer,snr,niirs\n"));
    assert_eq!(text.lines().count(), 4);

    let o = sensorsim(&["giqe", "--config", s(&config), "--explain"]);
    let single: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(single["terms"].is_object() || single["terms"].is_array());

    let o = sensorsim(&["giqe", "--config", s(&config), "--sweep", "no_such_param=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metrics_from_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "id,label,x,y\n1,x,0.9,0.1\n2,x,0.8,0.3\n3,y,0.2,0.7\n4,y,0.6,0.4\n").unwrap();
    let out = dir.path().join("m.json");
    let value = |metric: &str, extra: &[&str]| {
        let mut args = vec!["metrics", metric, "--scores", s(&scores), "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = sensorsim(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        json(&out)["value"].as_f64().unwrap()
    };
    assert_eq!(value("topk", &[]), 0.75);
    assert_eq!(value("topk", &["--k", "2"]), 1.0);
    assert_eq!(value("auc", &[]), 1.0);
    assert!(value("cap", &[]) > 0.9);
    let o = sensorsim(&["metrics", "rap", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset(&data);
    let manifest = data.join("manifest.json");
    let o = sensorsim(&["validate", "--manifest", s(&manifest), "--folds", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let o = sensorsim(&["validate", "--manifest", s(&manifest), "--folds", "7"]);
    assert_eq!(o.status.code(), Some(1));

    let plan = dir.path().join("plan.json");
    let mut p = serde_json::json!({
        "trial_id": "cli",
        "param_name": "focal_length_m",
        "values": [0.4, 0.8],
        "evaluator": "builtin",
        "epochs": 1,
    });
    p["config"] = serde_json::to_value(SensorConfig::reference(0.5, 0.06)).unwrap();
    std::fs::write(&plan, p.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = sensorsim(&[
        "sweep", "--plan", s(&plan), "--manifest", s(&manifest), "--folds", "3", "--out", s(&out), "--plot-data",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.csv", "records.json", "curves.csv", "argmax.json", "folds.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(json(&out.join("folds.json"))["k"], 3);

    let o = sensorsim(&[
        "sweep", "--plan", s(&plan), "--manifest", s(&manifest), "--folds", "3", "--out", s(&out), "--evaluator", "cmd:false",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
