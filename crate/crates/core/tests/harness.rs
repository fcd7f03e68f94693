mod common;

use std::collections::BTreeSet;
use std::path::Path;

use sensorsim::harness::{self, ClassSplit, EvaluatorSpec, RunOptions, SweepPlan};
use sensorsim::imaging::{DatasetManifest, SensorConfig};
use sensorsim::pipeline::{PreprocessMode, SimulationOptions};

use common::*;

fn small_dataset(dir: &Path, classes: &[&str], per_class: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        for i in 0..per_class {
            let seed = (c * 100 + i) as u64;
            let base = 0.03 + 0.02 * c as f64;
            let scene = natural_scene(64, seed, base..base + 0.01, 0.3);
            entries.push(write_entry(dir, &dn_image(scene, 2.0), &metadata(&format!("{class}_{i}"), class, 2.0)));
        }
    }
    write_manifest(dir, classes.iter().map(|c| c.to_string()).collect(), entries)
}

fn plan(evaluator: EvaluatorSpec, epochs: u32) -> SweepPlan {
    SweepPlan {
        trial_id: "t".into(),
        param_name: "focal_length_m".into(),
        values: vec![0.5, 1.0],
        group: None,
        config: SensorConfig::reference(0.5, 0.06),
        mode: PreprocessMode::Crop,
        evaluator,
        epochs,
        folds: None,
        simulation: SimulationOptions::default(),
        zero_shot: None,
    }
}

fn stub(dir: &Path, body: &str) -> EvaluatorSpec {
    let path = dir.join("stub.sh");
    std::fs::write(
        &path,
        format!(
            "#!/bin/sh\nwhile [ $# -gt 0 ]; do\n  case \"$1\" in\n    --out) OUT=\"$2\"; shift 2 ;;\n    --epochs) EPOCHS=\"$2\"; shift 2 ;;\n    *) shift 2 ;;\n  esac\ndone\n{body}\n"
        ),
    )
    .unwrap();
    EvaluatorSpec::Command {
        command: format!("sh {}", path.display()),
        timeout_s: 30,
    }
}

fn run(plan: &SweepPlan, manifest: &DatasetManifest, out: &Path, cache: Option<&Path>) -> harness::SweepOutcome {
    let folds = harness::make_folds(manifest, 2, 3).unwrap();
    harness::run_sweep(
        plan,
        &folds,
        manifest,
        &RunOptions {
            out_dir: out.to_path_buf(),
            workers: 2,
            cache_dir: cache.map(Path::to_path_buf),
        },
    )
    .unwrap()
}

#[test]
fn folds_are_stratified_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(dir.path(), &["a", "b", "c"], 7);
    let f = harness::make_folds(&m, 3, 9).unwrap();
    assert_eq!(f, harness::make_folds(&m, 3, 9).unwrap());
    assert_ne!(f.folds, harness::make_folds(&m, 3, 10).unwrap().folds);
    for class in ["a", "b", "c"] {
        let mut per_fold = [0; 3];
        for (e, &k) in m.entries.iter().zip(&f.folds) {
            if e.class_label == class {
                per_fold[k] += 1;
            }
        }
        assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1, "{class}: {per_fold:?}");
    }
    let tested: usize = (0..3).map(|k| f.split(k).1.len()).sum();
    assert_eq!(tested, m.entries.len());
    assert!(harness::make_folds(&m, 1, 0).is_err());
    assert!(harness::make_folds(&m, 10, 0).unwrap().warnings.len() == 3);
}

#[test]
fn external_evaluator_metrics_become_records() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b"], 4);
    let spec = stub(
        dir.path(),
        r#"printf '{"epochs":[{"epoch":0,"metrics":{"acc":0.25}},{"epoch":1,"metrics":{"acc":0.75,"loss":1.5}}]}' > "$OUT""#,
    );
    let outcome = run(&plan(spec, 1), &m, &dir.path().join("out"), None);
    assert!(outcome.is_success(), "{:?}", outcome.failures);
    // 2 folds × 2 values × 3 metric rows
    assert_eq!(outcome.records.len(), 12);
    assert!(outcome.records.iter().any(|r| r.epoch == 1 && r.metric == "loss" && r.value == 1.5));
    let cell = dir.path().join("out/cells/fold0_cell0");
    let train: serde_json::Value = serde_json::from_slice(&std::fs::read(cell.join("train/manifest.json")).unwrap()).unwrap();
    assert_eq!(train["entries"].as_array().unwrap().len(), 4);
    for e in train["entries"].as_array().unwrap() {
        assert!(cell.join("train").join(e["file"].as_str().unwrap()).exists());
    }
}

#[test]
fn evaluator_errors_are_cell_failures() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b"], 3);
    let cases = [
        ("malformed", stub(&dir.path().join("m").tap_mkdir(), r#"printf '{"epochs": [' > "$OUT""#), "schema"),
        (
            "unknown field",
            stub(&dir.path().join("u").tap_mkdir(), r#"printf '{"epochs":[{"epoch":0,"metrics":{},"x":1}]}' > "$OUT""#),
            "schema",
        ),
        (
            "epoch out of range",
            stub(&dir.path().join("e").tap_mkdir(), r#"printf '{"epochs":[{"epoch":5,"metrics":{"a":1}}]}' > "$OUT""#),
            "epoch",
        ),
        ("nonzero exit", stub(&dir.path().join("x").tap_mkdir(), "echo boom >&2; exit 3"), "boom"),
        ("no output", stub(&dir.path().join("n").tap_mkdir(), "true"), "neither"),
    ];
    for (name, spec, needle) in cases {
        let outcome = run(&plan(spec, 0), &m, &dir.path().join(format!("out_{name}")), None);
        assert!(outcome.records.is_empty(), "{name}");
        assert_eq!(outcome.failures.len(), 4, "{name}");
        assert!(outcome.failures.iter().all(|f| f.error.contains(needle)), "{name}: {:?}", outcome.failures[0].error);
    }
}

#[test]
fn evaluator_timeout_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b"], 2);
    let mut p = plan(stub(dir.path(), "sleep 20"), 0);
    p.values = vec![0.5];
    p.folds = Some(vec![0]);
    if let EvaluatorSpec::Command { timeout_s, .. } = &mut p.evaluator {
        *timeout_s = 1;
    }
    let start = std::time::Instant::now();
    let outcome = run(&p, &m, &dir.path().join("out"), None);
    assert!(start.elapsed().as_secs() < 10);
    assert!(outcome.failures[0].error.contains("timed out"));
}

#[test]
fn emb1_fallback_scores_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b"], 4);
    // copy a builtin run's embeddings into the evaluator output directory
    let builtin = run(&plan(EvaluatorSpec::Builtin, 0), &m, &dir.path().join("b"), None);
    assert!(builtin.is_success());
    let src = dir.path().join("b/cells");
    let spec = stub(
        dir.path(),
        &format!(
            "CELL=$(basename $(dirname $(dirname \"$OUT\")))\ncp {}/$CELL/epoch_0_test.emb1 $(dirname \"$OUT\")/epoch_0_test.emb1",
            src.display()
        ),
    );
    let outcome = run(&plan(spec, 0), &m, &dir.path().join("out"), None);
    assert!(outcome.is_success(), "{:?}", outcome.failures);
    let rap = |o: &harness::SweepOutcome, name: &str| -> Vec<f64> {
        o.records.iter().filter(|r| r.metric == name).map(|r| r.value).collect()
    };
    assert_eq!(rap(&outcome, "rap"), rap(&builtin, "baseline_rap"));
}

#[test]
fn warm_cache_skips_simulation_and_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b", "c"], 4);
    let cache = dir.path().join("cache");
    let p = plan(EvaluatorSpec::Builtin, 2);
    let cold = run(&p, &m, &dir.path().join("cold"), Some(&cache));
    let warm = run(&p, &m, &dir.path().join("warm"), Some(&cache));
    assert!(cold.cache_misses > 0);
    assert_eq!(warm.cache_misses, 0);
    assert_eq!(warm.cache_hits, cold.cache_hits + cold.cache_misses);
    assert_eq!(harness::records_csv(&cold.records).unwrap(), harness::records_csv(&warm.records).unwrap());
    let epochs: BTreeSet<u32> = warm.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, BTreeSet::from([0, 1, 2]));

    let mut other = p.clone();
    other.simulation.seed = 99;
    let reseeded = run(&other, &m, &dir.path().join("seed"), Some(&cache));
    assert_eq!(reseeded.cache_misses, cold.cache_misses);
}

#[test]
fn zero_shot_splits_never_leak_classes() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b", "c", "d"], 3);
    let train = vec!["a".to_string(), "b".to_string()];
    let eval = vec!["c".to_string(), "d".to_string()];
    assert!(harness::split_classes(&m, &train, &["b".to_string()]).is_err());
    assert!(harness::split_classes(&m, &train, &["z".to_string()]).is_err());
    assert!(harness::split_classes(&m, &train, &[]).is_err());
    let split: ClassSplit = harness::split_classes(&m, &train, &eval).unwrap();
    let mut p = plan(stub(dir.path(), r#"printf '{"epochs":[{"epoch":0,"metrics":{"n":1}}]}' > "$OUT""#), 0);
    p.zero_shot = Some(split);
    let outcome = run(&p, &m, &dir.path().join("out"), None);
    assert!(outcome.is_success(), "{:?}", outcome.failures);
    let classes_in = |path: std::path::PathBuf| -> BTreeSet<String> {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        v["entries"].as_array().unwrap().iter().map(|e| e["class"].as_str().unwrap().to_string()).collect()
    };
    for cell in std::fs::read_dir(dir.path().join("out/cells")).unwrap() {
        let cell = cell.unwrap().path();
        assert!(classes_in(cell.join("train/manifest.json")).is_subset(&train.iter().cloned().collect()));
        assert!(classes_in(cell.join("test/manifest.json")).is_subset(&eval.iter().cloned().collect()));
    }
}

#[test]
fn grouped_sweep_emits_curves_and_optimal_q() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_dataset(&dir.path().join("data").tap_mkdir(), &["a", "b"], 4);
    let mut p = plan(EvaluatorSpec::Builtin, 0);
    p.values = vec![0.3, 0.6, 0.9];
    p.group = Some(harness::ParamAxis {
        name: "aperture_diameter_m".into(),
        values: vec![0.05, 0.07],
    });
    let out = dir.path().join("out");
    let outcome = run(&p, &m, &out, None);
    assert!(outcome.is_success());
    let files = harness::emit_results(&p, &outcome, &out, true).unwrap();
    for name in ["records.csv", "records.json", "curves.csv", "argmax.json", "optimal_q.json"] {
        assert!(files.iter().any(|f| f.ends_with(name)), "{name} missing");
    }
    let csv = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(csv.starts_with("trial_id,fold,param_name,param_value,epoch,metric,value\n"));
    assert!(!csv.contains('\r'));
    let trials: BTreeSet<&str> = outcome.records.iter().map(|r| r.trial_id.as_str()).collect();
    assert_eq!(trials, BTreeSet::from(["t/aperture_diameter_m=0.05", "t/aperture_diameter_m=0.07"]));
    let table = harness::optimal_q_table(&p, &outcome.records).unwrap();
    assert!(!table.is_empty());
}

#[test]
fn plan_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan("cmd:python eval.py".parse().unwrap(), 3);
    let path = dir.path().join("plan.json");
    std::fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(SweepPlan::load(&path).unwrap(), p);
    assert!("nope".parse::<EvaluatorSpec>().is_err());
    assert_eq!(harness::parse_values("0.1:0.4:0.1").unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
    assert_eq!(harness::parse_values("1, 2.5").unwrap(), vec![1.0, 2.5]);
    assert!(harness::parse_values("1:0:0.1").is_err());
}

trait TapMkdir {
    fn tap_mkdir(self) -> Self;
}

impl TapMkdir for std::path::PathBuf {
    fn tap_mkdir(self) -> Self {
        std::fs::create_dir_all(&self).unwrap();
        self
    }
}
