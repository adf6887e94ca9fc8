//! End-to-end runs of the command line through `beamkit_cli::run`.

use std::path::{Path, PathBuf};

use beamkit_cli::scenes::{load_scene, Manifest};
use beamkit_cli::{run, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};
use beamkit_core::metrics::si_sdr;
use beamkit_core::signal::read_wav;
use tempfile::TempDir;

const SHORT: [&str; 4] = ["--set", "simulation.duration_s=0.5", "--set", "simulation.rt60_range=[0.1,0.3]"];
// long enough for STOI after silent frames are dropped
const SCORED: [&str; 4] = ["--set", "simulation.duration_s=1.5", "--set", "simulation.rt60_range=[0.1,0.3]"];

fn beamkit(args: &[&str]) -> i32 {
    run(std::iter::once("beamkit").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(out: &Path, seed: &str, count: &str) {
    simulate_with(out, seed, count, SHORT);
}

fn simulate_with(out: &Path, seed: &str, count: &str, set: [&str; 4]) {
    let mut a = vec!["simulate", "--seed", seed, "--count", count, "--out", p(out)];
    a.extend(set);
    assert_eq!(beamkit(&a), EXIT_OK);
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    for e in std::fs::read_dir(root).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn csv_rows(path: &Path) -> Vec<(String, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].to_string(), c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn simulate_is_seeded_and_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "7", "3");
    simulate(&b, "7", "3");
    let dirs: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    assert_eq!(dirs, ["scene_0007", "scene_0008", "scene_0009"]);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 15);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let s = load_scene(&a.join("scene_0008")).unwrap();
    assert_eq!(s.manifest.seed, Some(8));
    assert_eq!(s.manifest.num_samples, 8000);
}

#[test]
fn oracle_extract_then_evaluate() {
    let tmp = TempDir::new().unwrap();
    let (scenes, oracle, eval) = (tmp.path().join("scenes"), tmp.path().join("oracle"), tmp.path().join("eval"));
    simulate_with(&scenes, "3", "2", SCORED);
    let mut a = vec!["oracle-extract", "--scenes", p(&scenes), "--out", p(&oracle), "--steering", "whitened-pca"];
    a.extend(SCORED);
    assert_eq!(beamkit(&a), EXIT_OK);
    assert_eq!(beamkit(&["evaluate", "--manifests", p(&scenes), p(&oracle), "--out", p(&eval)]), EXIT_OK);

    let rows = csv_rows(&eval.join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    for id in ["scene_0003", "scene_0004"] {
        let mix = rows.iter().find(|r| r.0 == format!("{id}/mixture")).unwrap();
        let est = rows.iter().find(|r| r.0 == format!("{id}/oracle-mvdr-irm-whitened-pca")).unwrap();
        assert!(est.1 > mix.1, "{id}: {} vs {}", est.1, mix.1);

        // unprocessed row equals SI-SDR of the stored files at the reference mic
        let s = load_scene(&scenes.join(id)).unwrap();
        let r = s.manifest.reference_mic;
        let mixture = read_wav(scenes.join(id).join("mixture.wav")).unwrap();
        let target = read_wav(scenes.join(id).join("target.wav")).unwrap();
        let want = si_sdr(mixture.channel(r), target.channel(r)).unwrap();
        assert!((mix.1 - want).abs() < 1e-5, "{} vs {want}", mix.1);

        let Manifest::Estimate(m) = Manifest::read(&oracle.join(id).join("manifest.json")).unwrap() else {
            panic!("expected an estimate manifest");
        };
        let est_wav = read_wav(oracle.join(id).join(&m.estimate)).unwrap();
        assert!(est_wav.channel(0).iter().all(|v| v.abs() <= 1.0));
        let stored = m.details["estimate_si_sdr_db"].as_f64().unwrap();
        assert!((stored - est.1).abs() < 0.05, "{stored} vs {}", est.1);
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["count"], 4);
}

#[test]
fn invalid_configuration_exits_1_and_lists_every_problem() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let code = beamkit(&[
        "simulate",
        "--out",
        p(&out),
        "--set",
        "simulation.duration_s=-1",
        "--set",
        "extraction.loading=-2",
    ]);
    assert_eq!(code, EXIT_INVALID);
    assert!(!out.exists());

    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"simulation": {"duration": 1.0}, "nonsense": 1}"#).unwrap();
    let errs = beamkit_cli::config::PipelineConfig::load(Some(&cfg), &[]).unwrap_err();
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("simulation.duration")));
    assert_eq!(beamkit(&["simulate", "--config", p(&cfg), "--out", p(&out)]), EXIT_INVALID);
    assert_eq!(beamkit(&["simulate", "--out", p(&out), "--set", "simulation.bogus=1"]), EXIT_INVALID);
    // missing required argument
    assert_eq!(beamkit(&["simulate"]), EXIT_INVALID);
    assert!(!out.exists());
}

#[test]
fn overrides_change_the_run() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("s");
    let mut a = vec!["simulate", "--out", p(&out), "--set", "simulation.sample_rate=8000"];
    a.extend(SHORT);
    assert_eq!(beamkit(&a), EXIT_OK);
    let s = load_scene(&out.join("scene_0000")).unwrap();
    assert_eq!(s.manifest.sample_rate, 8000);
    assert_eq!(s.manifest.num_samples, 4000);
}

#[test]
fn runtime_failure_exits_2_and_removes_partial_output() {
    let tmp = TempDir::new().unwrap();
    let (scenes, out) = (tmp.path().join("scenes"), tmp.path().join("oracle"));
    simulate(&scenes, "0", "2");
    // the second scene is corrupt, so the first has already been written
    std::fs::write(scenes.join("scene_0001").join("mixture.wav"), b"not a wav").unwrap();
    let mut a = vec!["oracle-extract", "--scenes", p(&scenes), "--out", p(&out)];
    a.extend(SHORT);
    assert_eq!(beamkit(&a), EXIT_RUNTIME);
    assert!(!out.exists());

    // an existing output root survives; only what the run made goes
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(beamkit(&a), EXIT_RUNTIME);
    assert_eq!(files(&out), [out.join("keep.txt")]);

    let missing = tmp.path().join("nowhere");
    assert_eq!(beamkit(&["evaluate", "--manifests", p(&missing), "--out", p(&tmp.path().join("e"))]), EXIT_RUNTIME);
}

#[test]
fn beampattern_writes_its_files() {
    let tmp = TempDir::new().unwrap();
    let (scenes, out) = (tmp.path().join("scenes"), tmp.path().join("bp"));
    simulate(&scenes, "5", "1");
    let mut a = vec!["beampattern", "--scenes", p(&scenes), "--out", p(&out), "--set", "beampattern.angle_step_deg=2"];
    a.extend(SHORT);
    assert_eq!(beamkit(&a), EXIT_OK);
    let names: Vec<String> = files(&out)
        .iter()
        .map(|f| f.strip_prefix(&out).unwrap().to_string_lossy().into_owned())
        .collect();
    for want in ["beampattern.csv", "beampattern_mean.csv", "beampattern.json"] {
        assert!(names.iter().any(|n| n.ends_with(want)), "{want} missing from {names:?}");
    }
    let mean = files(&out).into_iter().find(|f| f.ends_with("beampattern_mean.csv")).unwrap();
    // one column per angle, 0..=180 in steps of 2; one row after averaging
    let text = std::fs::read_to_string(mean).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 91);
    assert_eq!(lines[1].split(',').count(), 91);
}

#[test]
fn train_then_infer_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let (scenes, model, est, eval) =
        (tmp.path().join("scenes"), tmp.path().join("model"), tmp.path().join("est"), tmp.path().join("eval"));
    simulate_with(&scenes, "11", "2", SCORED);
    let mut a = vec!["train", "--scenes", p(&scenes), "--out", p(&model), "--set", "training.steps=3"];
    a.extend(SCORED);
    assert_eq!(beamkit(&a), EXIT_OK);
    for f in ["checkpoint.bin", "model.json", "training.json", "loss_trace.csv"] {
        assert!(model.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(model.join("loss_trace.csv")).unwrap().lines().count(), 4);

    let ckpt = model.join("checkpoint.bin");
    let mut a = vec!["infer", "--checkpoint", p(&ckpt), "--scenes", p(&scenes), "--out", p(&est)];
    a.extend(SCORED);
    assert_eq!(beamkit(&a), EXIT_OK);
    assert_eq!(beamkit(&["evaluate", "--manifests", p(&est), "--out", p(&eval)]), EXIT_OK);
    let rows = csv_rows(&eval.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.0.ends_with("/neural") && r.1.is_finite()));

    let bad = tmp.path().join("nope.bin");
    assert_eq!(
        beamkit(&["infer", "--checkpoint", p(&bad), "--scenes", p(&scenes), "--out", p(&tmp.path().join("x"))]),
        EXIT_RUNTIME
    );
}
