use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biomaudit::subjfeat::Pose;
use biomaudit::synth::{standing_keypoints, write_dataset, SyntheticDataset};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_biomaudit"));
    cmd.env_remove("BIOMAUDIT_SEED");
    cmd
}

fn run(args: &[&str], ds: &SyntheticDataset, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--manifest")
        .arg(&ds.manifest)
        .arg("--keypoints")
        .arg(&ds.keypoints)
        .arg("--predictions")
        .arg(&ds.predictions)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn setup(n: usize) -> (tempfile::TempDir, SyntheticDataset, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(&dir.path().join("data"), n, 11).unwrap();
    let out = dir.path().join("out");
    (dir, ds, out)
}

#[test]
fn features_five_samples() {
    let (_d, ds, out) = setup(5);
    let o = run(&["features"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("features.csv")).len(), 5);
    let first = fs::read(out.join("features.csv")).unwrap();

    let o = run(&["features"], &ds, &out);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(out.join("features.csv")).unwrap(), first);
}

#[test]
fn missing_keypoints_file_exits_2() {
    let (_d, mut ds, out) = setup(5);
    ds.keypoints = ds.root.join("nope.json");
    let o = run(&["features"], &ds, &out);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "MissingFile");
}

#[test]
fn undecodable_image_is_error_record() {
    let (_d, ds, out) = setup(5);
    fs::write(ds.root.join("images/s0002.png"), b"\x89PNG\r\n\x1a\nbroken").unwrap();
    let o = run(&["features"], &ds, &out);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("features.csv")).len(), 4);
    let log = csv_rows(&out.join("features_log.csv"));
    assert_eq!(log.len(), 1);
    assert_eq!(log[0][0], "s0002");
    assert_eq!(log[0][1], "error");
}

#[test]
fn explain_writes_parseable_artifacts() {
    let (_d, ds, out) = setup(30);
    assert_eq!(run(&["features"], &ds, &out).status.code(), Some(0));
    let o = run(&["explain"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let lines = fs::read_to_string(out.join("shapley.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 30);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["phi"].as_object().unwrap().len(), 7);
    }
    assert_eq!(csv_rows(&out.join("rankings.csv")).len(), 7);
    assert_eq!(csv_rows(&out.join("dependence_resolution.csv")).len(), 30);
    assert_eq!(csv_rows(&out.join("per_tier.csv")).len(), 7);
    assert!(String::from_utf8_lossy(&o.stdout).contains("#1 "));
}

#[test]
fn explain_other_seed_keeps_efficiency() {
    let (_d, ds, out) = setup(40);
    run(&["features"], &ds, &out);
    let o = run(&["explain", "--seed", "5", "--background-cap", "15"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("surrogate.json")).unwrap()).unwrap();
    assert_eq!(s["background_rows"], 15);
    assert!(s["max_efficiency_gap"].as_f64().unwrap() < 1e-9);
}

#[test]
fn faces_without_frontal_samples() {
    let (_d, ds, out) = setup(6);
    let entries: Vec<serde_json::Value> = (0..6)
        .map(|i| {
            serde_json::json!({
                "image_id": format!("s{i:04}"),
                "keypoints": standing_keypoints(20.0, 40.0, Pose::Sideways, |_| 0.9),
                "score": 1.0,
            })
        })
        .collect();
    fs::write(&ds.keypoints, serde_json::to_string(&entries).unwrap()).unwrap();
    run(&["features"], &ds, &out);
    let o = run(&["faces"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert!(csv_rows(&out.join("face_manifest.csv")).is_empty());
}

#[test]
fn faces_writes_one_png_per_frontal() {
    let (_d, ds, out) = setup(20);
    run(&["features"], &ds, &out);
    let o = run(&["faces"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let frontal = csv_rows(&out.join("features.csv"))
        .iter()
        .filter(|r| r[10] == "frontal")
        .count();
    let rows = csv_rows(&out.join("face_manifest.csv"));
    assert_eq!(rows.len(), frontal);
    for r in rows {
        assert!(out.join(&r[1]).is_file());
    }
}

#[test]
fn faces_unwritable_dir() {
    let (_d, ds, out) = setup(6);
    run(&["features"], &ds, &out);
    fs::write(out.join("faces"), "not a directory").unwrap();
    let o = run(&["faces"], &ds, &out);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "WriteError");
}

#[test]
fn metrics_perfect_predictions() {
    let (_d, ds, out) = setup(12);
    let mut preds = String::from("model_id,sample_id,gender_pred\n");
    for r in csv_rows(&ds.manifest) {
        for m in ["m1", "m2"] {
            preds.push_str(&format!("{m},{},{}\n", r[0], r[4]));
        }
    }
    fs::write(&ds.predictions, preds).unwrap();
    run(&["features"], &ds, &out);
    let o = run(&["metrics"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for r in csv_rows(&out.join("model_ma.csv")) {
        assert_eq!(r[2], "100", "{r:?}");
    }
}

#[test]
fn metrics_face_importance_table() {
    let (dir, ds, out) = setup(12);
    let fi_in = dir.path().join("fi_in.csv");
    fs::write(
        &fi_in,
        "label,ma_face,ma_body\nPETA,57.60,93.24\nPA-100K,52.52,91.06\nRAP,73.63,96.09\n\
         PETA-frontal,61.09,92.52\nPA-100K-frontal,57.03,91.86\nRAP-frontal,75.31,95.98\n",
    )
    .unwrap();
    run(&["features"], &ds, &out);
    let o = run(&["metrics", "--fi-input", fi_in.to_str().unwrap()], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fi: Vec<f64> = csv_rows(&out.join("fi.csv"))
        .iter()
        .map(|r| r[3].parse().unwrap())
        .collect();
    let expected = [17.58, 6.14, 51.27, 26.08, 16.79, 55.05];
    for (got, want) in fi.iter().zip(expected) {
        assert!((got - want).abs() <= 0.01, "{got} vs {want}");
    }
}

#[test]
fn metrics_missing_model_file() {
    let (dir, ds, out) = setup(6);
    run(&["features"], &ds, &out);
    let absent = dir.path().join("model_c.csv");
    let o = bin()
        .args(["metrics", "--out"])
        .arg(&out)
        .arg("--predictions")
        .arg(&ds.predictions)
        .arg("--predictions")
        .arg(&absent)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("MissingFile"));
    assert!(stderr(&o).contains("model_c"));
}

#[test]
fn report_needs_rankings() {
    let (_d, ds, out) = setup(6);
    run(&["features"], &ds, &out);
    let o = run(&["report"], &ds, &out);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "MissingUpstream");
}

#[test]
fn report_with_empty_rankings() {
    let (_d, ds, out) = setup(6);
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("rankings.csv"), "rank,feature,mean_abs_phi,direction\n").unwrap();
    let o = run(&["report"], &ds, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = fs::read_to_string(out.join("shap_bar.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(!svg.contains("class=\"bar\""));
    let _: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
}

#[test]
fn full_pipeline_is_idempotent() {
    let (_d, ds, out) = setup(24);
    let cmds = ["features", "tier", "explain", "faces", "metrics", "report"];
    let snapshot = |out: &Path| {
        let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
        for dir in [out.to_path_buf(), out.join("faces")] {
            for e in fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    files.push((p.clone(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    for c in cmds {
        assert_eq!(run(&[c], &ds, &out).status.code(), Some(0), "{c}");
    }
    let first = snapshot(&out);
    for c in cmds {
        run(&[c], &ds, &out);
    }
    assert_eq!(snapshot(&out), first);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rankings"].as_array().unwrap().len(), 7);
    assert!(report["tiers"].is_object());
}

#[test]
fn config_file_then_flags() {
    let (dir, ds, out) = setup(6);
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "manifest = {}\nkeypoints = {}\npredictions = {}\nout = {}\n",
            ds.manifest.display(),
            ds.keypoints.display(),
            ds.predictions.display(),
            dir.path().join("from_config").display()
        ),
    )
    .unwrap();
    let o = bin().args(["features", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("from_config/features.csv").is_file());

    let o = bin()
        .args(["features", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("features.csv").is_file());
}

#[test]
fn bad_flag_value_is_config_error() {
    let (_d, ds, out) = setup(5);
    let o = run(&["features", "--kernel", "5n"], &ds, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ConfigError"));
}
