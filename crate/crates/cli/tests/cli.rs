use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nearview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearview")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = nearview(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty(), "stdout must stay empty");
}

fn code(args: &[&str]) -> i32 {
    nearview(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, json).unwrap();
    p
}

const TINY: &str = r#"{
  "benchmark": {"width": 48, "height": 28, "n_train": 8, "n_val": 2, "n_test": 2},
  "init": {"resolution": [16, 8, 16]},
  "iterations": 20,
  "batch_size": 256
}"#;

#[test]
fn make_synthetic_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["make-synthetic", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    ok(&["make-synthetic", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key(Path::new("manifest.json")) && ta.contains_key(Path::new("scene.json")));
    assert_eq!(ta.len(), 12 + 3);
    assert_eq!(ta, tb);
    let c = dir.path().join("c");
    ok(&["make-synthetic", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]);
    assert_ne!(tree(&c), ta);
}

#[test]
fn every_subcommand_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, TINY);
    let bench = d.join("bench");
    let manifest = bench.join("manifest.json");
    ok(&["make-synthetic", "--config", s(&cfg), "--seed", "1", "--out", s(&bench)]);
    ok(&["train", "--config", s(&cfg), "--dataset", s(&manifest), "--out", s(&d.join("base"))]);
    let ckpt = d.join("base/field.ckpt");
    assert!(ckpt.exists() && d.join("base/report.jsonl").exists() && d.join("base/run.json").exists());
    assert_eq!(std::fs::read_to_string(d.join("base/report.jsonl")).unwrap().lines().count(), 1 + 20);

    ok(&["eval", "--dataset", s(&manifest), "--checkpoint", s(&ckpt), "--split", "test", "--out", s(&d.join("ev"))]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ev/eval_test.json")).unwrap()).unwrap();
    assert!(report["mean_psnr"].as_f64().unwrap().is_finite());
    assert_eq!(report["views"].as_array().unwrap().len(), 2);

    ok(&["finetune", "--config", s(&cfg), "--dataset", s(&manifest), "--checkpoint", s(&ckpt), "--iterations", "3", "--mode", "fullimage", "--out", s(&d.join("ft"))]);
    let lines = std::fs::read_to_string(d.join("ft/report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1 + 3);
    assert!(lines.contains("finetune_fullimage"));

    ok(&["finetune-testtime", "--config", s(&cfg), "--dataset", s(&manifest), "--checkpoint", s(&ckpt), "--frames", "0,1", "--out", s(&d.join("tt"))]);
    assert!(d.join("tt/field.ckpt").exists());

    ok(&["render", "--dataset", s(&manifest), "--checkpoint", s(&ckpt), "--frames", "0,9", "--out", s(&d.join("r"))]);
    for f in ["frame_000.png", "frame_009.png", "frame_000.depth", "render.json"] {
        assert!(d.join("r").join(f).exists(), "{f}");
    }

    ok(&["pseudo-dump", "--dataset", s(&manifest), "--checkpoint", s(&ckpt), "--frames", "0", "--out", s(&d.join("pd"))]);
    for f in ["label.png", "aggregate.png", "mask.png", "final.png", "label.json"] {
        assert!(d.join("pd/frame_000").join(f).exists(), "{f}");
    }
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pd/frame_000/label.json")).unwrap()).unwrap();
    assert_eq!(side["source_index"], 0);
}

#[test]
fn exit_codes_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = s(d);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--bogus"]), 1);
    assert_eq!(code(&["train", "--mode", "sideways", "--out", out]), 1);
    assert_eq!(code(&["eval", "--out", out]), 1, "missing --dataset");
    assert_eq!(code(&["help"]), 0);
    assert_eq!(code(&["train", "--dataset", "/nonexistent/manifest.json", "--out", out]), 2);
    let typo = write_config(d, r#"{"lamda_min": 2.0}"#);
    assert_eq!(code(&["train", "--config", s(&typo), "--out", out]), 2);

    let cfg = write_config(d, TINY);
    let bench = d.join("bench");
    ok(&["make-synthetic", "--config", s(&cfg), "--out", s(&bench)]);
    let manifest = bench.join("manifest.json");
    assert_eq!(code(&["train", "--dataset", s(&manifest), "--mode", "diverse", "--out", out]), 1);
    assert_eq!(code(&["train", "--config", s(&cfg), "--dataset", s(&manifest), "--lambda-min", "9", "--out", out]), 2);
    std::fs::write(d.join("junk.ckpt"), b"not a field").unwrap();
    assert_eq!(code(&["eval", "--dataset", s(&manifest), "--checkpoint", s(&d.join("junk.ckpt")), "--out", out]), 2);

    let wild = write_config(d, r#"{"init": {"resolution": [8, 8, 8]}, "iterations": 5, "batch_size": 64, "learning_rate": 1.7e308, "density_learning_rate": 1.7e308}"#);
    assert_eq!(code(&["train", "--config", s(&wild), "--dataset", s(&manifest), "--out", s(&d.join("wild"))]), 3);
}

#[test]
fn pipeline_improves_close_up_views() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base_cfg = write_config(
        d,
        r#"{"benchmark": {"width": 96, "height": 54, "n_train": 16, "n_val": 2, "n_test": 4},
            "init": {"resolution": [32, 16, 32]}, "batch_size": 1024}"#,
    );
    let bench = d.join("bench");
    let manifest = bench.join("manifest.json");
    ok(&["make-synthetic", "--config", s(&base_cfg), "--seed", "5", "--out", s(&bench)]);
    ok(&["train", "--config", s(&base_cfg), "--dataset", s(&manifest), "--iterations", "800", "--out", s(&d.join("base"))]);
    ok(&["eval", "--dataset", s(&manifest), "--checkpoint", s(&d.join("base/field.ckpt")), "--out", s(&d.join("ev0"))]);
    ok(&["finetune", "--config", s(&base_cfg), "--dataset", s(&manifest), "--checkpoint", s(&d.join("base/field.ckpt")), "--iterations", "400", "--out", s(&d.join("ft"))]);
    ok(&["eval", "--dataset", s(&manifest), "--checkpoint", s(&d.join("ft/field.ckpt")), "--out", s(&d.join("ev1"))]);
    let psnr = |p: PathBuf| -> f64 {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v["mean_psnr"].as_f64().unwrap()
    };
    let (before, after) = (psnr(d.join("ev0/eval_test.json")), psnr(d.join("ev1/eval_test.json")));
    assert!(after > before, "close-up PSNR {before:.2} -> {after:.2}");
}
