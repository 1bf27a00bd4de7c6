use std::path::{Path, PathBuf};

use nearview::data::{load_manifest, save_manifest, DataError, Split};
use nearview::geometry::Vec3;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/minimal/manifest.json")
}

#[test]
fn minimal_manifest_loads_with_expected_contents() {
    let ds = load_manifest(&fixture()).unwrap();
    let k = ds.intrinsics();
    assert_eq!((k.fx, k.fy, k.cx, k.cy, k.width, k.height), (4.0, 4.0, 2.0, 1.5, 4, 3));
    assert_eq!(ds.manifest.scene, "minimal");
    assert_eq!(ds.manifest.background, Some([1.0; 3]));
    assert_eq!(ds.train_indices(), vec![0, 1]);
    assert_eq!(ds.indices(Split::Test), vec![2]);
    assert_eq!(ds.indices(Split::Val), Vec::<usize>::new());
    assert_eq!(ds.pose(0).center(), Vec3::new(0.0, 0.0, -4.0));
    assert_eq!(ds.pose(1).forward(), Vec3::new(-1.0, 0.0, 0.0));
    for f in 0..3u32 {
        let img = &ds.images[f as usize];
        for v in 0..3u32 {
            for u in 0..4u32 {
                let expected = [40 * u + 10 + f, 60 * v + f, 255 - 40 * u - 50 * v - f].map(|b| b as f64 / 255.0);
                assert_eq!(img.get(u, v), expected, "frame {f} pixel ({u}, {v})");
            }
        }
    }
}

#[test]
fn save_then_load_is_lossless() {
    let ds = load_manifest(&fixture()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy/manifest.json");
    save_manifest(&ds, &out).unwrap();
    assert_eq!(load_manifest(&out).unwrap(), ds);
    let original: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture()).unwrap()).unwrap();
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(original, written);
}

fn edited(edit: impl FnOnce(&mut serde_json::Value)) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_manifest(&fixture()).unwrap();
    let path = dir.path().join("manifest.json");
    save_manifest(&ds, &path).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut json);
    std::fs::write(&path, json.to_string()).unwrap();
    (dir, path)
}

#[test]
fn broken_manifests_name_the_problem() {
    let (_d, p) = edited(|j| j["version"] = 2.into());
    assert!(matches!(load_manifest(&p), Err(DataError::VersionMismatch { expected: 1, found: 2 })));

    let (_d, p) = edited(|j| j["frames"][1]["image"] = "images/nope.png".into());
    assert!(matches!(load_manifest(&p), Err(DataError::MissingFile(f)) if f.ends_with("images/nope.png")));

    let (_d, p) = edited(|j| j["intrinsics"]["width"] = 5.into());
    assert!(matches!(load_manifest(&p), Err(DataError::ResolutionMismatch { .. })));

    let (_d, p) = edited(|j| j["extra"] = true.into());
    assert!(matches!(load_manifest(&p), Err(DataError::Malformed { .. })));

    let (_d, p) = edited(|j| j["frames"][0]["pose"][0] = 2.0.into());
    assert!(matches!(load_manifest(&p), Err(DataError::Malformed { .. })));

    let (_d, p) = edited(|j| j["frames"][1]["split"] = "test".into());
    assert!(matches!(load_manifest(&p), Err(DataError::TooFewTrainFrames(1))));

    assert!(matches!(load_manifest(Path::new("/nonexistent/manifest.json")), Err(DataError::MissingFile(_))));
}
