//! End-to-end checks of the command-line surface against a generated toy
//! dataset.

use std::path::Path;
use std::process::Command;

use coskel::eval::{f_measure_at_d, jaccard};
use coskel::io;
use coskel::synth::{two_category_collection, write_dataset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coskel"))
}

/// Small, fast configuration for the toy runs.
fn write_quick_config(path: &Path) {
    std::fs::write(
        path,
        "\
# toy-scale settings
mode = weakly_supervised
max_iterations = 1
k_clusters = 1
segmentation.gmm_components = 3
segmentation.graphcut_rounds = 2
flow.pyramid_levels = 2
flow.iterations_per_level = 2
flow.working_resolution = 40
",
    )
    .unwrap();
}

fn make_toy(dir: &Path, per_category: usize) {
    let collection = two_category_collection(per_category, 40, 21);
    write_dataset(dir, &collection, true).unwrap();
}

#[test]
fn run_produces_masks_skeletons_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 4); // 8 images across 2 categories
    let cfg = tmp.path().join("quick.cfg");
    write_quick_config(&cfg);
    let out = tmp.path().join("out");

    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let count = |sub: &str| {
        walkdir(&out.join(sub))
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .count()
    };
    assert_eq!(count("segmentations"), 8);
    assert_eq!(count("skeletons"), 8);
    assert_eq!(count("overlays"), 8);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let images = manifest["images"].as_array().unwrap();
    assert_eq!(images.len(), 8);
    // max_iterations = 1: exactly two recorded states per image (t = 0, 1).
    for img in images {
        assert_eq!(img["iterations"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn key_prior_run_records_alignment_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 3);
    let cfg = tmp.path().join("quick.cfg");
    write_quick_config(&cfg);
    let out = tmp.path().join("out");

    let status = bin()
        .args(["run", "--use-key-priors", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let alignment = manifest["alignment"].as_array().unwrap();
    assert_eq!(alignment.len(), 2); // one cluster per category
    for entry in alignment {
        let n = entry["size"].as_u64().unwrap();
        assert_eq!(entry["pairwise"].as_u64().unwrap(), n * (n - 1));
        assert_eq!(entry["key"].as_u64().unwrap(), 2 * (n - 1));
    }
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 3);
    let cfg = tmp.path().join("quick.cfg");
    write_quick_config(&cfg);

    let mut outputs = Vec::new();
    for name in ["out1", "out2"] {
        let out = tmp.path().join(name);
        let status = bin()
            .args(["run", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(out);
    }
    for sub in ["segmentations", "skeletons", "overlays"] {
        let a = walkdir(&outputs[0].join(sub));
        let b = walkdir(&outputs[1].join(sub));
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(
                std::fs::read(pa).unwrap(),
                std::fs::read(pb).unwrap(),
                "{} differs",
                pa.display()
            );
        }
    }
    // The manifest differs only in its recorded output paths.
    let strip = |root: &Path| {
        std::fs::read_to_string(root.join("manifest.json"))
            .unwrap()
            .replace(root.to_str().unwrap(), "")
    };
    assert_eq!(strip(&outputs[0]), strip(&outputs[1]));
}

#[test]
fn eval_perfect_predictions_score_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 2);

    // Ground-truth skeletons from the masks via the CLI.
    let status = bin()
        .args(["build-gt", "--masks"])
        .arg(data.join("masks"))
        .arg("--out")
        .arg(data.join("skeletons"))
        .status()
        .unwrap();
    assert!(status.success());

    // A "prediction" directory that mirrors the ground truth exactly.
    let pred = tmp.path().join("pred");
    for (from, to) in [
        ("skeletons", "skeletons"),
        ("masks", "segmentations"),
    ] {
        for path in walkdir(&data.join(from)) {
            let rel = path.strip_prefix(data.join(from)).unwrap();
            let target = pred.join(to).join(rel);
            std::fs::create_dir_all(target.parent().unwrap()).unwrap();
            std::fs::copy(&path, &target).unwrap();
        }
    }

    let report = tmp.path().join("report.csv");
    let status = bin()
        .args(["eval", "--pred"])
        .arg(&pred)
        .arg("--gt")
        .arg(&data)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());

    let text = std::fs::read_to_string(&report).unwrap();
    let mut data_rows = 0;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == "mean" || cells[0] == "variance" {
            continue;
        }
        data_rows += 1;
        for value in &cells[2..] {
            assert_eq!(*value, "1.0000", "line: {line}");
        }
    }
    assert_eq!(data_rows, 4);
}

#[test]
fn eval_matches_library_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 2);
    bin()
        .args(["build-gt", "--masks"])
        .arg(data.join("masks"))
        .arg("--out")
        .arg(data.join("skeletons"))
        .status()
        .unwrap();
    let cfg = tmp.path().join("quick.cfg");
    write_quick_config(&cfg);
    let out = tmp.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let report = tmp.path().join("report.csv");
    let status = bin()
        .args(["eval", "--pred"])
        .arg(&out)
        .arg("--gt")
        .arg(&data)
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());

    // Cross-check every CSV cell against direct library calls.
    let text = std::fs::read_to_string(&report).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0] == "mean" || cells[0] == "variance" {
            continue;
        }
        let (stem, category) = (cells[0], cells[1]);
        let pred_skel = io::load_mask(out.join("skeletons").join(category).join(format!("{stem}.png"))).unwrap();
        let gt_skel = io::load_mask(data.join("skeletons").join(category).join(format!("{stem}.png"))).unwrap();
        let pred_mask = io::load_mask(out.join("segmentations").join(category).join(format!("{stem}.png"))).unwrap();
        let gt_mask = io::load_mask(data.join("masks").join(category).join(format!("{stem}.png"))).unwrap();
        for d in 0..6usize {
            let expected = f_measure_at_d(&pred_skel, &gt_skel, d as f64).unwrap();
            assert_eq!(cells[2 + d], format!("{expected:.4}"), "{stem} f{d}");
        }
        let expected_j = jaccard(&pred_mask, &gt_mask).unwrap();
        assert_eq!(cells[9], format!("{expected_j:.4}"), "{stem} jaccard");
    }
}

#[test]
fn eval_empty_intersection_fails_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let pred = tmp.path().join("pred");
    let gt = tmp.path().join("gt");
    std::fs::create_dir_all(pred.join("skeletons")).unwrap();
    std::fs::create_dir_all(gt.join("skeletons")).unwrap();
    let status = bin()
        .args(["eval", "--pred"])
        .arg(&pred)
        .arg("--gt")
        .arg(&gt)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn overlay_renders_composites() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 2);
    bin()
        .args(["build-gt", "--masks"])
        .arg(data.join("masks"))
        .arg("--out")
        .arg(data.join("skeletons"))
        .status()
        .unwrap();
    let out = tmp.path().join("overlays");
    let status = bin()
        .args(["overlay", "--images"])
        .arg(data.join("images"))
        .arg("--masks")
        .arg(data.join("masks"))
        .arg("--skeletons")
        .arg(data.join("skeletons"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(walkdir(&out).len(), 4);
    // Overlay dimensions match the inputs.
    let img = io::load_raster(&walkdir(&out)[0]).unwrap();
    assert_eq!((img.width(), img.height()), (40, 40));
}

#[test]
fn flow_cache_fills_expected_pair_count() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    make_toy(&data, 3);
    let cfg = tmp.path().join("quick.cfg");
    write_quick_config(&cfg);
    let cache = tmp.path().join("cache");
    let status = bin()
        .args(["flow-cache", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--cache")
        .arg(&cache)
        .status()
        .unwrap();
    assert!(status.success());
    // Two clusters of 3: n(n-1) = 6 ordered pairs each.
    assert_eq!(walk_all(&cache).len(), 12);
}

#[test]
fn usage_errors_exit_one() {
    let status = bin().arg("run").arg("--definitely-not-a-flag").status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = bin().args(["run", "--data", "/nonexistent", "--out", "/tmp/x"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

fn walkdir(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = walk_all(dir);
    out.retain(|p| p.extension().is_some_and(|e| e == "png"));
    out
}

fn walk_all(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return out;
    };
    let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            out.extend(walk_all(&p));
        } else {
            out.push(p);
        }
    }
    out
}
