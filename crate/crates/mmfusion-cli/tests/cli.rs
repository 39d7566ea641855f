//! End-to-end tests of the command-line interface, run against the built
//! binary on small synthetic datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmfusion")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("MMFUSION_OUT", std::env::temp_dir())
        .output()
        .expect("binary runs")
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mmfusion-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn dir_checksums(dir: &Path) -> BTreeMap<String, String> {
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    serde_json::from_value(manifest["files"].clone()).unwrap()
}

/// Tiny-model overrides so training-based commands finish in seconds.
const TINY: &[&str] = &[
    "--set",
    "model.hidden_d=16",
    "--set",
    "model.heads=2",
    "--set",
    "model.mlp_d=32",
    "--set",
    "model.layers=1",
    "--set",
    "model.aux_layers=1",
    "--set",
    "model.image_h=8",
    "--set",
    "model.image_w=8",
    "--set",
    "train.max_length=10",
];

fn gen_tiny_dataset(tag: &str) -> PathBuf {
    let data = tmp(tag);
    let out = run(&[
        "gen-data",
        "--task",
        "sentiment",
        "--n-train",
        "24",
        "--n-val",
        "9",
        "--n-test",
        "9",
        "--seed",
        "5",
        "--image-h",
        "8",
        "--image-w",
        "8",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

#[test]
fn gen_data_is_idempotent_and_missing_flag_fails() {
    let d1 = tmp("gen1");
    let d2 = tmp("gen2");
    for d in [&d1, &d2] {
        let out = run(&[
            "gen-data",
            "--task",
            "emotion",
            "--n-train",
            "12",
            "--n-val",
            "6",
            "--n-test",
            "6",
            "--seed",
            "9",
            "--image-h",
            "8",
            "--image-w",
            "8",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("manifest"), "{stdout}");
    }
    assert_eq!(dir_checksums(&d1), dir_checksums(&d2));

    // clap usage errors exit with code 2
    let out = run(&["gen-data", "--n-train", "10"]);
    assert_eq!(out.status.code(), Some(2));

    // unknown task is a config error (exit 3)
    let out = run(&["gen-data", "--task", "mood", "--out", d1.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    fs::remove_dir_all(&d1).unwrap();
    fs::remove_dir_all(&d2).unwrap();
}

#[test]
fn train_eval_round_trip() {
    let data = gen_tiny_dataset("trainflow");
    let before = dir_checksums(&data);
    let out_dir = tmp("trainout");

    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "sentiment",
        "--epochs",
        "2",
        "--seed",
        "3",
        "--fusion",
        "late",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("checkpoint.bin").is_file());
    assert!(out_dir.join("test_report.json").is_file());
    let epochs = fs::read_to_string(out_dir.join("epochs.jsonl")).unwrap();
    assert_eq!(epochs.lines().count(), 2);

    // the override is reflected in the manifest's resolved config
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["resolved_config"]["fusion"], "late");
    assert_eq!(manifest["status"], "ok");

    // the input dataset was not mutated
    assert_eq!(before, dir_checksums(&data));

    // eval reproduces the training-time test report
    let eval_dir = tmp("evalout");
    let out = run(&[
        "eval",
        "--checkpoint",
        out_dir.join("checkpoint.bin").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "test",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("macro F1"), "{stdout}");
    let train_report = fs::read_to_string(out_dir.join("test_report.json")).unwrap();
    let eval_report = fs::read_to_string(eval_dir.join("report.json")).unwrap();
    assert_eq!(train_report, eval_report);

    for d in [&data, &out_dir, &eval_dir] {
        fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn binary_desire_task_uses_binarized_labels() {
    let data = tmp("bindata");
    let out = run(&[
        "gen-data",
        "--task",
        "binary_desire",
        "--n-train",
        "16",
        "--n-val",
        "8",
        "--n-test",
        "8",
        "--seed",
        "2",
        "--image-h",
        "8",
        "--image-w",
        "8",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out_dir = tmp("binout");
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "binary-desire",
        "--epochs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("test_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["k"], 2);
    assert_eq!(report["per_class"][0]["label"], "desire");
    assert_eq!(report["per_class"][1]["label"], "not-desire");
    fs::remove_dir_all(&data).unwrap();
    fs::remove_dir_all(&out_dir).unwrap();
}

#[test]
fn ablate_emits_twelve_cells_and_sweep_respects_budget() {
    let data = gen_tiny_dataset("gridflow");
    let ab_dir = tmp("about");
    let mut args = vec![
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "sentiment",
        "--epochs",
        "1",
        "--seed",
        "4",
        "--out",
        ab_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ab_dir.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 12);

    let sw_dir = tmp("swout");
    let mut args = vec![
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--task",
        "sentiment",
        "--budget",
        "2",
        "--seed",
        "4",
        "--set",
        "train.epochs=1",
        "--out",
        sw_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sw_dir.join("sweep.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    // ranked: first row's f1 >= second's
    assert!(
        rows[0]["val_macro_f1"].as_f64().unwrap() >= rows[1]["val_macro_f1"].as_f64().unwrap()
    );

    for d in [&data, &ab_dir, &sw_dir] {
        fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn gradcheck_command_passes() {
    let out = run(&["gradcheck", "--samples", "10", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
}

#[test]
fn import_msed_round_trip() {
    let base = tmp("import");
    let images = base.join("imgs");
    fs::create_dir_all(&images).unwrap();
    // two tiny PGM images
    for (name, level) in [("a", 40u8), ("b", 200u8)] {
        let mut bytes = b"P5\n8 8\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(level, 64));
        fs::write(images.join(format!("{name}.pgm")), bytes).unwrap();
    }
    let csv = "title,caption,image,sentiment,emotion,desire\n\
               sunny day,on the pier,a.jpg,positive,happiness,curiosity\n\
               grey walls,empty room,b.jpg,negative,sad,none\n";
    for split in ["train", "val", "test"] {
        fs::write(base.join(format!("{split}.csv")), csv).unwrap();
    }
    let out_dir = base.join("native");
    let out = run(&[
        "import-msed",
        "--train-csv",
        base.join("train.csv").to_str().unwrap(),
        "--val-csv",
        base.join("val.csv").to_str().unwrap(),
        "--test-csv",
        base.join("test.csv").to_str().unwrap(),
        "--images-dir",
        images.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train.jsonl", "val.jsonl", "test.jsonl"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    assert!(out_dir.join("images/a.pgm").is_file());

    // a missing image is a data-format error (exit 4)
    fs::write(base.join("bad.csv"), "title,caption,image\nx,y,missing.jpg\n").unwrap();
    let out = run(&[
        "import-msed",
        "--train-csv",
        base.join("bad.csv").to_str().unwrap(),
        "--val-csv",
        base.join("val.csv").to_str().unwrap(),
        "--test-csv",
        base.join("test.csv").to_str().unwrap(),
        "--images-dir",
        images.to_str().unwrap(),
        "--out",
        base.join("native2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    fs::remove_dir_all(&base).unwrap();
}
