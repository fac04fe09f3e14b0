use std::fs;
use std::path::Path;
use std::process::Command;

use hopkins_cli::data::{parse_idx, read_csv};
use hopkins_cli::main_with;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let argv = std::iter::once("hopkins-loss").chain(args.iter().copied());
    let code = main_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn idx_images(n: u32, rows: u32, cols: u32, pixel: impl Fn(u32) -> u8) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        b.extend(v.to_be_bytes());
    }
    b.extend((0..n * rows * cols).map(pixel));
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend(labels);
    b
}

#[test]
fn gen_writes_requested_shape_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let (code, out) = run(&["gen", "--kind", "clusters", "--n", "120", "--d", "3", "--seed", "4", "--out", p(path)]);
        assert_eq!(code, 0);
        assert!(out.contains("wrote 120 rows x 3 features"), "{out}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let file = read_csv(&a).unwrap();
    assert_eq!(file.features.shape(), (120, 3));
    assert_eq!(file.labels.as_ref().unwrap().len(), 120);

    let (code, _) = run(&["gen", "--kind", "grid", "--n", "64", "--d", "2", "--out", p(&a)]);
    assert_eq!(code, 0);
    let grid = read_csv(&a).unwrap();
    assert_eq!(grid.features.shape(), (64, 2));
    assert!(grid.labels.is_none());
}

#[test]
fn hopkins_reports_trials_and_degenerate_input() {
    let dir = tempfile::tempdir().unwrap();
    let same = dir.path().join("same.csv");
    let mut text = String::from("x0,x1\n");
    for _ in 0..40 {
        text.push_str("0.3,0.7\n");
    }
    fs::write(&same, text).unwrap();
    let (code, out) = run(&["hopkins", p(&same)]);
    assert_eq!(code, 0);
    assert_eq!(out, "trial,hopkins\n0,0.5\n");

    let data = dir.path().join("u.csv");
    run(&["gen", "--kind", "uniform", "--n", "500", "--d", "2", "--out", p(&data)]);
    let (code, out) = run(&["hopkins", p(&data), "--trials", "5", "--seed", "3"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 2);
    assert!(lines[6].starts_with("mean,") && lines[7].starts_with("ci95,"));
    let (_, again) = run(&["hopkins", p(&data), "--trials", "5", "--seed", "3"]);
    assert_eq!(out, again);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["hopkins"]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["hopkins", p(&dir.path().join("missing.csv"))]).0, 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x0,x1\n1.0,abc\n").unwrap();
    assert_eq!(run(&["hopkins", p(&bad)]).0, 2);

    let ok = dir.path().join("ok.csv");
    fs::write(&ok, "x0\n1\n2\n3\n").unwrap();
    assert_eq!(run(&["hopkins", p(&ok), "--k", "1.5"]).0, 1);
    assert_eq!(run(&["hopkins", p(&ok), "--trials", "0"]).0, 1);

    // the real binary reports the same codes
    let bin = env!("CARGO_BIN_EXE_hopkins-loss");
    let status = Command::new(bin).arg("hopkins").arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Command::new(bin).arg("--bogus").output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn training_grid_matches_manifest_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let (code, _) = run(&[
        "train-classify", "--synth", "--synth-n", "300", "--synth-d", "8",
        "--targets", "0.01,0.99", "--repeats", "2", "--max-epochs", "3",
        "--out", p(&out_dir),
    ]);
    assert_eq!(code, 0);
    let runs = fs::read_to_string(out_dir.join("runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 3 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let listed = manifest["runs"].as_array().map(|r| r.len());
    assert_eq!(listed, Some(6), "{manifest}");
    for line in runs.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["run_id"].as_str().unwrap();
        assert!(out_dir.join("logs").join(format!("{id}.jsonl")).exists());
        assert!(out_dir.join("snapshots").join(format!("{id}.bin")).exists());
    }

    let (code, summary) = run(&["report", p(&out_dir)]);
    assert_eq!(code, 0);
    let header = summary.lines().next().unwrap();
    assert!(header.ends_with(",u,p_value,stars,direction"), "{header}");
    assert_eq!(summary.lines().count(), 4);
    assert!(out_dir.join("quantiles.csv").exists());
}

#[test]
fn report_without_comparisons_and_with_missing_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("base");
    let (code, _) = run(&[
        "train-classify", "--synth", "--synth-n", "200", "--synth-d", "8",
        "--baseline-only", "--repeats", "2", "--max-epochs", "2", "--out", p(&out_dir),
    ]);
    assert_eq!(code, 0);
    let (code, summary) = run(&["report", p(&out_dir)]);
    assert_eq!(code, 0);
    assert!(!summary.contains("p_value"));
    assert_eq!(summary.lines().count(), 2);

    let lone = dir.path().join("lone");
    fs::create_dir_all(&lone).unwrap();
    let kept: Vec<String> = fs::read_to_string(
        dir.path().join("base").join("runs.jsonl"),
    )
    .unwrap()
    .lines()
    .map(|l| l.replace("\"condition\":\"baseline\"", "\"condition\":\"ht=0.5\"").replace("\"target\":null", "\"target\":0.5"))
    .collect();
    fs::write(lone.join("runs.jsonl"), kept.join("\n") + "\n").unwrap();
    let mut err = Vec::new();
    let code = main_with(["hopkins-loss", "report", p(&lone)], &mut err);
    assert_eq!(code, 2);
}

#[test]
fn bench_with_zero_epochs_prints_header_only() {
    let (code, out) = run(&["bench-epoch", "--synth", "--synth-n", "200", "--synth-d", "8", "--epochs", "0"]);
    assert_eq!(code, 0);
    assert_eq!(out, "condition,weight,epochs,mean_ms,sd_ms,overhead_percent\n");
}

#[test]
fn idx_fixture_round_trip() {
    let images = idx_images(3, 2, 2, |i| (i * 20) as u8);
    let labels = idx_labels(&[1, 0, 1]);
    let file = parse_idx(&images, &labels).unwrap();
    assert_eq!(file.features.shape(), (3, 4));
    assert_eq!(file.labels.as_deref(), Some(&[1usize, 0, 1][..]));
    assert_eq!(file.features.get(0, 0), -1.0);
    assert!((file.features.get(2, 3) - (220.0 / 127.5 - 1.0)).abs() < 1e-15);

    let mut truncated = images.clone();
    truncated.pop();
    assert!(parse_idx(&truncated, &labels).is_err());
    assert!(parse_idx(&images, &idx_labels(&[1, 0])).is_err());
    let mut wrong_magic = images.clone();
    wrong_magic[3] = 1;
    assert!(parse_idx(&wrong_magic, &labels).is_err());
}

#[test]
fn idx_training_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let n = 60u32;
    let label_of = |i: u32| (i % 2) as u8;
    let pix = |k: u32| {
        let row = k / 16;
        if label_of(row) == 1 { 200 + (k % 7) as u8 } else { 20 + (k % 5) as u8 }
    };
    let files = [
        ("train-images", idx_images(n, 4, 4, pix)),
        ("train-labels", idx_labels(&(0..n).map(label_of).collect::<Vec<_>>())),
        ("test-images", idx_images(20, 4, 4, pix)),
        ("test-labels", idx_labels(&(0..20).map(label_of).collect::<Vec<_>>())),
    ];
    for (name, bytes) in &files {
        fs::write(dir.path().join(name), bytes).unwrap();
    }
    let f = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let out_dir = dir.path().join("runs");
    let (code, _) = run(&[
        "train-classify",
        "--idx-train-images", &f("train-images"),
        "--idx-train-labels", &f("train-labels"),
        "--idx-test-images", &f("test-images"),
        "--idx-test-labels", &f("test-labels"),
        "--idx-validation", "20",
        "--baseline-only", "--max-epochs", "2", "--out", p(&out_dir),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(out_dir.join("runs.jsonl")).unwrap().lines().count(), 1);

    let (code, _) = run(&[
        "train-classify",
        "--idx-train-images", &f("train-images"),
        "--idx-train-labels", &f("test-labels"),
        "--idx-test-images", &f("test-images"),
        "--idx-test-labels", &f("test-labels"),
        "--baseline-only", "--out", p(&out_dir),
    ]);
    assert_eq!(code, 2);
}
