use std::path::Path;
use std::process::{Command, Output};

fn puregaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_puregaze"))
        .args(args)
        .env_remove("PUREGAZE_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = puregaze(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--backbone",
    "toy",
    "--resolution",
    "16",
    "--sa-widths",
    "8,4",
    "--batch-size",
    "4",
    "--steps",
    "6",
    "--lr",
    "1e-3",
];

fn gen(dir: &Path, domain: &str, count: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(domain);
    ok(&[
        "gen-data",
        "--domain",
        domain,
        "--sample-count",
        count,
        "--seed",
        seed,
        "--resolution",
        "16",
        "--out",
        p(&out),
    ]);
    out.join("manifest.jsonl")
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--manifest", p(manifest), "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args)
}

fn checksum(summary: &str) -> &str {
    summary
        .split("backbone checksum ")
        .nth(1)
        .and_then(|s| s.split(',').next())
        .expect("checksum in summary")
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let out = puregaze(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(puregaze(&["--help"]).status.success());
}

#[test]
fn module_error_exits_with_one() {
    let out = puregaze(&["eval", "--checkpoint", "/nonexistent.safetensors", "--manifest", "/nonexistent.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_eval_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen(dir.path(), "source", "16", "1");
    let target = gen(dir.path(), "target", "12", "2");
    train(&source, &dir.path().join("run"), &[]);
    let ckpt = dir.path().join("run/checkpoint.safetensors");
    assert!(dir.path().join("run/train_log.jsonl").exists());
    let eval_dir = dir.path().join("eval");
    let summary = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&target), "--out", p(&eval_dir)]);
    assert!(summary.contains("over 12 samples"), "{summary}");
    let rows = std::fs::read_to_string(eval_dir.join("eval.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 12);

    let tuned = dir.path().join("ft");
    ok(&[
        "finetune",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&target),
        "--steps",
        "2",
        "--out",
        p(&tuned),
    ]);
    assert!(tuned.join("checkpoint.safetensors").exists());
}

#[test]
fn alpha_zero_matches_baseline_flag() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen(dir.path(), "source", "16", "3");
    let zero = train(&source, &dir.path().join("zero"), &["--alpha", "0"]);
    let base = train(&source, &dir.path().join("base"), &["--baseline"]);
    assert_eq!(checksum(&zero), checksum(&base));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen(dir.path(), "source", "16", "4");
    let again = dir.path().join("again");
    ok(&[
        "gen-data",
        "--domain",
        "source",
        "--sample-count",
        "16",
        "--seed",
        "4",
        "--resolution",
        "16",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        std::fs::read(&source).unwrap(),
        std::fs::read(again.join("manifest.jsonl")).unwrap()
    );
    train(&source, &dir.path().join("a"), &[]);
    train(&source, &dir.path().join("b"), &[]);
    for file in ["checkpoint.safetensors", "train_log.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(file)).unwrap(),
            std::fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen(dir.path(), "source", "16", "5");
    let target = gen(dir.path(), "target", "12", "6");
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--param",
        "k",
        "--values",
        "0,0.25,0.5,0.75",
        "--source",
        p(&source),
        "--target",
        p(&target),
        "--out",
        p(&out),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let rows = std::fs::read_to_string(out.join("sweep.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 4);
    assert!(out.join("sweep_plot.dat").exists());
}

#[test]
fn buckets_and_visualize_run() {
    let dir = tempfile::tempdir().unwrap();
    let source = gen(dir.path(), "source", "16", "7");
    let target = gen(dir.path(), "target", "40", "8");
    train(&source, &dir.path().join("pure"), &[]);
    train(&source, &dir.path().join("base"), &["--baseline"]);
    let pure = dir.path().join("pure/checkpoint.safetensors");
    let base = dir.path().join("base/checkpoint.safetensors");
    let buckets = dir.path().join("buckets");
    ok(&[
        "buckets",
        "--checkpoint-a",
        p(&base),
        "--checkpoint-b",
        p(&pure),
        "--manifest",
        p(&target),
        "--out",
        p(&buckets),
    ]);
    assert!(buckets.join("buckets.txt").exists());
    let vis = dir.path().join("vis");
    ok(&[
        "visualize",
        "--purified",
        p(&pure),
        "--baseline",
        p(&base),
        "--manifest",
        p(&source),
        "--probe-steps",
        "3",
        "--out",
        p(&vis),
    ]);
    assert!(vis.join("purification_grid.png").exists());
    assert!(vis.join("leakage.json").exists());
}
