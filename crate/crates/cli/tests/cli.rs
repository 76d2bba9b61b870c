use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn memprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memprobe"))
        .args(args)
        .current_dir(cwd)
        .env("MEMPROBE_THREADS", "2")
        .output()
        .expect("spawn memprobe")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen(dir: &Path, name: &str, classes: &str, per_class: &str, seed: &str) -> PathBuf {
    let out = memprobe(
        &[
            "gen-synth",
            "--out",
            name,
            "--name",
            name,
            "--classes",
            classes,
            "--dim",
            "16",
            "--per-class",
            per_class,
            "--per-class-test",
            "10",
            "--seed",
            seed,
        ],
        dir,
    );
    ok(&out);
    dir.join(name).join("manifest.json")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn strip_timing(mut v: Value) -> Value {
    for s in v["stages"].as_array_mut().unwrap() {
        s["insert_wall_time"] = Value::from(0.0);
        s["train_wall_time"] = Value::from(0.0);
    }
    v
}

#[test]
fn gen_synth_row_count_and_byte_identical_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-synth",
        "--classes",
        "20",
        "--dim",
        "64",
        "--per-class",
        "100",
        "--seed",
        "7",
    ];
    let mut first = args.to_vec();
    first.extend(["--out", "x"]);
    ok(&memprobe(&first, dir.path()));
    let mut second = args.to_vec();
    second.extend(["--out", "y"]);
    ok(&memprobe(&second, dir.path()));

    let labels = std::fs::read(dir.path().join("x/train.labels")).unwrap();
    assert_eq!(labels.len(), 2000 * 4);
    for f in [
        "manifest.json",
        "text.emb",
        "train.emb",
        "train.labels",
        "test.emb",
        "test.labels",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("x").join(f)).unwrap(),
            std::fs::read(dir.path().join("y").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn gen_synth_zero_classes_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = memprobe(&["gen-synth", "--classes", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
}

#[test]
fn task_run_report_structure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "a", "5", "20", "1");
    gen(p, "b", "5", "20", "2");
    gen(p, "c", "5", "0", "3");
    let args = [
        "run",
        "--scenario",
        "task",
        "--method",
        "treeprobe",
        "--fusion",
        "aim-emb",
        "--tasks",
        "a/manifest.json,b/manifest.json",
        "--zs",
        "c/manifest.json",
        "--seed",
        "1",
        "--out",
        "r.json",
    ];
    ok(&memprobe(&args, p));
    let r = read_json(&p.join("r.json"));
    assert_eq!(r["stages"].as_array().unwrap().len(), 2);
    let tal = &r["transfer_avg_last"];
    for key in ["transfer", "avg", "last"] {
        assert!(tal[key].is_f64(), "{key} missing");
    }
    assert_eq!(r["config"]["k"], 9);
    assert_eq!(r["config"]["psi"], 50000);
    assert_eq!(r["config"]["regularization_c"], 0.316);
    assert_eq!(r["config"]["max_iterations"], 5000);
    assert_eq!(r["config"]["tau"], 100.0);
    assert!(r.get("error").is_none());

    // identical reruns modulo timing
    let mut again = args.to_vec();
    *again.last_mut().unwrap() = "r2.json";
    ok(&memprobe(&again, p));
    let r2 = read_json(&p.join("r2.json"));
    assert_eq!(strip_timing(r), strip_timing(r2));
}

#[test]
fn zero_shot_stages_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "a", "6", "30", "4");
    gen(p, "z", "4", "0", "5");
    ok(&memprobe(
        &[
            "run",
            "--scenario",
            "data",
            "--method",
            "zs",
            "--tasks",
            "a/manifest.json",
            "--zs",
            "z/manifest.json",
            "--out",
            "r.json",
        ],
        p,
    ));
    let r = read_json(&p.join("r.json"));
    let stages = r["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 7);
    for s in stages {
        assert_eq!(s["target"], stages[0]["target"]);
        assert_eq!(s["zeroshot"], stages[0]["zeroshot"]);
    }
    assert!(r.get("transfer_avg_last").is_none());
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "a", "3", "5", "1");

    let missing = memprobe(
        &[
            "run",
            "--scenario",
            "task",
            "--method",
            "knn",
            "--tasks",
            "nope.json",
            "--out",
            "r.json",
        ],
        p,
    );
    assert_eq!(missing.status.code(), Some(3));
    assert!(!missing.stderr.is_empty());

    let bad_k = memprobe(
        &[
            "run",
            "--scenario",
            "task",
            "--method",
            "knn",
            "--tasks",
            "a/manifest.json",
            "--out",
            "r.json",
            "--k",
            "0",
        ],
        p,
    );
    assert_eq!(bad_k.status.code(), Some(2));

    let bad_method = memprobe(
        &[
            "run",
            "--scenario",
            "task",
            "--method",
            "forest",
            "--tasks",
            "a/manifest.json",
            "--out",
            "r.json",
        ],
        p,
    );
    assert_eq!(bad_method.status.code(), Some(2));

    std::fs::write(p.join("a/train.labels"), [0u8; 3]).unwrap();
    let corrupt = memprobe(
        &[
            "run",
            "--scenario",
            "task",
            "--method",
            "knn",
            "--tasks",
            "a/manifest.json",
            "--out",
            "r.json",
        ],
        p,
    );
    assert_eq!(corrupt.status.code(), Some(3));
}

#[test]
fn snapshot_and_flexible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "a", "4", "10", "1");
    gen(p, "b", "4", "10", "3");
    gen(p, "z", "4", "0", "2");
    ok(&memprobe(
        &[
            "run",
            "--scenario",
            "task",
            "--method",
            "linprobe",
            "--fusion",
            "aim-prob",
            "--tasks",
            "a/manifest.json,b/manifest.json",
            "--zs",
            "z/manifest.json",
            "--out",
            "r.json",
            "--flexible",
            "--snapshot",
            "m.json",
        ],
        p,
    ));
    let r = read_json(&p.join("r.json"));
    let protocols: Vec<&str> = r["flexible"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["protocol"].as_str().unwrap())
        .collect();
    assert_eq!(protocols, ["zero-shot", "union-zero-shot", "mix-zero-shot"]);
    let snap = read_json(&p.join("m.json"));
    assert_eq!(snap["format"], "memprobe-snapshot");
    assert_eq!(snap["model"]["method"], "linprobe");
}

#[test]
fn bench_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = memprobe(
        &[
            "bench",
            "--method",
            "treeprobe",
            "--psi",
            "1000",
            "--sizes",
            "5000,20000,50000",
        ],
        dir.path(),
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,psi,n,median_us,mean_us,trials");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("treeprobe,1000,50000,"));
    assert!(lines[3].ends_with(",25"));
}

#[test]
fn bench_linprobe_grows_with_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = memprobe(
        &["bench", "--method", "linprobe", "--sizes", "250,1000", "--out", "b.csv"],
        dir.path(),
    );
    ok(&out);
    let text = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let means: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 2);
    assert!(means[1] > means[0], "{means:?}");
}

#[test]
fn bench_requires_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = memprobe(&["bench", "--method", "knn"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    gen(p, "a", "4", "25", "1");
    gen(p, "b", "4", "25", "2");
    gen(p, "z", "4", "0", "3");
    let run = |out: &str| {
        ok(&memprobe(
            &[
                "run",
                "--scenario",
                "data",
                "--method",
                "knn",
                "--tasks",
                "a/manifest.json,b/manifest.json",
                "--zs",
                "z/manifest.json",
                "--seed",
                "3",
                "--out",
                out,
            ],
            p,
        ))
    };
    run("r1.json");
    run("r2.json");
    let export = |report: &str| {
        let out = memprobe(&["export", "--report", report, "--metrics", "accuracy,seen"], p);
        ok(&out);
        String::from_utf8(out.stdout).unwrap()
    };
    let csv = export("r1.json");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "stage,task,metric,value");
    assert_eq!(lines.len() - 1, 7 * 3 * 2);
    assert_eq!(csv, export("r2.json"));

    ok(&memprobe(&["export", "--report", "r1.json", "--out", "e.csv"], p));
    assert_eq!(
        std::fs::read_to_string(p.join("e.csv")).unwrap().lines().count(),
        1 + 7 * 3
    );
}

#[test]
fn export_rejects_empty_stages() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.json"), r#"{"config":{},"stages":[]}"#).unwrap();
    let out = memprobe(&["export", "--report", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed report"));
}
