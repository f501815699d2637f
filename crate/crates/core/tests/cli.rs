use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sadl::data::{load_matrix, load_labels, save_labels, save_matrix};
use sadl::Mat;

fn sadl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sadl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sadl(args);
    assert!(
        out.status.success(),
        "sadl {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Synth {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Synth {
    fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = s(&root.join("data"));
        let mut args = vec!["synth", "--out-dir", &data, "--per-class", "30"];
        args.extend_from_slice(extra);
        ok(&args);
        Synth { _dir: dir, root }
    }

    fn data(&self, f: &str) -> String {
        s(&self.root.join("data").join(f))
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn train_args(&self) -> Vec<String> {
        [
            "--x", &self.data("train_x.bin"), "--labels", &self.data("train_labels.txt"),
            "--test-x", &self.data("test_x.bin"), "--test-labels", &self.data("test_labels.txt"),
            "--atoms", "20", "--iters", "60",
        ]
        .map(String::from)
        .to_vec()
    }
}

fn with<'a>(cmd: &'a str, base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(base.iter().map(String::as_str));
    v.extend_from_slice(extra);
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_six_files_and_records_noise() {
    let d = Synth::new(&["--noise", "0"]);
    let mut names: Vec<String> = std::fs::read_dir(d.root.join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["h_spec.txt", "manifest.json", "test_labels.txt", "test_x.bin", "train_labels.txt", "train_x.bin"]
    );
    let manifest = json(&d.root.join("data/manifest.json"));
    assert_eq!(manifest["noiseless"], true);
    assert_eq!(manifest["params"]["noise_sigma"], 0.0);
    assert_eq!(manifest["params"]["seed"], 42);
    assert_eq!(load_labels(Path::new(&d.data("train_labels.txt"))).unwrap().len(), 45);
}

#[test]
fn train_writes_model_and_nonincreasing_trace() {
    let d = Synth::new(&[]);
    let out = d.out("m");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&out), "--lambda1", "0.001"]));
    for f in ["omega.bin", "q.bin", "w.bin", "model.json", "trace.csv", "config.txt", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let omega = load_matrix(&out.join("omega.bin")).unwrap();
    assert_eq!(omega.shape(), (20, 60));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "iter,lagrangian,res_h,res_y,dualgap1,dualgap2,max_delta");
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 60);
    for w in values.windows(2) {
        assert!(w[1] <= w[0] + 1e-8);
    }
    assert!(json(&out.join("summary.json"))["test_accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn save_state_writes_all_variables() {
    let d = Synth::new(&[]);
    let out = d.out("m");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&out), "--save-state", "--iters", "3"]));
    for f in ["u.bin", "eps1.bin", "eps2.bin", "z1.bin", "z2.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn zero_budget_leaves_initialization() {
    let d = Synth::new(&[]);
    let out = d.out("z");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&out), "--iters", "0"]));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    let dims = sadl::Dims { m: 60, n: 45, r: 20, s: 45, c: 3 };
    let init = sadl::ModelState::init(dims, 42);
    assert_eq!(load_matrix(&out.join("omega.bin")).unwrap(), init.omega);
    assert_eq!(load_matrix(&out.join("q.bin")).unwrap(), init.q);
    assert_eq!(load_matrix(&out.join("w.bin")).unwrap(), init.w);
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let d = Synth::new(&[]);
    let missing = s(&d.root.join("absent.bin"));
    let out = sadl(&["train", "--x", &missing, "--labels", &d.data("train_labels.txt")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error kind=Io code=2"), "{err}");
    assert!(err.contains("absent.bin"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(sadl(&["train"]).status.code(), Some(2));
    assert_eq!(sadl(&["train", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(sadl(&["train", "--eta", "1,2"]).status.code(), Some(2));
    assert_eq!(sadl(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sadl(&["train", "--lambda1", "-1", "--print-config"]).status.code(), Some(0));
}

#[test]
fn too_many_clusters_exits_2() {
    let d = Synth::new(&[]);
    let base = d.train_args();
    let out = sadl(&with("train-dist", &base, &["--clusters", "1000", "--out-dir", &s(&d.out("x"))]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=TooManyClusters"));
}

#[test]
fn singular_system_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.bin");
    let l = dir.path().join("l.txt");
    // more features than samples with no ridge on the dictionary
    save_matrix(&x, &Mat::from_fn(8, 4, |i, j| ((i * 3 + j * 5) % 7) as f64)).unwrap();
    save_labels(&l, &[0, 0, 1, 1]).unwrap();
    let out = sadl(&[
        "train", "--x", &s(&x), "--labels", &s(&l), "--lambda2", "0", "--out-dir", &s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=SingularSystem"));
}

#[test]
fn flag_beats_config_beats_preset() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "lambda2 = 0.25\niters = 12\n").unwrap();
    let out = ok(&["train", "--preset", "yaleb", "--config", &s(&conf), "--iters", "7", "--print-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("atoms = 1216\n"));
    assert!(text.contains("lambda2 = 0.25\n"));
    assert!(text.contains("iters = 7\n"));

    let json_conf = dir.path().join("run.json");
    std::fs::write(&json_conf, "{\"lambda1\": 0.02}").unwrap();
    let out = ok(&["train", "--config", &s(&json_conf), "--print-config"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("lambda1 = 0.02\n"));

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "lambda9 = 1\n").unwrap();
    assert_eq!(sadl(&["train", "--config", &s(&bad)]).status.code(), Some(2));
}

#[test]
fn printed_config_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(&["train-dist", "--preset", "caltech256-dist", "--seed", "9", "--print-config"]).stdout;
    let conf = dir.path().join("dump.conf");
    std::fs::write(&conf, &first).unwrap();
    let second = ok(&["train-dist", "--config", &s(&conf), "--print-config"]).stdout;
    assert_eq!(first, second);
}

#[test]
fn eval_and_predict_on_trained_model() {
    let d = Synth::new(&["--noise", "0"]);
    let model = d.out("m");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&model), "--iters", "200"]));
    let ev = d.out("e");
    ok(&[
        "eval", "--model-in", &s(&model), "--test-x", &d.data("test_x.bin"),
        "--test-labels", &d.data("test_labels.txt"), "--out-dir", &s(&ev),
    ]);
    let metrics = json(&ev.join("metrics.json"));
    assert_eq!(metrics["accuracy"], 1.0);
    assert!(metrics["seconds_per_sample"].as_f64().unwrap() > 0.0);
    let confusion = std::fs::read_to_string(ev.join("confusion.csv")).unwrap();
    assert_eq!(confusion, "15,0,0\n0,15,0\n0,0,15\n");

    let pr = d.out("p");
    ok(&["predict", "--model-in", &s(&model), "--x", &d.data("test_x.bin"), "--out-dir", &s(&pr)]);
    let predicted = load_labels(&pr.join("predictions.txt")).unwrap();
    assert_eq!(predicted, load_labels(Path::new(&d.data("test_labels.txt"))).unwrap());
    assert_eq!(load_matrix(&pr.join("scores.csv")).unwrap().shape(), (3, 45));
}

#[test]
fn eval_rejects_mismatched_features() {
    let d = Synth::new(&[]);
    let model = d.out("m");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&model), "--iters", "2"]));
    let other = d.out("other.csv");
    save_matrix(&other, &Mat::zeros(59, 45)).unwrap();
    let out = sadl(&[
        "eval", "--model-in", &s(&model), "--test-x", &s(&other),
        "--test-labels", &d.data("test_labels.txt"), "--out-dir", &s(&d.out("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kind=DimensionMismatch"));
}

#[test]
fn preprocessing_is_replayed_at_prediction() {
    let d = Synth::new(&[]);
    let model = d.out("m");
    let base = d.train_args();
    ok(&with("train", &base, &["--out-dir", &s(&model), "--projection-dim", "30", "--normalize"]));
    assert_eq!(load_matrix(&model.join("omega.bin")).unwrap().ncols(), 30);
    let ev = d.out("e");
    ok(&[
        "eval", "--model-in", &s(&model), "--test-x", &d.data("test_x.bin"),
        "--test-labels", &d.data("test_labels.txt"), "--out-dir", &s(&ev),
    ]);
    assert!(json(&ev.join("metrics.json"))["accuracy"].as_f64().unwrap() > 0.9);
}

#[test]
fn train_dist_writes_worker_traces() {
    let d = Synth::new(&[]);
    let out = d.out("dd");
    let base = d.train_args();
    ok(&with("train-dist", &base, &["--clusters", "3", "--out-dir", &s(&out)]));
    for t in 0..3 {
        let trace = std::fs::read_to_string(out.join(format!("trace_worker_{t}.csv"))).unwrap();
        assert!(trace.starts_with("iter,lagrangian,res_h,res_y,dualgap1,dualgap2,max_delta,consensus_gap\n"));
        assert_eq!(trace.lines().count(), 61);
    }
    let rounds = std::fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().count(), 61);
    let omega = load_matrix(&out.join("omega.bin")).unwrap();
    for row in omega.row_iter() {
        assert!((row.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ablate_prints_three_rows() {
    let d = Synth::new(&[]);
    let out = d.out("ab");
    let base = d.train_args();
    let res = ok(&with("ablate", &base, &["--out-dir", &s(&out)]));
    let table = String::from_utf8(res.stdout).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "variant,accuracy");
    assert!(rows[1].starts_with("H-only,"));
    assert!(rows[2].starts_with("W-only,"));
    assert!(rows[3].starts_with("full,"));
    assert_eq!(std::fs::read_to_string(out.join("ablation.csv")).unwrap(), table);
}

#[test]
fn trace_exports_every_diagnostic() {
    let d = Synth::new(&[]);
    let out = d.out("t");
    let base = d.train_args();
    ok(&with("trace", &base, &["--out-dir", &s(&out), "--iters", "5"]));
    let text = std::fs::read_to_string(out.join("trace_full.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 18);
    assert!(header.contains("d_omega") && header.contains("eta_w"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn grid_search_writes_cv_table() {
    let d = Synth::new(&[]);
    let out = d.out("g");
    let base = d.train_args();
    ok(&with(
        "train",
        &base,
        &["--out-dir", &s(&out), "--iters", "20", "--grid", "lambda1=0.001,0.01;atoms=10,20", "--cv-folds", "3"],
    ));
    let cv = std::fs::read_to_string(out.join("cv.csv")).unwrap();
    let lines: Vec<&str> = cv.lines().collect();
    assert_eq!(lines[0], "lambda1,atoms,mean_accuracy");
    assert_eq!(lines.len(), 5);
    let chosen = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(chosen.contains("lambda1 = "));
}
