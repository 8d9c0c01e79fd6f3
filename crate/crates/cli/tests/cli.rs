use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn esdnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esdnet")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = esdnet(&["synth", "--n", "3", "--hw", "48x32", "--seed", "5", "--out", p(out)]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    let img = esdnet::io::load_png(&a.join("0000_moire.png")).unwrap();
    assert_eq!(img.shape(), &[1, 3, 32, 48]);
}

#[test]
fn fixed_degradation_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let r = esdnet(&[
        "synth", "--n", "2", "--hw", "16", "--out", p(&out),
        "--set", "moire.amplitude=0,0,0",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for pair in esdnet::io::read_dataset(&out).unwrap() {
        assert_eq!(pair.clean.data(), pair.moire.data());
    }
}

#[test]
fn train_eval_infer_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    let weights = dir.path().join("m.esdw");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, "model.width_divisor = 16\ntrain.epochs = 1\ntrain.patch = 32\nloss.perceptual_block = 1\n").unwrap();
    assert_eq!(code(&esdnet(&["synth", "--n", "2", "--hw", "32", "--out", p(&data)])), 0);
    let r = esdnet(&["train", "--data", p(&data), "--out-weights", p(&weights), "--config", p(&cfg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let log = fs::read_to_string(dir.path().join("m.esdw.loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("step,epoch,lr,loss,l1_term,perceptual_term"));

    let report = dir.path().join("eval.csv");
    let r = esdnet(&["eval", "--weights", p(&weights), "--data", p(&data), "--report", p(&report), "--config", p(&cfg)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4);

    let restored = dir.path().join("out.png");
    let input = data.join("0000_moire.png");
    let r = esdnet(&["infer", "--weights", p(&weights), "--in", p(&input), "--out", p(&restored), "--config", p(&cfg), "--tile", "64"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let out = esdnet::io::load_png(&restored).unwrap();
    assert_eq!(out.shape(), esdnet::io::load_png(&input).unwrap().shape());
}

#[test]
fn infer_keeps_odd_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("m.esdw");
    let model = esdnet::model::ModelParams::build(esdnet::model::ModelConfig::standard().reduced(16), 0).unwrap();
    esdnet::io::save_model(&weights, &model).unwrap();
    let input = dir.path().join("in.png");
    esdnet::io::save_png(&input, &esdnet::Tensor::full(&[1, 3, 37, 70], 0.5)).unwrap();
    let out = dir.path().join("out.png");
    let r = esdnet(&["infer", "--weights", p(&weights), "--in", p(&input), "--out", p(&out), "--set", "model.width_divisor=16", "--tile", "64"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(esdnet::io::load_png(&out).unwrap().shape(), &[1, 3, 37, 70]);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    // Usage.
    assert_eq!(code(&esdnet(&["synth"])), 1);
    assert_eq!(code(&esdnet(&["frobnicate"])), 1);
    assert_eq!(code(&esdnet(&["synth", "--out", p(dir.path()), "--hw", "abc"])), 1);
    assert_eq!(code(&esdnet(&["synth", "--out", p(dir.path()), "--set", "train.speed=3"])), 1);
    assert_eq!(code(&esdnet(&["--help"])), 0);
    // Data.
    let missing = dir.path().join("missing.esdw");
    let r = esdnet(&["eval", "--weights", p(&missing), "--data", p(dir.path()), "--report", p(&dir.path().join("r.csv"))]);
    assert_eq!(code(&r), 2);
    let corrupt = dir.path().join("bad.esdw");
    fs::write(&corrupt, b"ESDW garbage").unwrap();
    let r = esdnet(&["bench", "--weights", p(&corrupt), "--hw", "32", "--runs", "1", "--tile", "64", "--csv", p(&dir.path().join("b.csv"))]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("bad.esdw"));
    // Numeric.
    let data = dir.path().join("ds");
    assert_eq!(code(&esdnet(&["synth", "--n", "1", "--hw", "32", "--out", p(&data)])), 0);
    let r = esdnet(&[
        "train", "--data", p(&data), "--out-weights", p(&dir.path().join("m.esdw")),
        "--set", "model.width_divisor=16", "--set", "train.patch=32", "--set", "train.lr_max=1e30",
        "--set", "train.epochs=3", "--set", "loss.perceptual_block=1",
    ]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("diverged"));
}

#[test]
fn bench_writes_timing_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let r = esdnet(&[
        "bench", "--hw", "80x48", "--runs", "2", "--tile", "64", "--csv", p(&csv), "--set", "model.width_divisor=16",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let stats: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stats, ["stat", "width", "height", "tile", "overlap", "run_0_s", "run_1_s", "median_s", "p95_s", "fps"]);
    let fps: f64 = text.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(fps.is_finite() && fps > 0.0);
}
