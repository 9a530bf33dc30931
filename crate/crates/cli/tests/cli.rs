use std::path::Path;
use std::process::{Command, Output};

use polypseg::data::{image_to_rgb8, load_image, load_mask};
use polypseg::metrics::PairedReport;
use polypseg::model::{Model, ModelConfig};
use polypseg::postprocess::threshold;
use polypseg::train::{load_checkpoint, predict_any_size};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polypseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: &str, seed: &str) {
    ok(&["synth", "--out", p(dir), "--count", count, "--size", "64x64", "--seed", seed]);
}

/// A briefly trained toy checkpoint on four synthetic scenes.
fn quick_model(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    synth(&data, "4", "2");
    let ck = root.join("m.ckpt");
    ok(&["train", "--data", p(&data), "--out", p(&ck), "--epochs", "2", "--batch-size", "2", "--lr", "1e-2"]);
    (data, ck)
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "3", "4");
    synth(&b, "3", "4");
    for sub in ["images", "masks"] {
        for i in 0..3 {
            let name = format!("{sub}/synth_{i:04}.png");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    let img = load_image(&a.join("images/synth_0000.png")).unwrap();
    assert_eq!((img.shape().h, img.shape().w), (64, 64));
    assert_eq!(load_mask(&a.join("masks/synth_0000.png")).unwrap().dims(), (64, 64));
}

#[test]
fn zero_epochs_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2", "1");
    let ck = dir.path().join("init.ckpt");
    let out = ok(&["train", "--data", p(&data), "--out", p(&ck), "--epochs", "0", "--seed", "5"]);
    assert!(out.contains("no epochs run"), "{out}");
    let (model, _, optim) = load_checkpoint(&ck).unwrap();
    assert!(optim.is_none());
    assert!(model.params().bits_eq(Model::new(ModelConfig::toy(), 5).unwrap().params()));
}

#[test]
fn history_starts_at_initial_lr_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2", "1");
    let mut texts = Vec::new();
    for i in 0..2 {
        let ck = dir.path().join(format!("{i}.ckpt"));
        let hist = dir.path().join(format!("{i}.hist"));
        ok(&[
            "train", "--data", p(&data), "--out", p(&ck), "--history", p(&hist), "--epochs", "3", "--lr", "3e-2",
            "--batch-size", "2",
        ]);
        texts.push(std::fs::read_to_string(&hist).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let lines: Vec<&str> = texts[0].lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch=0 lr=3e-2 "), "{}", lines[0]);
}

#[test]
fn no_postprocess_writes_raw_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = quick_model(dir.path());
    let img = data.join("images/synth_0001.png");
    let out = dir.path().join("raw");
    ok(&["infer", "--ckpt", p(&ck), "--image", p(&img), "--out", p(&out), "--no-postprocess"]);
    let (model, stats, _) = load_checkpoint(&ck).unwrap();
    let prob = predict_any_size(&model, &stats, &load_image(&img).unwrap()).unwrap();
    assert_eq!(load_mask(&out.join("synth_0001_mask.png")).unwrap(), threshold(&prob, 0.5).unwrap());
    assert!(out.join("synth_0001_boxes.txt").exists());
}

#[test]
fn empty_prediction_overlay_shows_input() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = quick_model(dir.path());
    let img = data.join("images/synth_0000.png");
    let out = dir.path().join("inf");
    let stdout = ok(&["infer", "--ckpt", p(&ck), "--image", p(&img), "--out", p(&out), "--threshold", "1"]);
    assert!(stdout.contains("boxes=0"), "{stdout}");
    assert_eq!(std::fs::read_to_string(out.join("synth_0000_boxes.txt")).unwrap(), "");
    assert!(load_mask(&out.join("synth_0000_mask.png")).unwrap().is_empty());
    let input = image_to_rgb8(&load_image(&img).unwrap());
    let overlay = load_image(&out.join("synth_0000_overlay.png")).unwrap();
    assert!(overlay.shape().h > 64);
    // interleaved rows: the first 64 are the untouched input
    assert_eq!(&image_to_rgb8(&overlay)[..input.len()], &input[..]);
}

#[test]
fn eval_writes_both_sections() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = quick_model(dir.path());
    let rep = dir.path().join("report");
    let stdout = ok(&["eval", "--ckpt", p(&ck), "--data", p(&data), "--out", p(&rep)]);
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(stdout, text);
    let r = PairedReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let (w, wo) = (r.with_postprocess, r.without_postprocess);
    // same ground truth on both sides
    assert_eq!(w.tp + w.fn_, wo.tp + wo.fn_);
    assert!(w.tp + w.fn_ >= 4);
    assert_eq!(r.with_postprocess.dice, r.without_postprocess.dice);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    assert_eq!(run(&["train", "--data", p(&missing), "--out", p(&dir.path().join("x"))]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(1));
    assert_eq!(run(&["synth"]).status.code(), Some(1));
    let data = dir.path().join("data");
    synth(&data, "1", "0");
    let out = run(&["train", "--data", p(&data), "--out", p(&dir.path().join("x")), "--set", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let diverge = run(&["train", "--data", p(&data), "--out", p(&dir.path().join("x")), "--epochs", "2", "--lr", "1e30"]);
    assert_eq!(diverge.status.code(), Some(3));
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let img = data.join("images/synth_0000.png");
    let out = run(&["infer", "--ckpt", p(&garbage), "--image", p(&img), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}
