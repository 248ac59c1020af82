use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn essa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_essa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_cube(path: &Path, bands: usize, seed: u64) {
    let o = essa(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--bands",
        &bands.to_string(),
        "--height",
        "16",
        "--width",
        "16",
        "--out",
        p(path),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

/// Synthesizes, tiles and trains a tiny model, returning the checkpoint path.
fn tiny_checkpoint(dir: &Path) -> std::path::PathBuf {
    let cube = dir.join("cube.hsi");
    small_cube(&cube, 4, 3);
    let pairs_dir = dir.join("pairs");
    let o = essa(&[
        "pairs",
        "--input",
        p(&cube),
        "--scale",
        "2",
        "--patch",
        "8",
        "--test-every",
        "2",
        "--out",
        p(&pairs_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = dir.join("model.essf");
    let o = essa(&[
        "train",
        "--pairs",
        p(&pairs_dir.join("train")),
        "--channels",
        "8",
        "--stages",
        "2,1",
        "--steps",
        "3",
        "--seed",
        "5",
        "--out",
        p(&ckpt),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    ckpt
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.hsi"), dir.path().join("b.hsi"));
    for out in [&a, &b] {
        let o = essa(&[
            "synth",
            "--seed",
            "7",
            "--height",
            "16",
            "--width",
            "16",
            "--out",
            p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("seed=7"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn verify_passes_on_a_correct_build() {
    let o = essa(&["verify"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("PASS ")).count() >= 5);
    assert!(!out.contains("FAIL "));
}

#[test]
fn pipeline_trains_evaluates_and_upsamples() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let loss = fs::read_to_string(dir.path().join("model.essf.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    assert!(loss.starts_with("step,lr,loss"));

    let csv = dir.path().join("metrics.csv");
    let o = essa(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--pairs",
        p(&dir.path().join("pairs/test")),
        "--out",
        p(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].starts_with("method,mpsnr,sam"));
    assert!(rows[1].starts_with("essa,") && rows[2].starts_with("bicubic,"));

    let lr = dir.path().join("lr.hsi");
    small_cube(&lr, 4, 11);
    let hr = dir.path().join("hr.hsi");
    let o = essa(&[
        "sr",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&lr),
        "--out",
        p(&hr),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("4x32x32"));
}

#[test]
fn resumed_training_continues_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let more = dir.path().join("more.essf");
    let train_dir = dir.path().join("pairs/train");
    let o = essa(&[
        "train",
        "--pairs",
        p(&train_dir),
        "--channels",
        "8",
        "--stages",
        "2,1",
        "--steps",
        "5",
        "--seed",
        "5",
        "--resume",
        p(&ckpt),
        "--out",
        p(&more),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let loss = fs::read_to_string(dir.path().join("more.essf.loss.csv")).unwrap();
    let steps: Vec<&str> = loss
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["3", "4"]);

    let o = essa(&[
        "train",
        "--pairs",
        p(&train_dir),
        "--channels",
        "16",
        "--stages",
        "2,1",
        "--resume",
        p(&ckpt),
        "--out",
        p(&more),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("channels"));
}

#[test]
fn sr_rejects_band_mismatch_naming_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let lr = dir.path().join("wrong.hsi");
    small_cube(&lr, 6, 1);
    let o = essa(&[
        "sr",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&lr),
        "--out",
        p(&dir.path().join("x.hsi")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains('4') && err.contains('6'), "{err}");
}

#[test]
fn config_files_are_layered_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.cfg");
    fs::write(&cfg, "# small cube\nheight=8\nwidth=8\nbands=5\n").unwrap();
    let out = dir.path().join("c.hsi");
    let o = essa(&[
        "synth",
        "--config",
        p(&cfg),
        "--bands",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("bands=3") && s.contains("height=8"));
    assert!(s.contains("3x8x8"));

    fs::write(&cfg, "bogus=1\n").unwrap();
    let o = essa(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn usage_and_file_errors_map_to_exit_codes() {
    assert_eq!(code(&essa(&["synth", "--nonsense"])), 2);
    assert_eq!(code(&essa(&["bench", "--kinds", "softmaxish"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.hsi");
    let o = essa(&[
        "sr",
        "--checkpoint",
        p(&missing),
        "--input",
        p(&missing),
        "--out",
        p(&missing),
    ]);
    assert_eq!(code(&o), 3);

    let corrupt = dir.path().join("bad.essf");
    fs::write(&corrupt, b"ESSFgarbage").unwrap();
    let o = essa(&[
        "sr",
        "--checkpoint",
        p(&corrupt),
        "--input",
        p(&missing),
        "--out",
        p(&missing),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["synth", "pairs", "train", "eval", "sr", "bench", "verify"] {
        let o = essa(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn bench_counts_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let o = essa(&["bench", "--sizes", "256,1024,4096,16384", "--out", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("slope essa"));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 9);
}
