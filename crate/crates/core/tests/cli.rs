mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use attn_align::data::decode_netpbm;
use common::mnist_paths;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_attn-align"));
    c.env("RUST_LOG", "warn");
    c
}

/// Config with the bundled MNIST paths, small splits and `extra` lines.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let [a, b, c, d] = mnist_paths();
    let text = format!(
        "train_images = {}\ntrain_labels = {}\ntest_images = {}\ntest_labels = {}\ntrain_limit = 100\ntest_limit = 40\n{extra}",
        a.display(),
        b.display(),
        c.display(),
        d.display()
    );
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(cfg).arg("--out").arg(out).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_thirty_rows_with_phase_switch_and_eval_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = colored\nlambda0 = 160\ne_attn = 11\n");
    let out = tmp.path().join("train");
    let o = run(&cfg, &out, &["train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 30);
    for (e, row) in rows.iter().enumerate() {
        let phase = row.split(',').nth(1).unwrap();
        assert_eq!(phase, if e < 11 { "attention" } else { "joint" }, "epoch {e}");
    }
    assert!(out.join("model.ckpt").exists());
    assert!(out.join("resolved_config.txt").exists());

    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    let recorded = summary.lines().find_map(|l| l.strip_prefix("final_test_acc = ")).unwrap();
    let eval_cfg = write_config(
        tmp.path(),
        &format!("dataset = colored\ncheckpoint = {}\n", out.join("model.ckpt").display()),
    );
    let o = run(&eval_cfg, &tmp.path().join("eval"), &["eval"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("test_acc = {recorded}\n")), "{}", stdout(&o));
}

#[test]
fn singleton_grid_writes_one_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "dataset = decoy\nepochs = 2\ne_attn = 1\ngrid_lambdas = 8\ngrid_e_attns = 1\n",
    );
    let out = tmp.path().join("grid");
    let o = run(&cfg, &out, &["grid"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("grid_heatmap.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "lambda0,E1");
    assert!(lines[1].starts_with("8,"));
    let (magic, w, h, px) = decode_netpbm(&fs::read(out.join("grid_heatmap.pgm")).unwrap()).unwrap();
    assert_eq!((magic.as_str(), w, h, px.len()), ("P5", 1, 1, 1));
    let cells = fs::read_to_string(out.join("grid_cells.csv")).unwrap();
    assert!(cells.contains("# chosen lambda0=8 e_attn=1"));
}

#[test]
fn synth_and_saliency_write_images() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = decoy\nexport_count = 2\nwrite_teacher_bundles = true\n");
    let out = tmp.path().join("synth");
    let o = run(&cfg, &out, &["synth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("dataset_stats.txt").exists());
    assert_eq!(fs::read_dir(out.join("previews")).unwrap().count(), 6);
    assert!(out.join("teachers/train.attn").exists());

    // Saliency from two tiny checkpoints, trained through the CLI.
    let train_cfg = write_config(tmp.path(), "dataset = decoy\nepochs = 1\ne_attn = 0\nlambda0 = 0\n");
    assert!(run(&train_cfg, &tmp.path().join("base"), &["train"]).status.success());
    let train_cfg = write_config(tmp.path(), "dataset = decoy\nepochs = 1\ne_attn = 1\n");
    assert!(run(&train_cfg, &tmp.path().join("aligned"), &["train"]).status.success());
    let sal_cfg = write_config(
        tmp.path(),
        &format!(
            "dataset = decoy\nsaliency_count = 3\nbaseline_checkpoint = {}\naligned_checkpoint = {}\n",
            tmp.path().join("base/model.ckpt").display(),
            tmp.path().join("aligned/model.ckpt").display()
        ),
    );
    let out = tmp.path().join("sal");
    let o = run(&sal_cfg, &out, &["saliency"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, w, h, _) = decode_netpbm(&fs::read(out.join("saliency/sheet.ppm")).unwrap()).unwrap();
    assert_eq!((w, h), (84, 84));
    assert_eq!(fs::read_dir(out.join("saliency")).unwrap().count(), 4);
}

#[test]
fn external_teachers_round_trip_through_train() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = decoy\nwrite_teacher_bundles = true\n");
    let synth = tmp.path().join("synth");
    assert!(run(&cfg, &synth, &["synth"]).status.success());
    let ext = format!("dataset = decoy\nepochs = 2\ne_attn = 1\nexternal_teachers = {}\n", synth.join("teachers").display());
    let a = run(&write_config(tmp.path(), &ext), &tmp.path().join("ext"), &["train"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&write_config(tmp.path(), "dataset = decoy\nepochs = 2\ne_attn = 1\n"), &tmp.path().join("oracle"), &["train"]);
    assert!(b.status.success());
    // Bundles store f32, so the runs agree closely but not bit-for-bit.
    let acc = |d: &str| -> f64 {
        let s = fs::read_to_string(tmp.path().join(d).join("summary.txt")).unwrap();
        s.lines().find_map(|l| l.strip_prefix("final_test_acc = ")).unwrap().parse().unwrap()
    };
    assert!((acc("ext") - acc("oracle")).abs() <= 0.05);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(bin().arg("--help").output().unwrap().status.success());

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "lambda0 = abc\n").unwrap();
    let o = run(&bad, &out, &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1: expected number"));

    fs::write(&bad, "lambda = 3\nfoo = 1\n").unwrap();
    let o = run(&bad, &out, &["train"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("lambda (line 1)") && err.contains("foo (line 2)"), "{err}");

    // No dataset paths at all.
    let empty = tmp.path().join("empty.cfg");
    fs::write(&empty, "").unwrap();
    assert_eq!(run(&empty, &out, &["train"]).status.code(), Some(1));

    let missing = tmp.path().join("missing.cfg");
    fs::write(
        &missing,
        "train_images = /nonexistent/a\ntrain_labels = /nonexistent/b\ntest_images = /nonexistent/c\ntest_labels = /nonexistent/d\n",
    )
    .unwrap();
    assert_eq!(run(&missing, &out, &["train"]).status.code(), Some(2));

    let ckpt = tmp.path().join("garbage.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let cfg = write_config(tmp.path(), &format!("checkpoint = {}\n", ckpt.display()));
    assert_eq!(run(&cfg, &out, &["eval"]).status.code(), Some(2));

    let cfg = write_config(tmp.path(), "dataset = decoy\nepochs = 2\ne_attn = 0\nlr = 1e12\n");
    let o = run(&cfg, &tmp.path().join("nan"), &["train"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch"), "{}", String::from_utf8_lossy(&o.stderr));

    assert!(!out.exists(), "failed runs must not create outputs");
}

#[test]
fn failing_validation_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "external_teachers = /nonexistent/teachers\n");
    let o = run(&cfg, &out, &["train"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!out.exists());
    let cfg = write_config(tmp.path(), "e_attn = 40\n");
    assert_eq!(run(&cfg, &out, &["grid"]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = decoy\nepochs = 3\ne_attn = 1\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &["--seed", "5", "train"]).status.success());
    assert!(run(&cfg, &b, &["--seed", "5", "train"]).status.success());
    for f in ["metrics.csv", "model.ckpt", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
