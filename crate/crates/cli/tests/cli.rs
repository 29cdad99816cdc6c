use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_c2fnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn c2fnet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Rows of a score report as `(name, [M, S, F, Fw, E])`.
fn report_rows(path: &Path) -> Vec<(String, Vec<f64>)> {
    let t = std::fs::read_to_string(path).unwrap();
    let mut lines = t.lines();
    assert_eq!(lines.next(), Some("name\tM\tS\tF\tFw\tE"));
    lines
        .map(|l| {
            let mut f = l.split('\t');
            let name = f.next().unwrap().to_string();
            (name, f.map(|v| v.parse().unwrap()).collect())
        })
        .collect()
}

#[test]
fn self_score_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let o = run(&["synth", "--out", s(&data), "--count", "3", "--size", "64", "--seed", "7", "--contrast", "0.15"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let masks = data.join("masks");
    let report = dir.path().join("r.tsv");
    let o = run(&["score", "--pred", s(&masks), "--gt", s(&masks), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let rows = report_rows(&report);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3].0, "MEAN");
    for (name, v) in &rows {
        assert_eq!(v[0], 0.0, "{name}");
        for &m in &v[1..] {
            assert_eq!(m, 1.0, "{name}: {v:?}");
        }
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&run(&["synth", "--out", s(d), "--count", "2", "--size", "32", "--seed", "3"])), 0);
    }
    for f in ["manifest.tsv", "images/0000.png", "masks/0001.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["synth", "--out", "x", "--colour", "red"])), 1);
    assert_eq!(code(&run(&["synth", "--out", "x", "--count", "many"])), 1);
    let o = run(&["score", "--pred", "p"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("--gt"), "{}", text(&o.stderr));
}

#[test]
fn help_exits_zero_with_every_flag() {
    let cases: [(&str, &[&str]); 5] = [
        ("synth", &["--out", "--count", "--size", "--seed", "--contrast"]),
        ("train", &["--data", "--config", "--out", "--resume"]),
        ("predict", &["--checkpoint", "--data", "--out"]),
        ("score", &["--pred", "--gt", "--out"]),
        ("gradcheck", &["--full"]),
    ];
    for (cmd, flags) in cases {
        let o = run(&[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd}");
        let out = text(&o.stdout);
        for f in flags {
            assert!(out.contains(f), "{cmd} --help lacks {f}:\n{out}");
        }
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["predict", "--checkpoint", s(&dir.path().join("none.ckpt")), "--data", "m.tsv", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("none.ckpt"), "{}", text(&o.stderr));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "epochs = 2\nlearning_rate = 1\n").unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synth", "--out", s(&data), "--count", "1", "--size", "32"])), 0);
    let o = run(&["train", "--data", s(&data.join("manifest.tsv")), "--config", s(&bad), "--out", s(&dir.path().join("t"))]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("line 2"), "{}", text(&o.stderr));
}

#[test]
fn unmatched_stems_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synth", "--out", s(&data), "--count", "3", "--size", "32"])), 0);
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    std::fs::copy(data.join("masks/0000.png"), pred.join("0000.png")).unwrap();
    std::fs::copy(data.join("masks/0001.png"), pred.join("extra.png")).unwrap();
    let o = run(&["score", "--pred", s(&pred), "--gt", s(&data.join("masks")), "--out", s(&dir.path().join("r.tsv"))]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    for stem in ["extra", "0001", "0002"] {
        assert!(err.contains(stem), "{err}");
    }
    assert!(!err.contains("0000"), "{err}");
    assert!(!dir.path().join("r.tsv").exists());
}

#[test]
fn thread_cap_is_validated() {
    let o = bin().env("C2F_THREADS", "lots").args(["synth", "--out", "x"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = bin().env("C2F_THREADS", "1").args(["synth", "--out", s(dir.path()), "--count", "2", "--size", "32"]).output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
}

#[test]
fn train_resume_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synth", "--out", s(&data), "--count", "2", "--size", "32", "--seed", "1"])), 0);
    let manifest = data.join("manifest.tsv");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "epochs = 2\nbatch_size = 1\ninput_size = 32\nscales = 1\nwidths = 4, 4, 8, 8, 8\nunified_width = 8\nrefine_width = 4\nhead_width = 4\n",
    )
    .unwrap();

    let full = dir.path().join("full");
    let o = run(&["train", "--data", s(&manifest), "--config", s(&cfg), "--out", s(&full), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    for f in ["config.txt", "latest.ckpt", "final.ckpt", "trace.tsv"] {
        assert!(full.join(f).exists(), "{f}");
    }

    // stop after one epoch, then resume from its checkpoint
    let first = dir.path().join("first");
    let one = dir.path().join("one.cfg");
    std::fs::write(&one, std::fs::read_to_string(&cfg).unwrap().replace("epochs = 2", "epochs = 2\nmax_steps = 2")).unwrap();
    assert_eq!(code(&run(&["train", "--data", s(&manifest), "--config", s(&one), "--out", s(&first), "--quiet"])), 0);
    let second = dir.path().join("second");
    let o = run(&[
        "train",
        "--data",
        s(&manifest),
        "--config",
        s(&cfg),
        "--out",
        s(&second),
        "--resume",
        s(&first.join("latest.ckpt")),
        "--quiet",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(std::fs::read(full.join("final.ckpt")).unwrap(), std::fs::read(second.join("final.ckpt")).unwrap());

    let pred = dir.path().join("pred");
    let o = run(&["predict", "--checkpoint", s(&full.join("final.ckpt")), "--data", s(&manifest), "--out", s(&pred)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report = dir.path().join("r.tsv");
    let o = run(&["score", "--pred", s(&pred), "--gt", s(&data.join("masks")), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert_eq!(report_rows(&report).len(), 3);
}

#[test]
fn gradcheck_reports_every_case() {
    let o = run(&["gradcheck", "--seeds", "3"]);
    assert_eq!(code(&o), 0, "{}{}", text(&o.stdout), text(&o.stderr));
    let out = text(&o.stdout);
    for case in ["conv2d", "batch_norm_train", "weighted_iou", "rfb", "msca", "acfm", "dgcm", "mrb", "cim"] {
        let line = out.lines().find(|l| l.split_whitespace().next() == Some(case)).unwrap_or_else(|| panic!("{case} missing:\n{out}"));
        assert!(line.ends_with("ok"), "{line}");
    }
    assert!(!out.contains("network+loss"));
}

/// Train on the 8-sample set, predict, and score against the synthetic masks.
#[test]
fn overfit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&run(&["synth", "--out", s(&data), "--count", "8", "--size", "64", "--seed", "0"])), 0);
    let manifest = data.join("manifest.tsv");
    let run_dir = dir.path().join("run");
    let cfg = repo_file("configs/overfit.cfg");
    let o = run(&["train", "--data", s(&manifest), "--config", s(&cfg), "--out", s(&run_dir), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let pred = dir.path().join("pred");
    assert_eq!(code(&run(&["predict", "--checkpoint", s(&run_dir.join("final.ckpt")), "--data", s(&manifest), "--out", s(&pred)])), 0);
    let report = dir.path().join("r.tsv");
    assert_eq!(code(&run(&["score", "--pred", s(&pred), "--gt", s(&data.join("masks")), "--out", s(&report)])), 0);
    let rows = report_rows(&report);
    let mean = &rows.last().unwrap().1;
    assert!(mean[0] < 0.1, "mean MAE {}", mean[0]);
}
