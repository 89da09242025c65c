use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn mhg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_path_buf();
    let o = mhg(
        &p,
        &[
            "extract-grammar",
            "--in",
            &data("corpus.smi"),
            "--out",
            "g.json",
        ],
    );
    assert!(o.status.success());
    (dir, p)
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = mhg(dir.path(), &["train", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(mhg(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        mhg(
            dir.path(),
            &["decode", "--ckpt", "x", "--grammar", "y", "--out", "z"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(mhg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = mhg(
        dir.path(),
        &["extract-grammar", "--in", "missing.smi", "--out", "g.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.smi"), "CCO\nC1CC\n").unwrap();
    let o = mhg(
        dir.path(),
        &["extract-grammar", "--in", "bad.smi", "--out", "g.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("g.json").exists());
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[test]
fn roundtrip_reports_full_corpus() {
    let (_d, p) = setup();
    let o = mhg(
        &p,
        &[
            "roundtrip",
            "--grammar",
            "g.json",
            "--in",
            &data("corpus.smi"),
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("roundtrip=200/200 (100.00%)"));
}

#[test]
fn train_decode_encode_pipeline() {
    let (_d, p) = setup();
    std::fs::write(
        p.join("cfg.txt"),
        "node_dim = 8\nradius = 2\nlatent_dim = 4\ngru_hidden = 8\ngru_layers = 2\nrule_emb = 4\nepochs = 1\n",
    )
    .unwrap();
    let o = mhg(
        &p,
        &[
            "train",
            "--corpus",
            &data("corpus.smi"),
            "--grammar",
            "g.json",
            "--config",
            "cfg.txt",
            "--out",
            "m.ckpt",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("epochs=1 "));

    let o = mhg(
        &p,
        &[
            "decode",
            "--ckpt",
            "m.ckpt",
            "--grammar",
            "g.json",
            "--sample",
            "1000",
            "--out",
            "d.smi",
        ],
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "valid=1000 truncated=0");
    assert_eq!(
        std::fs::read_to_string(p.join("d.smi"))
            .unwrap()
            .lines()
            .count(),
        1000
    );

    std::fs::write(p.join("z.txt"), "0 0 0 0\n1,2,3,4\n").unwrap();
    let o = mhg(
        &p,
        &[
            "decode",
            "--ckpt",
            "m.ckpt",
            "--grammar",
            "g.json",
            "--z-file",
            "z.txt",
            "--out",
            "z.smi",
        ],
    );
    assert!(o.status.success());
    std::fs::write(p.join("short.txt"), "0 0\n").unwrap();
    let o = mhg(
        &p,
        &[
            "decode",
            "--ckpt",
            "m.ckpt",
            "--grammar",
            "g.json",
            "--z-file",
            "short.txt",
            "--out",
            "s.smi",
        ],
    );
    assert_eq!(o.status.code(), Some(2));

    let o = mhg(
        &p,
        &[
            "decode",
            "--ckpt",
            "m.ckpt",
            "--grammar",
            "g.json",
            "--sample",
            "5",
            "--max-len",
            "1",
            "--out",
            "t.smi",
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("truncated="));

    let o = mhg(
        &p,
        &[
            "encode",
            "--ckpt",
            "m.ckpt",
            "--in",
            &data("corpus_mw.tsv"),
            "--out",
            "fp.csv",
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("rows=200 dim=24"));

    let o = mhg(
        &p,
        &[
            "eval",
            "--fp",
            "fp.csv",
            "--labels",
            &data("corpus_mw.tsv"),
            "--out",
            "e.csv",
        ],
    );
    assert!(o.status.success());
    let report = std::fs::read_to_string(p.join("e.csv")).unwrap();
    assert_eq!(report.lines().count(), 10);
    assert!(report.starts_with("method,radius,split,r2\n"));

    let o = mhg(
        &p,
        &[
            "eval",
            "--fp",
            "fp.csv",
            "--labels",
            &data("corpus.smi"),
            "--out",
            "e2.csv",
        ],
    );
    assert_eq!(o.status.code(), Some(2));

    // a different grammar invalidates the checkpoint
    std::fs::write(p.join("tiny.smi"), "CCO\n").unwrap();
    assert!(mhg(
        &p,
        &["extract-grammar", "--in", "tiny.smi", "--out", "g2.json"]
    )
    .status
    .success());
    let o = mhg(
        &p,
        &[
            "decode",
            "--ckpt",
            "m.ckpt",
            "--grammar",
            "g2.json",
            "--sample",
            "3",
            "--out",
            "x.smi",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!p.join("x.smi").exists());
}
