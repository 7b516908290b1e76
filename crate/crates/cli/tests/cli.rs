use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seed = 1
data.subjects = 3
data.samples = 4
data.size = 32
gt.pairs = 3
gt.heldout = 1
irt.rays = 300
ced.depth = 2
ced.base_channels = 4
ced1.epochs = 1
ced2.epochs = 1
stack.epochs = 1
ae.epochs = 1
fe.channels = 4,4,4,8,8,8
fe.pool_grid = 2
fe.embedding_dim = 8
triplet.steps = 1
triplet.batch = 3
triplet.subset = 3
triplet.steps_per_epoch = 1
triplet.frozen_max_epochs = 1
augment.copies = 1
e2e.steps = 1
e2e.batch = 3
";

fn pvsnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvsnet")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_enroll_and_verify_an_enrolled_image() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("tiny.txt"), TINY).unwrap();
    let base = ["--config", "tiny.txt", "--out", "out"];
    let run = pvsnet(d.path(), &[&base[..], &["run"]].concat());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["metrics.csv", "roc.csv", "roc.svg", "histogram.csv"] {
        assert!(d.path().join("out/report").join(f).is_file(), "{f}");
    }

    let enroll = pvsnet(d.path(), &[&base[..], &["enroll", "--dataset", "out/data", "--output", "gallery.tsv"]].concat());
    assert!(enroll.status.success(), "{}", String::from_utf8_lossy(&enroll.stderr));
    assert!(stdout(&enroll).contains("enrolled 6 samples"));

    let verify = pvsnet(d.path(), &[&base[..], &["verify", "--enrollment", "gallery.tsv", "--probe", "out/data/A/s0001_000.pgm", "--threshold", "1e-9"]].concat());
    assert!(verify.status.success(), "{}", String::from_utf8_lossy(&verify.stderr));
    let text = stdout(&verify);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "distance 0");
    assert!(lines[1].starts_with("nearest subject 1"));
    assert_eq!(lines[2], "accept");

    let other = pvsnet(d.path(), &[&base[..], &["verify", "--enrollment", "gallery.tsv", "--probe", "out/data/A/s0001_000.pgm", "--threshold", "1e-9", "--subject", "0"]].concat());
    assert!(other.status.success());
    assert_eq!(stdout(&other).lines().last(), Some("reject"));

    let eval = pvsnet(d.path(), &[&base[..], &["eval"]].concat());
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
}

#[test]
fn transform_writes_an_image() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("tiny.txt"), TINY).unwrap();
    assert!(pvsnet(d.path(), &["--config", "tiny.txt", "--out", "o", "gen-data"]).status.success());
    let t = pvsnet(d.path(), &["transform", "o/data/A/s0000_000.pgm", "--output", "t.pgm", "--kind", "tcm"]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let i = pvsnet(d.path(), &["transform", "t.pgm", "--output", "i.pgm", "--kind", "irt", "--rays", "500"]);
    assert!(i.status.success());
    assert!(fs::read(d.path().join("i.pgm")).unwrap().starts_with(b"P5"));
}

#[test]
fn gradcheck_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = pvsnet(d.path(), &["gradcheck", "--trials", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(pvsnet(d.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(pvsnet(d.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(pvsnet(d.path(), &["--set", "data.samples=3", "gen-data"]).status.code(), Some(1));
    assert_eq!(pvsnet(d.path(), &["--set", "no.such.key=1", "gen-data"]).status.code(), Some(1));
    assert_eq!(pvsnet(d.path(), &["--config", "missing.txt", "gen-data"]).status.code(), Some(2));
    assert_eq!(pvsnet(d.path(), &["transform", "missing.pgm", "--output", "x.pgm", "--kind", "tcm"]).status.code(), Some(2));
    assert_eq!(pvsnet(d.path(), &["--out", "empty", "eval"]).status.code(), Some(2));
}
