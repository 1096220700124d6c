use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use depvec::mir::{load_corpus, write_corpus, CorpusRecord};
use depvec::pretrain::{load_checkpoint, Strategy};

fn depvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depvec"))
        .args(args)
        .env_remove("DEPVEC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_records(path: &Path) -> Vec<CorpusRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        stdout(&depvec(&["gen-corpora", "--out", s(&dir.path().join("c"))]));
        let pre = read_records(&dir.path().join("c/pretrain.jsonl"));
        write_corpus(dir.path().join("small.jsonl"), &pre[..4]).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn pretrain(&self, out: &str, extra: &[&str]) -> String {
        let corpus = self.path("small.jsonl");
        let out = self.path(out);
        let mut args = vec!["pretrain", "--corpus", s(&corpus)];
        args.extend(["--out", s(&out)]);
        args.extend(extra);
        stdout(&depvec(&args))
    }

    fn program(&self, name: &str, index: usize) -> PathBuf {
        let recs = read_records(&self.path("c/solution.jsonl"));
        let path = self.path(name);
        fs::write(&path, &recs[index].code).unwrap();
        path
    }
}

#[test]
fn gen_corpora_is_seeded_and_honours_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let listed = stdout(&depvec(&["gen-corpora", "--out", s(&a), "--seed", "3"]));
    assert_eq!(listed.lines().count(), 7);
    let o = Command::new(env!("CARGO_BIN_EXE_depvec"))
        .args(["gen-corpora", "--out", s(&b)])
        .env("DEPVEC_SEED", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["pretrain.jsonl", "solution.jsonl", "clones.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(load_corpus(a.join("solution.jsonl")).unwrap().len(), 200);
}

#[test]
fn pretrained_checkpoint_loads_and_is_reproducible() {
    let fx = Fixture::new();
    let report = fx.pretrain("m1.ckpt", &["--strategy", "vgae", "--gnn", "gcn", "--seed", "2"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["strategy"], "vgae");
    let (model, strategy) = load_checkpoint(&fx.path("m1.ckpt")).unwrap();
    assert_eq!(strategy, Strategy::Vgae);
    assert_eq!(model.config.arch, depvec::gnn::Arch::Gcn);

    fx.pretrain("m2.ckpt", &["--strategy", "vgae", "--gnn", "gcn", "--seed", "2"]);
    assert_eq!(fs::read(fx.path("m1.ckpt")).unwrap(), fs::read(fx.path("m2.ckpt")).unwrap());
}

#[test]
fn embed_and_clone_sim() {
    let fx = Fixture::new();
    fx.pretrain("m.ckpt", &["--strategy", "none"]);
    let a = fx.program("a.mir", 0);
    let b = fx.program("b.mir", 1);
    let ckpt = fx.path("m.ckpt");

    let same = stdout(&depvec(&["clone-sim", s(&a), s(&a), "--checkpoint", s(&ckpt)]));
    assert_eq!(same, "1.000000\n");
    let other = stdout(&depvec(&["clone-sim", s(&a), s(&b), "--checkpoint", s(&ckpt)]));
    let v: f64 = other.trim().parse().unwrap();
    assert!((-1.0..=1.0).contains(&v));

    let e1 = stdout(&depvec(&["embed", s(&a), "--checkpoint", s(&ckpt)]));
    assert_eq!(e1.split_whitespace().count(), 600);
    assert_eq!(e1, stdout(&depvec(&["embed", s(&a), "--checkpoint", s(&ckpt)])));
    let lex = stdout(&depvec(&["embed", s(&a), "--checkpoint", s(&ckpt), "--mode", "lexical"]));
    let dep: Vec<f64> = lex.split_whitespace().skip(300).map(|x| x.parse().unwrap()).collect();
    assert!(dep.iter().all(|&x| x == 0.0));
}

#[test]
fn finetune_and_probe_report_json() {
    let fx = Fixture::new();
    fx.pretrain("m.ckpt", &["--strategy", "none"]);
    let ckpt = fx.path("m.ckpt");
    let sol = read_records(&fx.path("c/solution.jsonl"));
    let labels: std::collections::BTreeSet<String> = sol.iter().filter_map(|r| r.label.clone()).collect();
    let picked: Vec<CorpusRecord> = labels
        .iter()
        .take(2)
        .flat_map(|l| sol.iter().filter(move |r| r.label.as_ref() == Some(l)).take(8).cloned())
        .collect();
    write_corpus(fx.path("two.jsonl"), &picked).unwrap();

    let out = stdout(&depvec(&[
        "finetune",
        "--checkpoint",
        s(&ckpt),
        "--task",
        "solution_class",
        "--data",
        s(&fx.path("two.jsonl")),
        "--epochs",
        "1",
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["task"], "solution_class");
    assert!(report["f1"].as_f64().unwrap() >= 0.0);

    let out = stdout(&depvec(&[
        "probe",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&fx.path("two.jsonl")),
        "--feature",
        "dependence",
    ]));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["width"], 300);
    assert_eq!(report["fingerprint_before"], report["fingerprint_after"]);
}

#[test]
fn usage_and_io_errors_have_distinct_exit_codes() {
    assert_eq!(depvec(&["selfcheck", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(depvec(&["teleport"]).status.code(), Some(2));
    let o = depvec(&["clone-sim", "/no/such/a.mir", "/no/such/b.mir", "--checkpoint", "/no/such.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such"));
    let o = depvec(&["pretrain", "--corpus", "/no/such.jsonl", "--out", "/tmp/x.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selfcheck_passes() {
    let out = stdout(&depvec(&["selfcheck", "--seeds", "1"]));
    assert!(out.trim_end().ends_with("0 failed"), "{out}");
}
