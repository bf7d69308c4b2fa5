use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pfsmn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfsmn")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pfsmn(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Small corpus, a short training run and its LM.
fn trained(dir: &Path) {
    ok(dir, &["gen", "--seed", "3", "--count", "40", "--split", "30", "--out", "train.pfc", "--test-out", "test.pfc"]);
    ok(dir, &["train", "--corpus", "train.pfc", "--out", "model.ckpt", "--epochs", "2", "--lm-out", "lm.json", "--history", "h.ndjson"]);
}

fn hypotheses(path: &Path) -> Vec<Value> {
    let v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_array().unwrap().iter().map(|u| u["hypotheses"].clone()).collect()
}

#[test]
fn unknown_flag_exits_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfsmn(dir.path(), &["decode", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn operational_failure_is_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfsmn(dir.path(), &["eval", "--model", "missing.ckpt", "--lm", "lm.json", "--corpus", "c.pfc"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    let v: Value = serde_json::from_str(&err).unwrap();
    assert_eq!(v["kind"], "io");
    assert!(v["error"].as_str().unwrap().contains("missing.ckpt"));
}

#[test]
fn gradcheck_passes_on_a_clean_build() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seed", "7"]);
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l["pass"] == true));
}

#[test]
fn decode_rescore_and_curves_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);

    let m: Value = serde_json::from_slice(&ok(d, &["eval", "--model", "model.ckpt", "--lm", "lm.json", "--corpus", "test.pfc"]).stdout).unwrap();
    assert_eq!(m["utterances"], 10);

    ok(d, &["decode", "--model", "model.ckpt", "--lm", "lm.json", "--corpus", "test.pfc", "--nbest", "1", "--out", "n1.json"]);
    ok(d, &["decode", "--model", "model.ckpt", "--lm", "lm.json", "--corpus", "test.pfc", "--nbest", "20", "--out", "n20.json"]);
    let (one, twenty) = (hypotheses(&d.join("n1.json")), hypotheses(&d.join("n20.json")));
    for (a, b) in one.iter().zip(&twenty) {
        assert_eq!(a.as_array().unwrap().len(), 1);
        assert_eq!(a[0], b[0]);
    }

    ok(d, &["rescore", "--nbest", "n20.json", "--lm", "ngram", "--lm-file", "lm.json", "--lmwt", "0", "--out", "r0.json"]);
    let rescored = hypotheses(&d.join("r0.json"));
    for (a, b) in rescored.iter().zip(&twenty) {
        let phones = |h: &Value| h.as_array().unwrap().iter().map(|x| x["phones"].clone()).collect::<Vec<_>>();
        assert_eq!(phones(a), phones(b));
    }

    ok(d, &["rescore", "--nbest", "n20.json", "--lm", "oracle", "--sweep", "sweep.json", "--out", "ro.json"]);
    let csv = String::from_utf8(ok(d, &["curves", "--sweep", "sweep.json"]).stdout).unwrap();
    assert!(csv.starts_with("lmwt,phone_error,phone_edits,ref_phones\n"));
    assert_eq!(csv.lines().count(), 12);

    let csv = String::from_utf8(ok(d, &["curves", "--history", "h.ndjson"]).stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,"));
}

#[test]
fn same_command_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        trained(d);
        ok(d, &["decode", "--model", "model.ckpt", "--lm", "lm.json", "--corpus", "test.pfc", "--nbest", "5", "--out", "n.json"]);
        ok(d, &["rescore", "--nbest", "n.json", "--lm", "rnn", "--transcripts", "train.pfc", "--sweep", "s.json", "--out", "r.json"]);
    }
    for f in ["train.pfc", "model.ckpt", "lm.json", "h.ndjson", "n.json", "s.json", "r.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn inspect_reports_presets_and_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = String::from_utf8(ok(d, &["inspect", "--preset", "desk"]).stdout).unwrap();
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["param_count"], 47820);
    trained(d);
    let out = String::from_utf8(ok(d, &["inspect", "--lm", "lm.json", "--frames", "4", "--graph-out", "g.txt"]).stdout).unwrap();
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["order"], 4);
    assert!(std::fs::read_to_string(d.join("g.txt")).unwrap().starts_with("PFG1"));
    assert_eq!(pfsmn(d, &["inspect"]).status.code(), Some(1));
}
