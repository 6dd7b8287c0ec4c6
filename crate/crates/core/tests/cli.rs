use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rcab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcab"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exec_prints_verdict_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(rcab(dir.path(), &["exec", "--target", "m1", "--input", "hex:04"]));
    assert_eq!(out, "verdict crash:S11\nRCAB1\nB 1\nV 1 4\nB 2\nS 11\n");
    fs::write(dir.path().join("in.bin"), [7u8]).unwrap();
    let out = ok(rcab(dir.path(), &["exec", "--target", "m1", "--input", "in.bin"]));
    assert!(out.starts_with("verdict noncrash:X0\n"));
}

#[test]
fn augment_then_extract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(rcab(
        d,
        &["augment", "--method", "concfuzz", "--target", "two_branch", "--budget", "1500execs", "--rng", "4", "--out", "ds"],
    ));
    assert!(d.join("ds/samples.idx").is_file());

    let out = ok(rcab(d, &["extract", "--method", "vulnloc", "--dataset", "ds", "--target", "two_branch", "--out", "v.csv"]));
    assert_eq!(out.trim(), "ground truth at rank 1");
    let v = fs::read_to_string(d.join("v.csv")).unwrap();
    let mut lines = v.lines();
    assert_eq!(lines.next(), Some("rank,score,file,line"));
    assert!(lines.next().unwrap().starts_with("1,"));
    assert!(!d.join("predicates.csv").exists());

    fs::create_dir(d.join("a")).unwrap();
    ok(rcab(d, &["extract", "--method", "aurora", "--dataset", "ds", "--target", "two_branch", "--out", "a/ranking.csv", "--cap", "2"]));
    let ranking = fs::read_to_string(d.join("a/ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 3);
    let preds = fs::read_to_string(d.join("a/predicates.csv")).unwrap();
    assert_eq!(preds.lines().next(), Some("score,file,line,form,threshold"));
    assert!(preds.lines().count() > 3);
}

#[test]
fn bad_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["augment", "--method", "nope", "--target", "m1", "--budget", "10execs", "--out", "x"][..],
        &["augment", "--method", "aflcem", "--target", "m1", "--seed", "hex:00", "--budget", "10execs", "--out", "x"],
        &["augment", "--method", "aflcem", "--target", "m1", "--budget", "soon", "--out", "x"],
        &["exec", "--target", "missing.manifest", "--input", "hex:00"],
        &["extract", "--method", "aurora", "--dataset", "nowhere", "--target", "m1", "--out", "r.csv"],
    ] {
        assert!(!rcab(d, args).status.success(), "{args:?}");
    }
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("bench.toml"),
        "targets = [\"m1\"]\naugmenters = [\"aflcem\", \"concfuzz\"]\nextractors = [\"vulnloc\", \"aurora\"]\n\
         trials = 1\nbudget = \"480execs\"\nbase_rng = 3\nworkers = 2\nout = \"results\"\n",
    )
    .unwrap();
    ok(rcab(d, &["bench", "--config", "bench.toml"]));
    for f in ["results.csv", "timings.csv", "seeds.csv"] {
        assert!(d.join("results").join(f).is_file(), "{f}");
    }
    let results = fs::read_to_string(d.join("results/results.csv")).unwrap();
    // 4 techniques x 8 snapshots, plus the header.
    assert_eq!(results.lines().count(), 33);

    let out = ok(rcab(d, &["report", "--results", "results/results.csv", "--out", "rep"]));
    assert!(out.lines().any(|l| l.ends_with("table2.csv")));
    let table = fs::read_to_string(d.join("rep/table2.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for prefix in ["fig_accuracy_", "fig_balance_", "fig_seeds_", "fig_variance_"] {
        for ext in ["csv", "svg"] {
            assert!(d.join(format!("rep/{prefix}m1.{ext}")).is_file(), "{prefix}{ext}");
        }
    }

    fs::write(d.join("empty.csv"), "").unwrap();
    assert!(!rcab(d, &["report", "--results", "empty.csv", "--out", "rep2"]).status.success());
    assert!(!d.join("rep2/table2.csv").exists());
}
