use std::path::Path;
use std::process::{Command, Output};

fn cutpost(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutpost"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn table(path: &Path) -> (Vec<String>, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let comments: Vec<String> = text.lines().take_while(|l| l.starts_with('#')).map(String::from).collect();
    let body: String = text.lines().skip(comments.len()).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let head = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (comments, head, rows)
}

#[test]
fn doe_compare_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = cutpost(dir.path(), &["--seed", "3", "doe-compare", "--l", "8", "--reps", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (comments, head, rows) = table(&dir.path().join("doe_compare.csv"));
    assert!(comments[0].starts_with("# cutpost "));
    assert!(comments[1].starts_with("# config: {") && comments[1].contains("\"doe-compare\""));
    assert!(!comments[1].contains("threads") && !comments[1].contains("out_dir"));
    assert_eq!(comments[2], "# seed: 3");
    assert_eq!(head, ["sampler", "L", "rep", "seed", "ks", "wall_ms"]);
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let ks: f64 = r[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&ks));
        assert_eq!(r[5], "");
    }
    let (_, head, rows) = table(&dir.path().join("doe_kde.csv"));
    assert_eq!(head, ["source", "x", "density"]);
    assert!(rows.iter().any(|r| r[0] == "prior"));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(printed.lines().count(), 2);
}

#[test]
fn wall_time_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let out = cutpost(dir.path(), &["--record-wall-time", "seq-demo", "--l0", "3", "--l", "4", "--reps", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, head, rows) = table(&dir.path().join("seq_demo.csv"));
    let w = head.iter().position(|h| h == "wall_ms").unwrap();
    assert!(rows.iter().all(|r| r[w].parse::<f64>().unwrap() >= 0.0));
    let (_, head, rows) = table(&dir.path().join("seq_trace.csv"));
    assert_eq!(head, ["rep", "round", "gamma", "score", "rejections", "fallback"]);
    assert_eq!(rows.len(), 1);
}

#[test]
fn json_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let out = cutpost(dir.path(), &["--format", "json", "coverage", "--grid", "1", "--reps", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("coverage.json")).unwrap()).unwrap();
    assert_eq!(v["tool"], "cutpost");
    assert_eq!(v["seed"], 1);
    assert_eq!(v["config"]["command"], "coverage");
    assert_eq!(v["columns"], serde_json::json!(["setting", "method", "coverage", "mse", "reps", "seed"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--threads", "0", "doe-compare"][..],
        &["eco-benchmark", "--budgets", "2"],
        &["seq-demo", "--l0", "8", "--l", "5"],
        &["coverage", "--reps", "10"],
        &["db-benchmark", "--budgets", "2", "--methods", "ecp"],
        &["no-such-command"],
        &["doe-compare", "--samplers", "bogus"],
    ] {
        let out = cutpost(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn same_seed_same_bytes_across_processes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "11", "db-benchmark", "--budgets", "4", "--reps", "2", "--methods", "ds,ecp", "--samplers", "lhs", "--total-draws", "400"];
    assert!(cutpost(a.path(), &args).status.success());
    let mut with_threads = vec!["--threads", "3"];
    with_threads.extend_from_slice(&args);
    assert!(cutpost(b.path(), &with_threads).status.success());
    for name in ["db_benchmark.csv", "db_summary.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    let mut other = args.to_vec();
    other[1] = "12";
    assert!(cutpost(c.path(), &other).status.success());
    assert_ne!(std::fs::read(a.path().join("db_benchmark.csv")).unwrap(), std::fs::read(c.path().join("db_benchmark.csv")).unwrap());
}
