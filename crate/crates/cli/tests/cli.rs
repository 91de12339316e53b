use std::path::Path;
use std::process::{Command, Output};

fn qksdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qksdp")).args(args).output().unwrap()
}

fn qksdp_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qksdp")).args(args).env(key, val).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_then_certify() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("rq.txt");
    let report = dir.path().join("rq.report");
    let csv = dir.path().join("runs.csv");
    let out = qksdp(&["generate", "--family", "random-qkp", "--n", "60", "--seed", "3", "--out", path(&inst)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qksdp(&[
        "solve", "--in", path(&inst), "--report-out", path(&report), "--csv-out", path(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qksdp(&["certify", "--in", path(&inst), "--report", path(&report)]);
    assert!(out.status.success());
    assert!(stdout(&out).trim_end().ends_with("OK"));

    let mut rd = csv::Reader::from_path(&csv).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header[..6], ["instance", "n", "p", "beta", "r", "obj"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for k in ["rp", "rd", "pdgap"] {
        let v: f64 = rows[0][col(k)].parse().unwrap();
        assert!(v < 1e-6, "{k} = {v}");
    }
}

#[test]
fn certify_rejects_a_tampered_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.report");
    let out = qksdp(&["solve", "--generate", "random-qkp", "--n", "30", "--seed", "1", "--report-out", path(&report)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    let line = text.lines().find(|l| l.starts_with("pdgap")).unwrap();
    std::fs::write(&report, text.replacen(line, "pdgap 1.0e-3", 1)).unwrap();
    let out = qksdp(&["certify", "--generate", "random-qkp", "--n", "30", "--seed", "1", "--report", path(&report)]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn missing_input_fails() {
    let out = qksdp(&["solve", "--in", "/definitely/not/here.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn oracle_refuses_large_instances() {
    let out = qksdp(&["oracle", "--generate", "random-qkp", "--n", "25"]);
    assert!(!out.status.success());
}

#[test]
fn oracle_on_three_items() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("three.txt");
    std::fs::write(&inst, "3 2\n1 1 1\n1 2 1\n2 3 2\n").unwrap();
    let out = qksdp(&["oracle", "--in", path(&inst)]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("exhaustive optimum 4 at items [2 3]"), "{text}");
    assert!(text.trim_end().ends_with("OK"));
}

#[test]
fn linear_file_solves_at_rank_three() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("lin.txt");
    std::fs::write(&inst, "3 5\n10 2\n7 1\n4 3\n").unwrap();
    let csv = dir.path().join("lin.csv");
    let out = qksdp(&["solve", "--in", path(&inst), "--format", "knap-linear", "--r", "3", "--csv-out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(&csv).unwrap();
    let status = rd.headers().unwrap().iter().position(|h| h == "status").unwrap();
    let row = rd.records().next().unwrap().unwrap();
    assert!(["converged", "non-regular-optimal"].contains(&&row[status]), "{row:?}");
    assert_eq!(&row[4], "3");
}

#[test]
fn empty_bench_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    let out = qksdp(&["bench", "--families", "", "--csv-out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("instance,n,p,beta,r,obj,rp,rd,pdgap,time_s,status,escapes,relgap,rounded_value"));
}

#[test]
fn bench_rows_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let args = |csv: &str| -> Vec<String> {
        [
            "bench", "--families", "random-qkp,uncorrelated-linear", "--sizes", "20,40", "--seeds", "1,2",
            "--csv-out", csv,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let csv = dir.path().join(format!("t{threads}.csv"));
        let a = args(path(&csv));
        let a: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = qksdp_env(&a, "QKSDP_THREADS", threads);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut rd = csv::Reader::from_path(&csv).unwrap();
        let time = rd.headers().unwrap().iter().position(|h| h == "time_s").unwrap();
        let rows: Vec<Vec<String>> = rd
            .records()
            .map(|r| {
                r.unwrap().iter().enumerate().filter(|(i, _)| *i != time).map(|(_, v)| v.to_string()).collect()
            })
            .collect();
        assert_eq!(rows.len(), 8);
        tables.push(rows);
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn generate_rejects_odd_construction() {
    let dir = tempfile::tempdir().unwrap();
    let out = qksdp(&[
        "generate", "--family", "nonregular-construction", "--n", "7", "--out", path(&dir.path().join("x.txt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
