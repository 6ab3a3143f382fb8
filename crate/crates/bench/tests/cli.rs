use std::process::{Command, Output};

use leap_bench::record::read_csv;
use leap_bench::{Record, COLUMNS};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leap-bench"))
        .args(args)
        .output()
        .expect("spawn leap-bench")
}

fn small(experiment: &str, extra: &[&str]) -> Vec<Record> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let mut args = vec![
        "--experiment",
        experiment,
        "--region-bytes",
        "4M",
        "--reps",
        "1",
        "--timeout-s",
        "5",
        "--mode",
        "simulated",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = bench(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
    read_csv(text.as_bytes()).unwrap()
}

fn measured(rs: &[Record]) -> impl Iterator<Item = &Record> {
    rs.iter().filter(|r| r.rep != "avg" && !r.is_skipped())
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bench(&["--help"]).status.code(), Some(0));
    assert_eq!(bench(&["--version"]).status.code(), Some(0));
}

#[test]
fn configuration_errors_exit_one() {
    for args in [
        &["--bogus"][..],
        &[][..],
        &["--experiment", "E9"],
        &["--experiment", "E4", "--rates", "fast"],
        &["--experiment", "E1", "--areas", "1M"],
        &["--experiment", "E3", "--areas", "5000"],
        &["--experiment", "E3", "--reduction-factor", "1"],
        &["--experiment", "E3", "--mode", "cloud"],
        &["--experiment", "E3", "--timeout-s", "0"],
    ] {
        let o = bench(args);
        assert_eq!(
            o.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn real_numa_request_on_one_node_is_skipped_not_failed() {
    let o = bench(&["--env-check"]);
    assert_eq!(o.status.code(), Some(0));
    if !String::from_utf8_lossy(&o.stdout).contains("simulated") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e3.csv");
    let o = bench(&[
        "--experiment",
        "E3",
        "--region-bytes",
        "4M",
        "--reps",
        "1",
        "--mode",
        "real-numa",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rs = read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert!(!rs.is_empty());
    assert!(rs.iter().all(|r| r.is_skipped() && !r.skip_reason.is_empty()));
}

#[test]
fn quiet_overhead_run_copies_nothing_extra() {
    let rs = small("E6", &["--rates", "0", "--areas", "64K,1M"]);
    let mut n = 0;
    for r in measured(&rs) {
        assert_eq!(r.status, "complete");
        assert_eq!(r.bytes_copied_extra, Some(0));
        assert_eq!(r.bytes_copied_total, Some(4 << 20));
        n += 1;
    }
    assert_eq!(n, 2);
}

#[test]
fn slow_burst_leaves_nothing_pending() {
    let rs = small("E4", &["--rates", "10K", "--areas", "64K"]);
    let leap: Vec<_> = measured(&rs).filter(|r| r.method == "page-leap").collect();
    assert_eq!(leap.len(), 1);
    assert_eq!(leap[0].pages_pending, Some(0));
    assert_eq!(leap[0].pages_migrated, leap[0].pages_total);
    assert_eq!(rs.iter().filter(|r| r.rep == "avg").count(), rs.len() / 2);
}

#[test]
fn skewed_load_is_recorded_alongside_uniform() {
    let rs = small("E4", &["--rates", "100K", "--areas", "1M", "--skew", "0.75:1M"]);
    let loads: Vec<&str> = measured(&rs)
        .filter(|r| r.method == "page-leap")
        .map(|r| r.load.as_str())
        .collect();
    assert_eq!(loads, ["uniform", "skewed"]);
}

#[test]
fn json_output_parses_into_records() {
    let o = bench(&[
        "--experiment",
        "E2",
        "--region-bytes",
        "4M",
        "--reps",
        "2",
        "--mode",
        "simulated",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rs: Vec<Record> = serde_json::from_slice(&o.stdout).unwrap();
    let fresh: Vec<_> = rs.iter().filter(|r| r.method == "raw-copy-fresh").collect();
    assert_eq!(fresh.len(), 3);
    assert_eq!(fresh[2].rep, "avg");
    assert!(fresh.iter().all(|r| r.pages_migrated == Some(1024)));
}

#[test]
fn lineitem_queries_agree_across_migration() {
    let rs = small("E7", &[]);
    assert!(!rs.is_empty());
    for r in measured(&rs) {
        assert_eq!(r.status, "ok", "{r:?}");
        assert!(!r.query_result.is_empty());
    }
    let leap = measured(&rs).filter(|r| r.method == "page-leap").count();
    assert!(leap > 0);
}
