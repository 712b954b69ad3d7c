use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use equiprice::harness::{read_bench_csv, read_trace_csv, BenchCsvRow, ReportFile};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equiprice"))
        .args(args)
        .output()
        .unwrap()
}

fn read_report(path: &Path) -> ReportFile {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn saturated_fixture_solves_to_ray_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let fx = fixture("saturated.json");
    let status = run(&[
        "solve",
        fx.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--eps",
        "1e-8",
        "--max-iter",
        "2000000",
    ]);
    assert_eq!(
        status.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let report = read_report(&out);
    assert!(
        (report.solution[0] - 4.0).abs() <= 1e-2,
        "{:?}",
        report.solution
    );
    assert_eq!(report.termination, "Converged");
}

#[test]
fn missing_key_is_an_input_error() {
    let fx = fixture("missing_cost.json");
    let output = run(&["solve", fx.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("`C`"), "{stderr}");
}

#[test]
fn iteration_limit_exits_with_two_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let trace = dir.path().join("trace.csv");
    let fx = fixture("combined.json");
    let output = run(&[
        "solve",
        fx.to_str().unwrap(),
        "--eps",
        "1e-12",
        "--max-iter",
        "10",
        "--out",
        out.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(read_report(&out).termination, "IterLimit");
    let rows = read_trace_csv(std::fs::File::open(&trace).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows[9].vi_residual.is_some());
}

#[test]
fn trace_csv_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let trace = dir.path().join("trace.csv");
    let fx = fixture("combined.json");
    let output = run(&[
        "solve",
        fx.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = read_report(&out);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("k,step_residual,vi_residual,f_value\n"));
    assert!(!text.contains('\r'));
    let rows = read_trace_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), report.iterations);
    assert!(rows.last().unwrap().step_residual < 1e-4);

    // p¹ = 7; q¹ = 7 because the gradient vanishes at the anchor;
    // T(7) = 7 − (S(7) − D(7)) = 7 − (3.5 − 2) = 5.5.
    let lambda = 1.0 / 2f64.sqrt();
    let p2: f64 = lambda * 7.0 + (1.0 - lambda) * 5.5;
    let literal = (p2 - 7.0).abs() / p2.abs().max(1.0);
    assert!((rows[0].step_residual - literal).abs() <= 1e-15);
    assert_eq!(rows[0].k, 1);
}

#[test]
fn trace_command_writes_csv_only() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let fx = fixture("box2.json");
    let output = run(&[
        "trace",
        fx.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--trace-every",
        "1",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let rows = read_trace_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.vi_residual.is_some()));
    assert!(rows.last().unwrap().step_residual < 1e-4);
}

fn bench(dir: &Path, name: &str, extra: &[&str]) -> (Option<i32>, String) {
    let csv = dir.join(name);
    let mut args = vec!["bench", "--csv", csv.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = run(&args);
    (
        output.status.code(),
        std::fs::read_to_string(&csv).unwrap_or_default(),
    )
}

#[test]
fn bench_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--n", "5,6", "--m", "3,4", "--trials", "3", "--seed", "7"];
    let (code_a, a) = bench(dir.path(), "a.csv", &flags);
    let (code_b, b) = bench(dir.path(), "b.csv", &[&flags[..], &["--parallel"]].concat());
    assert_eq!(code_a, Some(0));
    assert_eq!(code_b, Some(0));
    assert!(a.starts_with("n,m,avg_time_s,avg_iterations,trials\n"));
    let rows_a = read_bench_csv(a.as_bytes()).unwrap();
    let rows_b = read_bench_csv(b.as_bytes()).unwrap();
    assert_eq!(rows_a.len(), 2);
    let iters = |rows: &[BenchCsvRow]| rows.iter().map(|r| r.3.to_bits()).collect::<Vec<_>>();
    assert_eq!(iters(&rows_a), iters(&rows_b));
    assert_eq!((rows_a[1].0, rows_a[1].1, rows_a[1].4), (6, 4, 3));
    assert!(dir.path().join("a.csv.meta.json").exists());
}

#[test]
fn bench_rejects_unequal_lists() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = bench(dir.path(), "x.csv", &["--n", "5,10", "--m", "3"]);
    assert_eq!(code, Some(1));
}

#[test]
fn bench_small_instances_iteration_band() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = bench(
        dir.path(),
        "t.csv",
        &["--n", "5", "--m", "3", "--trials", "10", "--seed", "42"],
    );
    assert_eq!(code, Some(0));
    let rows = read_bench_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 1);
    let avg = rows[0].3;
    assert!((20.0..=900.0).contains(&avg), "average iterations {avg}");
}

#[test]
fn generate_writes_a_loadable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    let output = run(&[
        "generate",
        "--n",
        "4",
        "--m",
        "2",
        "--domain",
        "box",
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let inst = equiprice::harness::load_instance(&path).unwrap();
    assert_eq!((inst.n(), inst.m()), (4, 2));
}
