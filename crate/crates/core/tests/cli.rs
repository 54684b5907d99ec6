use std::process::Command;

use lidg::cli::dispatch;

fn run(args: &[&str]) -> (i32, String, String) {
    let argv = std::iter::once("lidg").chain(args.iter().copied()).map(String::from).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = dispatch(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn field(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .to_string()
}

#[test]
fn run_reports_error_and_exits_zero() {
    let (code, out, _) = run(&["run", "--problem", "advection1d", "--order", "2", "--elements", "32"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("problem=advection1d scheme=lidg p=2 elements=32"));
    let err: f64 = field(&out, "rel_l2").parse().unwrap();
    assert!(err > 0.0 && err < 1e-2, "{err}");
}

#[test]
fn usage_errors_exit_two() {
    let (code, _, err) = run(&["run", "--no-such-flag"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
    assert_eq!(run(&["run", "--order", "two"]).0, 2);
    assert_eq!(run(&[]).0, 2);
}

#[test]
fn help_goes_to_stdout() {
    let (code, out, err) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("stability-norm"));
    assert!(err.is_empty());
}

#[test]
fn runtime_errors_exit_one() {
    // Burgers past the shock time is rejected before stepping.
    let (code, _, err) = run(&["run", "--problem", "burgers2d", "--tfinal", "3", "--elements", "4"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"), "{err}");
    let (code, _, _) = run(&["vonneumann", "--cfl-min", "1", "--cfl-max", "0.5"]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["stability-norm", "--cfl-list=-0.5"]);
    assert_eq!(code, 1);
}

#[test]
fn stability_norm_csv() {
    let (code, out, _) = run(&["stability-norm", "--max-order", "2", "--cfl-list", "0.5,1.0", "--with-radius"]);
    assert_eq!(code, 0);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(rdr.headers().unwrap(), vec!["p", "nu", "norm_w", "norm_2", "spectral_radius"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        let nu: f64 = r[1].parse().unwrap();
        let norm_w: f64 = r[2].parse().unwrap();
        // sqrt(nu) |A|_w <= 1 on the stable range.
        assert!(nu.sqrt() * norm_w <= 1.0 + 1e-8, "{r:?}");
        let rho: f64 = r[4].parse().unwrap();
        assert!(rho <= 1.0 + 1e-9, "{r:?}");
    }
}

#[test]
fn converge_writes_csv_file_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let (code, out, err) = run(&[
            "converge", "--problem", "advection1d", "--order", "2", "--sizes", "16,32", "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.is_empty());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,h,rel_l2,rate");
    assert!(lines[1].ends_with(','), "first rate is empty: {}", lines[1]);
    let rate: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!(rate > 2.0, "{rate}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\nproblem=advection1d\norder=1\nelements=8\nhigh_frequency=false\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let (code, out, err) = run(&["--config", cfg, "run"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("p=1 elements=8"), "{out}");
    let (code, out, _) = run(&["run", "--config", cfg, "--order", "3"]);
    assert_eq!(code, 0);
    assert!(out.contains("p=3 elements=8"), "{out}");
}

#[test]
fn bad_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "order 3\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "run"]).0, 1);
    let missing = dir.path().join("missing.cfg");
    assert_eq!(run(&["--config", missing.to_str().unwrap(), "run"]).0, 1);
}

#[test]
fn max_cfl_matches_library() {
    let (code, out, _) = run(&["max-cfl", "--scheme", "lidg", "--order", "1", "--samples", "40"]);
    assert_eq!(code, 0);
    let expect = lidg::stability::max_stable_cfl(lidg::scheme::SchemeChoice::Lidg, 1, 1, 40, 0.01).unwrap();
    let line = out.lines().nth(1).unwrap();
    assert_eq!(line, format!("lidg,1,1,{}", lidg::harness::fmt_real(expect)));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_lidg");
    let ok = Command::new(bin)
        .args(["stability-norm", "--max-order", "0", "--cfl-list", "0.5"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("p,nu,norm_w,norm_2"));
    let bad = Command::new(bin).arg("bogus").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
