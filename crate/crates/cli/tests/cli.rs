//! End-to-end tests of the `taugas` binary: exit-status contract, file
//! schemas, determinism, and config handling.

use std::path::Path;
use std::process::{Command, Output};

fn taugas() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taugas"))
}

/// Run the binary with `--out dir` appended.
fn run_in(dir: &Path, args: &[&str]) -> Output {
    taugas()
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .expect("spawn taugas")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("signal-free exit")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Parse a CSV file into (header, data rows).
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path)
        .unwrap_or_else(|e| panic!("opening {}: {e}", path.display()));
    let header = reader
        .headers()
        .unwrap()
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .map(|record| record.unwrap().iter().map(str::to_owned).collect())
        .collect();
    (header, rows)
}

fn toml_value(path: &Path) -> toml::Value {
    read(path)
        .parse::<toml::Value>()
        .unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

fn column(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("column {name} missing from {header:?}"))
}

/// Every CSV carries a schema_version column stamped on each row.
fn assert_schema_column(header: &[String], rows: &[Vec<String>]) {
    assert_eq!(header[0], "schema_version");
    for row in rows {
        assert_eq!(row.len(), header.len(), "ragged row {row:?}");
        assert_eq!(row[0], "1");
    }
}

#[test]
fn verify_toda_chain_meets_pinned_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(
        dir.path(),
        &["verify", "--suite", "toda-chain", "--n", "6", "--seed", "7"],
    );
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let (header, rows) = csv_rows(&dir.path().join("verify_checks.csv"));
    assert_schema_column(&header, &rows);
    assert_eq!(rows.len(), 7, "one check per lattice point 0..=6");
    let relative = column(&header, "relative");
    let status = column(&header, "status");
    for row in &rows {
        assert_eq!(row[status], "PASS");
        let value: f64 = row[relative].parse().unwrap();
        assert!(value <= 1e-10, "relative residual {value} above 1e-10");
    }

    let report = toml_value(&dir.path().join("verify_report.toml"));
    assert_eq!(report["schema_version"].as_integer(), Some(1));
    assert_eq!(report["checks_failed"].as_integer(), Some(0));
    assert_eq!(report["status"].as_str(), Some("PASS"));
}

#[test]
fn limit_study_deviation_shrinks_linearly_with_radius() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(
        dir.path(),
        &["limit-study", "--r", "1e-2,1e-3,1e-4", "--deterministic"],
    );
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let (header, rows) = csv_rows(&dir.path().join("limit_deviation.csv"));
    assert_schema_column(&header, &rows);
    assert_eq!(rows.len(), 3, "one row per requested radius");
    let deviation = column(&header, "deviation");
    let deviations: Vec<f64> = rows.iter().map(|r| r[deviation].parse().unwrap()).collect();
    for pair in deviations.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(
            (0.03..0.35).contains(&ratio),
            "deviation ratio {ratio} not close to the 0.1 radius ratio"
        );
    }

    let (header, rows) = csv_rows(&dir.path().join("limit_sectors.csv"));
    assert_schema_column(&header, &rows);
    assert!(!rows.is_empty());

    let report = toml_value(&dir.path().join("limit_study_report.toml"));
    let order = report["order"].as_float().unwrap();
    assert!((0.7..1.3).contains(&order), "deviation order {order}");
}

#[test]
fn lattice_point_beyond_chain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    std::fs::write(
        &config,
        "schema_version = 1\ncommand = \"nmm\"\n\n[params]\nn = 6\nm = 9\n",
    )
    .unwrap();

    let output = run_in(dir.path(), &["run", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 1);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("RangeError"), "stderr: {stderr}");
    assert!(stderr.contains("m = 9"), "stderr: {stderr}");

    let direct = run_in(dir.path(), &["nmm", "--n", "6", "--m", "9"]);
    assert_eq!(exit_code(&direct), 1);
    assert!(stderr_of(&direct).contains("RangeError"));
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let args = &["gas", "--n", "5", "--seed", "9", "--deterministic"];
    assert_eq!(exit_code(&run_in(first.path(), args)), 0);
    assert_eq!(exit_code(&run_in(second.path(), args)), 0);

    for name in ["gas_sectors.csv", "gas_report.toml"] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between deterministic reruns");
    }
    // Deterministic output carries no timestamp; the default output does.
    assert!(!read(&first.path().join("gas_report.toml")).contains("timestamp"));
    let timed = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&run_in(timed.path(), &["gas", "--n", "5", "--seed", "9"])), 0);
    assert!(read(&timed.path().join("gas_report.toml")).contains("timestamp_unix_s"));
}

#[test]
fn emitted_files_reparse_under_the_same_schema() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["tau", "--hierarchy", "toda", "--n", "4", "--seed", "5"],
        vec!["gas", "--n", "4", "--seed", "5"],
        vec!["observables", "--n", "4", "--seed", "5"],
        vec!["correspond", "--n", "4", "--seed", "5"],
        vec!["nmm", "--n", "4", "--seed", "5"],
        vec!["verify", "--suite", "toda-chain", "--n", "4", "--seed", "5"],
    ] {
        let output = run_in(dir.path(), &args);
        assert_eq!(
            exit_code(&output),
            0,
            "{args:?} failed: {}",
            stderr_of(&output)
        );
    }

    let mut csv_files = 0;
    let mut toml_files = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                let (header, rows) = csv_rows(&path);
                assert_schema_column(&header, &rows);
                assert!(!rows.is_empty(), "{} is empty", path.display());
                csv_files += 1;
            }
            Some("toml") => {
                let value = toml_value(&path);
                assert_eq!(
                    value["schema_version"].as_integer(),
                    Some(1),
                    "{} schema version",
                    path.display()
                );
                toml_files += 1;
            }
            _ => {}
        }
    }
    assert_eq!(csv_files, 6, "one table per command");
    assert_eq!(toml_files, 6, "one report per command");
}

#[test]
fn failing_verification_exits_two_with_failing_checks() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(
        dir.path(),
        &["verify", "--suite", "toda-chain", "--n", "4", "--tol", "0"],
    );
    assert_eq!(exit_code(&output), 2);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("VerificationError"), "stderr: {stderr}");
    assert!(stderr.contains("[[error.failing_checks]]"), "stderr: {stderr}");

    // The report is still written, with the failing rows inside it.
    let report = toml_value(&dir.path().join("verify_report.toml"));
    assert_eq!(report["status"].as_str(), Some("FAIL"));
    assert!(report["checks_failed"].as_integer().unwrap() > 0);
    assert!(report.get("failing_checks").is_some());
}

#[test]
fn config_lattices_load_inline_and_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sites = ["0.3+0.8i", "-0.5+1.1i", "0.9+0.6i", "-0.2+1.4i"];

    let inline = dir.path().join("inline.toml");
    std::fs::write(
        &inline,
        format!(
            "schema_version = 1\ncommand = \"gas\"\nseed = 3\n\n[lattice]\nsites = [{}]\n",
            sites
                .iter()
                .map(|s| format!("\"{s}\""))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
    .unwrap();
    let out_inline = tempfile::tempdir().unwrap();
    let output = run_in(
        out_inline.path(),
        &["run", "--config", inline.to_str().unwrap()],
    );
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let report = toml_value(&out_inline.path().join("gas_report.toml"));
    assert_eq!(report["n"].as_integer(), Some(4));

    // The CSV form must resolve relative to the config file's directory,
    // not the working directory.
    let lattice_csv = dir.path().join("lattice.csv");
    let mut body = String::from("x,y\n");
    for site in [(0.3, 0.8), (-0.5, 1.1), (0.9, 0.6), (-0.2, 1.4)] {
        body.push_str(&format!("{},{}\n", site.0, site.1));
    }
    std::fs::write(&lattice_csv, body).unwrap();
    let by_csv = dir.path().join("by_csv.toml");
    std::fs::write(
        &by_csv,
        "schema_version = 1\ncommand = \"gas\"\nseed = 3\n\n[lattice]\nsites_csv = \"lattice.csv\"\n",
    )
    .unwrap();
    let out_csv = tempfile::tempdir().unwrap();
    let output = run_in(out_csv.path(), &["run", "--config", by_csv.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    // Identical lattice and seed give identical physics either way.
    let a = toml_value(&out_inline.path().join("gas_report.toml"));
    let b = toml_value(&out_csv.path().join("gas_report.toml"));
    assert_eq!(a["grand_log_magnitude"].as_float(), b["grand_log_magnitude"].as_float());
    assert_eq!(a["sites"].as_array(), b["sites"].as_array());
}

#[test]
fn worker_count_comes_from_flag_or_environment() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["tau", "--n", "4", "--workers", "2"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let output = taugas()
        .args(["tau", "--n", "4", "--out", dir.path().to_str().unwrap()])
        .env("TAUGAS_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));

    let output = run_in(dir.path(), &["tau", "--n", "4", "--workers", "0"]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("InputError"));

    let output = taugas()
        .args(["tau", "--n", "4", "--out", dir.path().to_str().unwrap()])
        .env("TAUGAS_WORKERS", "plenty")
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("InputError"));
}

#[test]
fn bad_flags_and_geometries_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), &["gas", "--geometry", "nowhere"]);
    assert_eq!(exit_code(&output), 1);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("InputError"), "stderr: {stderr}");
    assert!(stderr.contains("unknown geometry"), "stderr: {stderr}");

    // Usage errors from the flag parser share the validation exit status;
    // status 2 stays reserved for verification failures.
    let output = run_in(dir.path(), &["tau", "--n", "not-a-number"]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("UsageError"));

    let output = taugas().arg("--help").output().unwrap();
    assert_eq!(exit_code(&output), 0);
}

#[test]
fn config_command_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, "schema_version = 1\ncommand = \"gas\"\n").unwrap();

    let output = run_in(dir.path(), &["nmm", "--config", config.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 1);
    let stderr = stderr_of(&output);
    assert!(stderr.contains("ConfigError"), "stderr: {stderr}");

    // `run` without any config has no command to dispatch.
    let output = run_in(dir.path(), &["run"]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("ConfigError"));

    // An unknown schema version is rejected up front.
    let future = dir.path().join("future.toml");
    std::fs::write(&future, "schema_version = 99\ncommand = \"gas\"\n").unwrap();
    let output = run_in(dir.path(), &["run", "--config", future.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("ConfigError"));
}
