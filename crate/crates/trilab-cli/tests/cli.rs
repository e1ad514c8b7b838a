use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trilab::waves::read_wave_text;

fn trilab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trilab")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn records(path: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().clone();
    let rows = reader.records().map(Result::unwrap).collect();
    (header, rows)
}

fn summary(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn threshold_prints_the_exponent() {
    let out = trilab(&["threshold", "--n", "3", "--k", "3"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "14/15\n");
}

#[test]
fn configuration_errors_exit_one() {
    let out = trilab(&[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing subcommand"));
    assert_eq!(code(&trilab(&["threshold", "--k", "9"])), 1);
    assert_eq!(code(&trilab(&["threshold", "--set", "bogus=1"])), 1);
    assert_eq!(code(&trilab(&["threshold", "--no-such-flag"])), 1);
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = trilab(&["threshold", "--output", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

#[test]
fn failed_invariant_exits_two() {
    let out = trilab(&["geometry", "check", "--surface", "degenerate-cone", "--samples", "50"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("check failed: transversal"));
    assert_eq!(code(&trilab(&["geometry", "check", "--samples", "50"])), 0);
}

#[test]
fn counterexample_run_emits_rows_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let out = trilab(&["counterexample", "run", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&dir.path().join("counterexample-run.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(&header[3], "epsilon");
    assert_eq!(&header[9], "norm_p0.8");
    for row in &rows {
        assert_eq!(row.len(), header.len());
        // Parameters on every row, and full-precision numbers.
        assert_eq!((&row[0], &row[1]), ("3", "3"));
        let eps: f64 = row[3].parse().unwrap();
        assert!([0.25, 0.125, 0.0625].contains(&eps));
    }
    let json = summary(&dir.path().join("counterexample-run.json"));
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["seed"], 1);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(json["results"]["fits"].as_array().unwrap().len(), 3);
    assert_eq!(json["results"]["threshold_exponent"], "14/15");
    let slope = json["results"]["fits"][1]["normalized"]["slope"].as_f64().unwrap();
    assert!(slope.abs() < 0.3, "{slope}");
}

#[test]
fn csv_numbers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&trilab(&["threshold", "--n", "3", "--k", "3", "--output", dir.path().to_str().unwrap()])), 0);
    let (_, rows) = records(&dir.path().join("threshold.csv"));
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 14.0 / 15.0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |dir: &Path, threads: &str| {
        vec![
            "packets".to_string(),
            "census".into(),
            "--scales".into(),
            "16".into(),
            "--seed".into(),
            "5".into(),
            "--threads".into(),
            threads.into(),
            "--output".into(),
            dir.to_str().unwrap().into(),
        ]
    };
    let run = |dir: &Path, threads: &str| {
        let v = args(dir, threads);
        code(&trilab(&v.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    assert_eq!(run(a.path(), "1"), 0);
    assert_eq!(run(b.path(), "2"), 0);
    for name in ["packets-census.csv", "packets-census.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, "subcommand = recursion iterate\nexponents = 0.9, 0.95\nseed = 3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = trilab(&[
        "--config",
        config.to_str().unwrap(),
        "--exponents",
        "0.9,0.95,1.1",
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&out_dir.join("recursion-iterate.csv"));
    assert_eq!(rows.len(), 3);
    let class = header.iter().position(|h| h == "classification").unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| &r[class]).collect();
    assert_eq!(labels, vec!["divergent", "bounded", "bounded"]);
    assert_eq!(summary(&out_dir.join("recursion-iterate.json"))["seed"], 3);
}

#[test]
fn packets_decompose_caps_tube_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = trilab(&["packets", "decompose", "--max-tubes", "2", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(dir.path().join("tubes")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 2);
    for f in &files {
        let (grid, amps) = read_wave_text(&fs::read_to_string(f).unwrap()).unwrap();
        assert_eq!(grid.len(), amps.len());
    }
    let json = summary(&dir.path().join("packets-decompose.json"));
    let tubes = json["results"]["manifest"]["tubes"].as_array().unwrap().len();
    let (_, rows) = records(&dir.path().join("packets-decompose.csv"));
    assert_eq!(rows.len(), tubes);
    assert!(json["results"]["reconstruction_error"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn extend_reads_a_wave_file() {
    let dir = tempfile::tempdir().unwrap();
    let wave = dir.path().join("wave.txt");
    fs::write(&wave, "lo 0.9 -0.1 -0.1\nhi 1.1 0.1 0.1\nres 1 1 1\n1 0\n").unwrap();
    let out = trilab(&[
        "extend",
        "--input",
        wave.to_str().unwrap(),
        "--scales",
        "1",
        "--sample-resolution",
        "2",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&dir.path().join("extend.csv"));
    assert_eq!(rows.len(), 16);
    let modulus = header.iter().position(|h| h == "modulus").unwrap();
    // One node: the modulus is the node weight everywhere.
    let first: f64 = rows[0][modulus].parse().unwrap();
    assert!(rows.iter().all(|r| (r[modulus].parse::<f64>().unwrap() - first).abs() < 1e-15));
    assert!((first - 0.008).abs() < 1e-12);
}

#[test]
fn table_build_writes_coefficient_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let out = trilab(&["table", "build", "--scales", "16", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&dir.path().join("table-build.csv"));
    assert_eq!(header.len(), 5 + 16);
    for row in &rows {
        let sum: f64 = (5..header.len()).map(|i| row[i].parse::<f64>().unwrap()).sum();
        assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12);
    }
}
