use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nonresp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonresp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Simulated survey written to `<tmp>/sim`.
fn simulated(tmp: &TempDir) -> PathBuf {
    let dir = tmp.path().join("sim");
    let out = nonresp(&["simulate", "--seed", "7", "--out", p(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn simulate_writes_expected_files() {
    let tmp = TempDir::new().unwrap();
    let dir = simulated(&tmp);
    for f in ["data.csv", "complete.csv", "schema.toml", "truth.toml", "config.toml", "manifest.toml"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn missing_schema_is_a_validation_error_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let out = tmp.path().join("fit");
    let res = nonresp(&[
        "fit",
        "--data",
        p(&sim.join("data.csv")),
        "--schema",
        p(&tmp.path().join("absent.toml")),
        "--method",
        "cca",
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error["));
    assert!(!out.exists());
}

#[test]
fn imputation_without_seed_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let out = tmp.path().join("fit");
    let res = nonresp(&[
        "fit",
        "--data",
        p(&sim.join("data.csv")),
        "--schema",
        p(&sim.join("schema.toml")),
        "--method",
        "fi-mi",
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(nonresp(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(nonresp(&["fit", "--method", "ols"]).status.code(), Some(1));
    assert_eq!(nonresp(&["--help"]).status.code(), Some(0));
    assert_eq!(nonresp(&["--version"]).status.code(), Some(0));
}

#[test]
fn too_few_replications_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("mc");
    let res = nonresp(&["montecarlo", "--replications", "3", "--seed", "1", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("replications"));
    let res = nonresp(&["montecarlo", "--replications", "50", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn degenerate_estimation_exits_two() {
    // every row has the focus regressor missing, so no complete cases remain
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let text = fs::read_to_string(sim.join("data.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let focus = header.split(',').position(|h| h == "iw_err_high").unwrap();
    let mut masked = format!("{header}\n");
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        cells[focus] = "NA";
        masked.push_str(&cells.join(","));
        masked.push('\n');
    }
    let data = tmp.path().join("masked.csv");
    fs::write(&data, masked).unwrap();
    let out = tmp.path().join("fit");
    let res = nonresp(&[
        "fit",
        "--data",
        p(&data),
        "--schema",
        p(&sim.join("schema.toml")),
        "--method",
        "cca",
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

#[test]
fn cca_and_fill_in_agree_without_missing_covariates() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let out = tmp.path().join("fit");
    let res = nonresp(&[
        "fit",
        "--data",
        p(&sim.join("complete.csv")),
        "--schema",
        p(&sim.join("schema.toml")),
        "--method",
        "cca",
        "--method",
        "fi-mi",
        "--m",
        "2",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out.join("estimates.csv"));
    assert_eq!(rows.len(), 2);
    for key in ["n", "coefficient", "coefficient_se", "ame", "ame_se"] {
        let a: f64 = rows[0][key].parse().unwrap();
        let b: f64 = rows[1][key].parse().unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{key}: {a} vs {b}");
    }
}

#[test]
fn fit_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let res = nonresp(&[
            "fit",
            "--data",
            p(&sim.join("data.csv")),
            "--schema",
            p(&sim.join("schema.toml")),
            "--method",
            "fi-mi",
            "--method",
            "bbma-bic",
            "--m",
            "3",
            "--seed",
            "11",
            "--out",
            p(&out),
        ]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        read_tree(&out)
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn by_country_ame_table_lists_each_country() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let out = tmp.path().join("ame");
    let res = nonresp(&[
        "ame",
        "--data",
        p(&sim.join("data.csv")),
        "--schema",
        p(&sim.join("schema.toml")),
        "--method",
        "cca",
        "--by-country",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("ame_table.txt")).unwrap();
    let es = text.find("\nES ").expect("ES row");
    let it = text.find("\nIT ").expect("IT row");
    assert!(es < it);
    assert_eq!(csv_rows(&out.join("ame_table.csv")).len(), 2);
}

#[test]
fn report_writes_rates_and_histogram() {
    let tmp = TempDir::new().unwrap();
    let sim = simulated(&tmp);
    let out = tmp.path().join("report");
    let res = nonresp(&[
        "report",
        "--data",
        p(&sim.join("data.csv")),
        "--schema",
        p(&sim.join("schema.toml")),
        "--expectation",
        "iw_err",
        "--out",
        p(&out),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let part = csv_rows(&out.join("participation.csv"));
    assert_eq!(part.last().unwrap()["country"], "Total");
    let hist = csv_rows(&out.join("histogram.csv"));
    let counted: usize = hist.iter().map(|r| r["count"].parse::<usize>().unwrap()).sum();
    let total: usize = part.last().unwrap()["obs"].parse().unwrap();
    // iw_err and the focus share the interviewer-survey mask
    assert_eq!(counted, total);
}
