use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bilift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn lift_info_reports_dimensions() {
    let o = bilift(&["lift-info", "3", "4"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("q = 6\n") && s.contains("kernel_dim = 6\n") && s.contains("rank2_dof = 4\n"), "{s}");

    let s = stdout(&bilift(&["lift-info", "2", "2"]));
    assert!(s.contains("q = 3\n") && s.contains("kernel_dim = 1\n") && s.contains("rank2_dof = 1\n"), "{s}");

    let s = stdout(&bilift(&["lift-info", "1", "1"]));
    assert!(s.contains("q = 1\n") && s.contains("kernel_dim = 0\n"), "{s}");

    assert_eq!(bilift(&["lift-info", "0", "3"]).status.code(), Some(2));
}

#[test]
fn intro_pairs_witness_ambiguity() {
    let dir = TempDir::new().unwrap();
    let a = write(dir.path(), "a.txt", "7 11\n1 0 0 0 1 0 0\n1 0 1 0 0 0 0 0 1 0 1\n");
    let b = write(dir.path(), "b.txt", "7 11\n1 0 1 0 1 0 1\n1 0 0 0 0 0 0 0 1 0 0\n");
    let o = bilift(&["check", &a, "--alt", &b]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    let s = stdout(&o);
    assert!(s.contains("lifted difference rank: 2"), "{s}");
    assert!(s.contains("not identifiable"), "{s}");

    // a rescaling is the same solution, not an ambiguity
    let c = write(dir.path(), "c.txt", "7 11\n2 0 0 0 2 0 0\n0.5 0 0.5 0 0 0 0 0 0.5 0 0.5\n");
    assert_eq!(bilift(&["check", &a, "--alt", &c]).status.code(), Some(4));
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let clear = write(dir.path(), "clear.txt", "9 9\n0 2 0 0 0 0 0 0 0\n0 0 0 0 0 0 -1 0 0\n");
    let caught = write(dir.path(), "caught.txt", "9 9\n0 2 0 0 0 0 0 0 0\n0 0 1 0 0 0 0 0 0\n");
    assert_eq!(bilift(&["check", &clear, "--family", "empty"]).status.code(), Some(0));
    assert_eq!(bilift(&["check", &clear, "--family", "biorthogonal"]).status.code(), Some(0));
    let o = bilift(&["check", &caught, "--family", "biorthogonal"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("witness part: (1, 2)"));
    assert_eq!(bilift(&["check", &caught, "--family", "convolution"]).status.code(), Some(4));

    let bad = write(dir.path(), "bad.txt", "9 9\n1 2 3\n");
    assert_eq!(bilift(&["check", &bad]).status.code(), Some(2));
    assert_eq!(bilift(&["check", "/nonexistent/pair.txt"]).status.code(), Some(2));
}

#[test]
fn check_with_solver_search() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "p.txt", "3 4\n1 -0.5 0.25\n0.5 1 -1 0.3\n");
    let o = bilift(&["check", &p, "--family", "convolution", "--mu", "1e-6"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("no kernel matrix within mu"));
}

#[test]
fn bounds_table() {
    let o = bilift(&["bounds", "20", "30", "--delta", "0.5", "--curve"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["lemma1_column", "lemma4_row", "theorem3", "theorem5"] {
        assert!(s.contains(name), "{s}");
    }
    assert!(s.contains("n,failure_bound,log_failure_bound\n20,"), "{s}");
}

const EXAMPLE_A: &str = "schema_version = 1
example = \"A\"
m_values = [16, 25]
n_values = [16, 36, 64]
trials_per_cell = 2000
master_seed = 99
";

#[test]
fn run_writes_deterministic_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", EXAMPLE_A);
    let out1 = dir.path().join("one.csv");
    let out2 = dir.path().join("two.csv");
    let o = bilift(&["run", &cfg, "-o", out1.to_str().unwrap(), "--workers", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("m=16 mode=loglog slope="));
    let o = bilift(&["run", &cfg, "-o", out2.to_str().unwrap(), "--workers", "4"]);
    assert!(o.status.success());
    let (a, b) = (fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    assert_eq!(a, b);

    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("example,m,n,trials,failures,failure_rate,stderr"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (m, n): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        let exact = (m.sqrt().floor() + 1.0) * (n.sqrt().floor() + 1.0) / (m * n);
        let rate: f64 = f[5].parse().unwrap();
        assert!((rate - exact).abs() <= 4.0 * (exact * (1.0 - exact) / 2000.0).sqrt(), "{line}");
    }

    let o = bilift(&["fit", out1.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn run_config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = write(dir.path(), "missing.toml", &EXAMPLE_A.replace("master_seed = 99\n", ""));
    let o = bilift(&["run", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("master_seed"));

    let unknown = write(dir.path(), "unknown.toml", &format!("{EXAMPLE_A}colour = \"red\"\n"));
    assert_eq!(bilift(&["run", &unknown]).status.code(), Some(2));

    let cfg = write(dir.path(), "a.toml", EXAMPLE_A);
    assert_eq!(bilift(&["run", &cfg, "--set", "trials_per_cell=10"]).status.code(), Some(2));
    assert_eq!(bilift(&["run", &cfg, "--set", "solver.bogus=1"]).status.code(), Some(2));
    assert_eq!(bilift(&["run", &cfg, "--set", "schema_version=2"]).status.code(), Some(2));
    assert_eq!(bilift(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn run_overrides_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", EXAMPLE_A);
    let o = bilift(&["run", &cfg, "--set", "m_values=[16]", "--set", "n_values=[16]", "--set", "trials_per_cell=100"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 2, "{s}");
    assert!(s.lines().nth(1).unwrap().starts_with("A,16,16,100,"));
}

#[test]
fn fit_rejects_bad_csv() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "bad.csv", "a,b\n1,2\n");
    assert_eq!(bilift(&["fit", &p]).status.code(), Some(2));
    let p = write(
        dir.path(),
        "short.csv",
        "example,m,n,trials,failures,failure_rate,stderr\nA,4,4,100,10,0.1,0.03\n",
    );
    assert_eq!(bilift(&["fit", &p]).status.code(), Some(1));
}
