use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcutfem")).current_dir(dir).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

const QUICK: [&str; 6] = ["--h", "0.2,0.1", "--T", "0.05", "--problem", "moving_circle"];

#[test]
fn convergence_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["convergence", "--csv", "a.csv", "--plot", "a.dat"];
    args.extend(QUICK);
    assert!(run(dir.path(), &args).status.success());
    args[2] = "b.csv";
    args[4] = "b.dat";
    assert!(run(dir.path(), &args).status.success());
    let a = read(&dir.path().join("a.csv"));
    assert_eq!(a, read(&dir.path().join("b.csv")));
    assert_eq!(read(&dir.path().join("a.dat")), read(&dir.path().join("b.dat")));
    let mut lines = a.lines();
    assert_eq!(lines.next().unwrap(), "h,dt,slab,t,err_l2_final,err_l2l2,e_c,nnz,cond,newton_iters");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 10 && r[8].is_empty() && r[9].is_empty()));
    // final error only on the last slab of each mesh size
    let with_final: Vec<&str> = rows.iter().filter(|r| !r[4].is_empty()).map(|r| r[0]).collect();
    assert_eq!(with_final, vec!["0.2", "0.1"]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "problem = \"moving_circle\"\nscheme = \"both\"\nh = [0.2]\nT = 0.05\n[stabilization]\nmode = \"full\"\n[output]\ncsv = \"run.csv\"\n",
    )
    .unwrap();
    let out = run(dir.path(), &["conservation", "--config", "exp.toml", "--cond"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for scheme in ["conservative", "nonconservative"] {
        let text = read(&dir.path().join(format!("run.{scheme}.csv")));
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert!(!row[8].is_empty(), "--cond fills the condition column");
        assert!(row[4].is_empty() && row[5].is_empty());
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["convergence", "--h", "0.1,0.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("h[1]"));
    std::fs::write(dir.path().join("bad.toml"), "[stabilization]\ndelta = 0.5\nsigma = 1.0\n").unwrap();
    let out = run(dir.path(), &["convergence", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_stcutfem"))
        .current_dir(dir.path())
        .env("STCUTFEM_THREADS", "many")
        .args(["quadrature-test", "--h", "0.1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // no element of the coarse mesh stays fully inside the circle
    let out = run(dir.path(), &["convergence", "--h", "0.2", "--T", "0.05", "--delta", "1.0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for (threads, name) in [("1", "one.csv"), ("2", "two.csv")] {
        let out = Command::new(env!("CARGO_BIN_EXE_stcutfem"))
            .current_dir(dir.path())
            .env("STCUTFEM_THREADS", threads)
            .args(["convergence", "--h", "0.1", "--T", "0.05", "--csv", name])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(read(&dir.path().join("one.csv")), read(&dir.path().join("two.csv")));
}

#[test]
fn tau_sweep_plot_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["tau-sweep", "--h", "0.2", "--T", "0.05", "--taus", "1,10", "--plot", "tau.dat", "--csv", "tau.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plot = read(&dir.path().join("tau.dat"));
    let data: Vec<&str> = plot.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).collect();
    assert_eq!(data.len(), 2);
    assert!(data.iter().all(|l| l.split_whitespace().count() == 5));
    for label in ["tau1.macro", "tau1.full", "tau10.macro", "tau10.full"] {
        assert!(dir.path().join(format!("tau.conservative.{label}.csv")).exists(), "{label}");
    }
}

#[test]
fn partition_dump_writes_elements_and_faces() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["partition-dump", "--h", "0.05", "--T", "0.1", "--csv", "part.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let elements = read(&dir.path().join("part.csv"));
    assert!(elements.starts_with("element,ix,iy,x_center,y_center,large,root"));
    let faces = read(&dir.path().join("part.faces.csv"));
    let macro_faces = faces.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    let full_faces = faces.lines().skip(1).filter(|l| l.split(',').nth(7) == Some("1")).count();
    assert!(macro_faces > 0 && macro_faces < full_faces);
    assert_eq!(run(dir.path(), &["partition-dump", "--h", "0.05"]).status.code(), Some(2));
}

#[test]
fn quadrature_test_reports_exact_area() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["quadrature-test", "--h", "0.05", "--Ns", "5", "--T", "0.1", "--plot", "q.dat"]);
    assert!(out.status.success());
    let plot = read(&dir.path().join("q.dat"));
    let row: Vec<f64> = plot.lines().find(|l| !l.starts_with('#')).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert!(row[2] <= 1e-10 && row[4] <= 1e-10, "{row:?}");
}
