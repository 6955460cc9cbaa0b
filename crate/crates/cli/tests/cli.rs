use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn benignlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_benignlab")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    benignlab(&args)
}

#[test]
fn reruns_write_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = code(&run_into(a.path(), &["--iters", "20"]));
    let cb = code(&run_into(b.path(), &["--iters", "20"]));
    assert_eq!(ca, cb);
    let mut compared = 0;
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if name.to_string_lossy().ends_with(".csv") {
            assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
            compared += 1;
        }
    }
    assert!(compared >= 8);
}

#[test]
fn zero_iterations_is_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--iters", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let lines: Vec<&str> = run.lines().collect();
    assert_eq!(lines.len(), 2);
    let loss: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((loss - 2f64.ln()).abs() < 0.01, "{loss}");
    assert_eq!(code(&benignlab(&["check", dir.path().to_str().unwrap()])), 0);
}

#[test]
fn fresh_reference_run_checks_clean() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &[]);
    let out = benignlab(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn tampered_coefficients_fail_check() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["--iters", "10"]);
    let path = dir.path().join("coeff_entries.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let k = lines
        .iter()
        .rposition(|l| l.split(',').nth(4).and_then(|z| z.parse::<f64>().ok()).is_some_and(|z| z > 0.0))
        .unwrap();
    let mut f: Vec<String> = lines[k].split(',').map(str::to_owned).collect();
    f[4] = "0.0".into();
    lines[k] = f.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = benignlab(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("FAIL zeta_nondecreasing"), "{}", stderr(&out));
    assert!(stderr(&out).contains("at t=10"));
}

#[test]
fn empty_directory_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = benignlab(&["check", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    let err = stderr(&out);
    for f in ["config.txt", "run.csv", "coeffs.csv", "activations.csv"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn usage_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--d", "ten"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("configuration: d:"), "{}", stderr(&out));
    assert_eq!(code(&run_into(dir.path(), &["--p", "0.5"])), 1);
    assert_eq!(code(&benignlab(&["run", "--bogus", "1"])), 1);
    assert_eq!(code(&benignlab(&[])), 1);
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "d=100\nlearning-rate=0.1\n").unwrap();
    let out = benignlab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learning-rate"));
    assert_eq!(code(&benignlab(&["--help"])), 0);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "# small run\nd=50\niters=5\nmu=2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = benignlab(&["run", "--config", cfg.to_str().unwrap(), "--iters", "3", "--out", out_dir.to_str().unwrap()]);
    assert!(code(&out) == 0 || code(&out) == 3, "{}", stderr(&out));
    let echo = fs::read_to_string(out_dir.join("config.txt")).unwrap();
    assert!(echo.contains("d=50\n") && echo.contains("iters=3\n") && echo.contains("mu=2\n"));
}

#[test]
fn sweep_writes_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = benignlab(&[
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--d-values",
        "100,400",
        "--mu-values",
        "1,5",
        "--replications",
        "2",
        "--iters",
        "50",
        "--workers",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let heat = fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    let mut lines = heat.lines();
    assert_eq!(lines.next(), Some("d,mu,mean_error,std_error,mean_final_loss,phase_quantity"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 4);
    let cut = fs::read_to_string(dir.path().join("heatmap_cut.csv")).unwrap();
    for (row, c) in rows.iter().zip(cut.lines().skip(1)) {
        let e: f64 = row[2].parse().unwrap();
        let bit = c.rsplit(',').next().unwrap();
        assert_eq!(bit, if e > 0.2 { "1" } else { "0" });
    }
}
