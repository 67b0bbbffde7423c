//! End-to-end checks of the `pathint` binary: exit codes, output
//! files, and determinism across worker counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathint"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pathint-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, text).unwrap();
    path
}

fn run_to_completion(cmd: &mut Command) -> Output {
    cmd.output().expect("binary spawns")
}

const TINY_CARTPOLE: &str = "task = cartpole\n\
    sweep.nu = 1500\n\
    sweep.rollouts = 10, 20\n\
    sweep.seeds = 0..3\n\
    run.duration = 1\n\
    run.horizon = 0.2\n\
    mppi.lambda = 200\n\
    mppi.strict = false\n";

#[test]
fn run_emits_summary_logs_and_timing() {
    let dir = tmp_dir("run");
    let cfg = write_config(&dir, TINY_CARTPOLE);
    let out_dir = dir.join("out");
    let out = run_to_completion(bin().args([
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 3, "header plus one row per cell");
    assert_eq!(
        lines[0],
        "task,algorithm,nu,rollouts,seed,average_cost,completion_time,crashed,diverged"
    );
    assert!(lines[1].starts_with("cartpole,mppi,1500,10,0,"));

    // stdout carries the same table
    assert_eq!(String::from_utf8_lossy(&out.stdout), summary);

    assert!(out_dir.join("timing.csv").exists());
    let log = fs::read_to_string(out_dir.join("cartpole_mppi_nu1500_K10_seed0.csv")).unwrap();
    let header = log.lines().next().unwrap();
    assert_eq!(header, "t,p,theta,p_dot,theta_dot,u,running_cost");
    assert_eq!(log.lines().count(), 1 + 50, "header plus one row per step");
}

#[test]
fn summary_is_byte_identical_across_worker_counts() {
    let dir = tmp_dir("workers");
    let cfg = write_config(&dir, TINY_CARTPOLE);
    let mut outputs = Vec::new();
    for workers in ["1", "4", "8"] {
        let out_dir = dir.join(format!("w{workers}"));
        let out = run_to_completion(bin().args([
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--workers",
            workers,
        ]));
        assert!(out.status.success());
        outputs.push(fs::read(out_dir.join("summary.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn single_cell_rerun_matches_grid_row() {
    let dir = tmp_dir("cell");
    let grid_cfg = write_config(&dir, TINY_CARTPOLE);
    let grid = run_to_completion(bin().args(["run", "--config", grid_cfg.to_str().unwrap()]));
    assert!(grid.status.success());
    let grid_stdout = String::from_utf8(grid.stdout).unwrap();
    let row = grid_stdout
        .lines()
        .find(|l| l.starts_with("cartpole,mppi,1500,20,2,"))
        .expect("cell present in grid");

    let single_cfg = write_config(
        &dir.join("."),
        "task = cartpole\nsweep.nu = 1500\nsweep.rollouts = 20\nsweep.seeds = 2\n\
         run.duration = 1\nrun.horizon = 0.2\nmppi.lambda = 200\nmppi.strict = false\n",
    );
    let single = run_to_completion(bin().args(["run", "--config", single_cfg.to_str().unwrap()]));
    assert!(single.status.success());
    let single_stdout = String::from_utf8(single.stdout).unwrap();
    assert_eq!(single_stdout.lines().nth(1).unwrap(), row);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tmp_dir("usage");

    // unknown config key
    let bad_key = write_config(&dir, "task = cartpole\nmppi.lamda = 1\n");
    let out = run_to_completion(bin().args(["run", "--config", bad_key.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mppi.lamda"));

    // unknown task
    let bad_task = write_config(&dir.join("."), "task = walker\n");
    let out = run_to_completion(bin().args(["run", "--config", bad_task.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));

    // unknown subcommand / flag handled by clap
    let out = run_to_completion(bin().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(2));
    let out = run_to_completion(bin().args(["verify", "--suite", "nonsense"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_3() {
    let out = run_to_completion(bin().args(["run", "--config", "/nonexistent/exp.cfg"]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unwritable_out_dir_exits_3() {
    let dir = tmp_dir("badout");
    let cfg = write_config(&dir, TINY_CARTPOLE);
    let out = run_to_completion(bin().args([
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "/proc/definitely/not/writable",
    ]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_lq_suite_passes() {
    let out = run_to_completion(bin().args(["verify", "--suite", "lq"]));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("suite lq"));
    assert!(stdout.contains("pass"));
    // per-case error lines precede the summary
    assert!(stdout.lines().filter(|l| l.starts_with("case")).count() >= 50);
}

#[test]
fn forest_subcommand_writes_deterministic_json() {
    let dir = tmp_dir("forest");
    let a = dir.join("a.json");
    let b = dir.join("b.json");
    for path in [&a, &b] {
        let out = run_to_completion(bin().args([
            "forest",
            "--spacing",
            "4",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]));
        assert!(out.status.success());
    }
    let bytes_a = fs::read(&a).unwrap();
    assert_eq!(bytes_a, fs::read(&b).unwrap());
    let parsed = pathint::envs::forest::ObstacleForest::from_json(
        std::str::from_utf8(&bytes_a).unwrap(),
    )
    .unwrap();
    // 20x20 m at 4 m mean spacing: about 25 cells
    let n = parsed.obstacles().len();
    assert!((15..=35).contains(&n), "unexpected forest size {n}");
}

#[test]
fn ratio_verify_task_runs_through_the_harness() {
    let dir = tmp_dir("ratio");
    let cfg = write_config(
        &dir,
        "task = ratio-verify\nsweep.rollouts = 100\nsweep.seeds = 0..2\n",
    );
    let out = run_to_completion(bin().args(["run", "--config", cfg.to_str().unwrap()]));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    for line in stdout.lines().skip(1) {
        let max_err: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!(max_err < 1e-8);
        assert!(line.ends_with(",0,0"), "not flagged: {line}");
    }
}
