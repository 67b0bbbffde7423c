//! Sweep execution: Cartesian (nu, K, seed) grids over the benchmark
//! tasks, a fixed-size worker pool, and CSV emission.
//!
//! Determinism contract: every cell derives its sampling stream from
//! its own (nu, K, seed) coordinates and nothing else, so a cell run
//! alone, in a different grid, or on a different worker count produces
//! the identical summary row. Wall-clock timings are quarantined in a
//! separate file so summary.csv stays byte-reproducible.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use pathint::ddp::{DdpConfig, DdpController, SmoothedCost};
use pathint::envs::forest::{generate_forest, Bounds, ObstacleForest};
use pathint::envs::{CartPole, Quadrotor, QuadrotorCost, QuadrotorSmoothCost, RaceCar};
use pathint::mppi::{MppiConfig, MppiController};
use pathint::rng::NoiseStream;
use pathint::task::{run_task, RunLog};
use pathint::verify::{fk_suite, ratio_suite};

use crate::config::{Algorithm, ExperimentConfig, Task};

/// Environment noise streams are keyed away from the controller's
/// sampling seeds so the two can never collide.
const ENV_SEED_OFFSET: u64 = 1000;

/// Race-car summaries report the capped average so one spin does not
/// dominate a sweep cell.
const RACECAR_COST_CAP: f64 = 25.0;

/// Quadrotor completion = first entry into this disc around the goal.
const GOAL_DISC_RADIUS: f64 = 1.0;

#[derive(Debug, Clone)]
pub enum Completion {
    /// Task has no notion of completion time.
    NotApplicable,
    /// Goal disc never entered within the run.
    DidNotFinish,
    Seconds(f64),
}

impl Completion {
    fn csv_field(&self) -> String {
        match self {
            Completion::NotApplicable => "NA".to_string(),
            Completion::DidNotFinish => "DNF".to_string(),
            Completion::Seconds(t) => format!("{t}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub task: Task,
    pub algorithm: Algorithm,
    pub nu: f64,
    pub rollouts: usize,
    pub seed: u64,
    pub average_cost: f64,
    pub completion: Completion,
    pub crashed: bool,
    pub diverged: bool,
    pub wall_ms_per_step: f64,
}

#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Io(io::Error),
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(m) => write!(f, "{m}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

struct CellOutput {
    summary: RunSummary,
    /// Full trajectory, present for plant tasks when logs are wanted.
    log: Option<(RunLog, Vec<String>, Vec<String>)>,
}

/// Runs the whole grid on `workers` threads and returns summaries in
/// config order (nu outer, rollouts middle, seed inner).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: usize,
    want_logs: bool,
) -> Result<(Vec<RunSummary>, Vec<(String, String)>), RunError> {
    let mut cells = Vec::new();
    for &nu in &cfg.nu {
        for &k in &cfg.rollouts {
            for &seed in &cfg.seeds {
                cells.push((nu, k, seed));
            }
        }
    }

    let workers = workers.clamp(1, cells.len().max(1));
    let results: Vec<Mutex<Option<Result<CellOutput, RunError>>>> =
        (0..cells.len()).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let (nu, k, seed) = cells[i];
                let out = run_cell(cfg, nu, k, seed, want_logs);
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });

    let mut summaries = Vec::with_capacity(cells.len());
    let mut logs = Vec::new();
    for slot in results {
        let out = slot.into_inner().unwrap().expect("worker covered every cell")?;
        if let Some((log, state_names, control_names)) = out.log {
            let stem = format!(
                "{}_{}_nu{}_K{}_seed{}",
                out.summary.task.name(),
                out.summary.algorithm.name(),
                out.summary.nu,
                out.summary.rollouts,
                out.summary.seed
            );
            let state_refs: Vec<&str> = state_names.iter().map(String::as_str).collect();
            let control_refs: Vec<&str> = control_names.iter().map(String::as_str).collect();
            logs.push((stem, log.to_csv(&state_refs, &control_refs)));
        }
        summaries.push(out.summary);
    }
    Ok((summaries, logs))
}

fn run_cell(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
    want_logs: bool,
) -> Result<CellOutput, RunError> {
    match cfg.task {
        Task::CartPole => run_cartpole(cfg, nu, rollouts, seed, want_logs),
        Task::RaceCar => run_racecar(cfg, nu, rollouts, seed, want_logs),
        Task::Quadrotor => run_quadrotor(cfg, nu, rollouts, seed, want_logs),
        Task::FkVerify => run_fk_verify(cfg, nu, rollouts, seed),
        Task::RatioVerify => run_ratio_verify(cfg, nu, rollouts, seed),
    }
}

fn usage(msg: impl Into<String>) -> RunError {
    RunError::Usage(msg.into())
}

fn steps_per_run(cfg: &ExperimentConfig) -> (f64, usize) {
    let dt = 1.0 / cfg.rate;
    let horizon_steps = (cfg.horizon * cfg.rate).round().max(1.0) as usize;
    (dt, horizon_steps)
}

fn apply_mppi_overrides(mppi: &mut MppiConfig, cfg: &ExperimentConfig) {
    if let Some(lambda) = cfg.overrides.mppi_lambda {
        mppi.lambda = lambda;
    }
    if let Some(strict) = cfg.overrides.mppi_strict {
        mppi.strict_noise_check = strict;
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
    log: &RunLog,
    average_cost: f64,
    completion: Completion,
) -> RunSummary {
    let steps = log.len().max(1) as f64;
    RunSummary {
        task: cfg.task,
        algorithm: cfg.algorithm,
        nu,
        rollouts,
        seed,
        average_cost,
        completion,
        crashed: log.crashed,
        diverged: log.diverged,
        wall_ms_per_step: log.wall_seconds.iter().sum::<f64>() * 1000.0 / steps,
    }
}

fn names(state: &[&str], control: &[&str]) -> (Vec<String>, Vec<String>) {
    (
        state.iter().map(|s| s.to_string()).collect(),
        control.iter().map(|s| s.to_string()).collect(),
    )
}

fn run_cartpole(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
    want_logs: bool,
) -> Result<CellOutput, RunError> {
    let plant = CartPole::default();
    let (dt, horizon_steps) = steps_per_run(cfg);
    let x0 = CartPole::start_state();
    let env = NoiseStream::new(ENV_SEED_OFFSET + seed).fork(1);

    let log = match cfg.algorithm {
        Algorithm::Mppi => {
            let mut mppi = CartPole::default_config();
            mppi.nu = nu;
            mppi.rollouts = rollouts;
            mppi.dt = dt;
            mppi.horizon = horizon_steps;
            mppi.master_seed = seed;
            apply_mppi_overrides(&mut mppi, cfg);
            let mut ctrl =
                MppiController::new(&plant, &plant, mppi).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &plant, &x0, cfg.duration, dt, Some(&env))
        }
        Algorithm::Ddp => {
            let smooth = SmoothedCost::new(&plant, DMatrix::identity(1, 1), DVector::zeros(1));
            let mut ddp = DdpConfig::new(1);
            ddp.dt = dt;
            ddp.horizon = horizon_steps;
            ddp.limits = pathint::dynamics::ControlLimits::symmetric(1, 10.0);
            if let Some(iters) = cfg.overrides.ddp_iterations {
                ddp.max_iterations = iters;
            }
            let mut ctrl =
                DdpController::new(&plant, &smooth, ddp).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &plant, &x0, cfg.duration, dt, Some(&env))
        }
    };

    let avg = log.average_cost();
    let summary = summarize(cfg, nu, rollouts, seed, &log, avg, Completion::NotApplicable);
    let log = want_logs.then(|| {
        let (s, c) = names(&CartPole::STATE_NAMES, &CartPole::CONTROL_NAMES);
        (log, s, c)
    });
    Ok(CellOutput { summary, log })
}

fn run_racecar(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
    want_logs: bool,
) -> Result<CellOutput, RunError> {
    let plant = RaceCar {
        rho: cfg.overrides.racecar_rho.unwrap_or(RaceCar::default().rho),
        ..RaceCar::default()
    };
    let (dt, horizon_steps) = steps_per_run(cfg);
    let x0 = RaceCar::start_state();
    let env = NoiseStream::new(ENV_SEED_OFFSET + seed).fork(1);

    let log = match cfg.algorithm {
        Algorithm::Mppi => {
            let mut mppi = RaceCar::default_config();
            mppi.lambda = 1.0 / plant.rho;
            mppi.nu = nu;
            mppi.rollouts = rollouts;
            mppi.dt = dt;
            mppi.horizon = horizon_steps;
            mppi.master_seed = seed;
            apply_mppi_overrides(&mut mppi, cfg);
            let mut ctrl =
                MppiController::new(&plant, &plant, mppi).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &plant, &x0, cfg.duration, dt, Some(&env))
        }
        Algorithm::Ddp => {
            let smooth = SmoothedCost::new(&plant, DMatrix::identity(2, 2), DVector::zeros(2));
            let mut ddp = DdpConfig::new(2);
            ddp.dt = dt;
            ddp.horizon = horizon_steps;
            ddp.limits = pathint::dynamics::ControlLimits::symmetric(2, 1.0);
            if let Some(iters) = cfg.overrides.ddp_iterations {
                ddp.max_iterations = iters;
            }
            let mut ctrl =
                DdpController::new(&plant, &smooth, ddp).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &plant, &x0, cfg.duration, dt, Some(&env))
        }
    };

    let avg = log.average_cost().min(RACECAR_COST_CAP);
    let summary = summarize(cfg, nu, rollouts, seed, &log, avg, Completion::NotApplicable);
    let log = want_logs.then(|| {
        let (s, c) = names(&RaceCar::STATE_NAMES, &RaceCar::CONTROL_NAMES);
        (log, s, c)
    });
    Ok(CellOutput { summary, log })
}

fn quadrotor_forest(cfg: &ExperimentConfig) -> Result<ObstacleForest, RunError> {
    let spacing = cfg.overrides.forest_spacing.unwrap_or(4.0);
    let forest_seed = cfg.overrides.forest_seed.unwrap_or(42);
    let radius = cfg.overrides.forest_radius.unwrap_or(0.5);
    generate_forest(
        spacing,
        Bounds::square(10.0),
        radius,
        (-9.0, -9.0),
        (9.0, 9.0),
        forest_seed,
    )
    .map_err(|e| usage(e.to_string()))
}

fn run_quadrotor(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
    want_logs: bool,
) -> Result<CellOutput, RunError> {
    let plant = Quadrotor::default();
    let forest = quadrotor_forest(cfg)?;
    let goal = [9.0, 9.0, 1.5];
    let metric = QuadrotorCost::new(goal, Some(&forest));
    let (dt, horizon_steps) = steps_per_run(cfg);
    let x0 = plant.start_state([-9.0, -9.0, 1.5]);
    let env = NoiseStream::new(ENV_SEED_OFFSET + seed).fork(1);

    let log = match cfg.algorithm {
        Algorithm::Mppi => {
            let mut mppi = plant.default_config();
            mppi.nu = nu;
            mppi.rollouts = rollouts;
            mppi.dt = dt;
            mppi.horizon = horizon_steps;
            mppi.master_seed = seed;
            apply_mppi_overrides(&mut mppi, cfg);
            let mut ctrl =
                MppiController::new(&plant, &metric, mppi).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &metric, &x0, cfg.duration, dt, Some(&env))
        }
        Algorithm::Ddp => {
            let smooth = QuadrotorSmoothCost::new(&plant, goal, Some(&forest));
            let mut ddp = DdpConfig::new(4);
            ddp.dt = dt;
            ddp.horizon = horizon_steps;
            ddp.limits = pathint::dynamics::ControlLimits::new(
                DVector::zeros(4),
                DVector::from_element(4, 4.0),
            );
            ddp.u_init = DVector::from_element(4, plant.hover_thrust());
            if let Some(iters) = cfg.overrides.ddp_iterations {
                ddp.max_iterations = iters;
            }
            let mut ctrl =
                DdpController::new(&plant, &smooth, ddp).map_err(|e| usage(e.to_string()))?;
            run_task(&mut ctrl, &plant, &metric, &x0, cfg.duration, dt, Some(&env))
        }
    };

    let completion = log
        .states
        .iter()
        .position(|x| {
            let dx = x[0] - goal[0];
            let dy = x[1] - goal[1];
            (dx * dx + dy * dy).sqrt() <= GOAL_DISC_RADIUS
        })
        .map(|i| Completion::Seconds(log.t[i]))
        .unwrap_or(Completion::DidNotFinish);
    let avg = log.average_cost();
    let summary = summarize(cfg, nu, rollouts, seed, &log, avg, completion);
    let log = want_logs.then(|| {
        let (s, c) = names(&Quadrotor::STATE_NAMES, &Quadrotor::CONTROL_NAMES);
        (log, s, c)
    });
    Ok(CellOutput { summary, log })
}

/// Verification tasks reuse the sweep grid: K = Monte Carlo rollouts
/// (fk) or random cases (ratio), seed = battery master seed. The
/// summary's average_cost column carries the battery's max error.
fn run_fk_verify(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
) -> Result<CellOutput, RunError> {
    let report = fk_suite(rollouts, seed);
    Ok(CellOutput {
        summary: RunSummary {
            task: cfg.task,
            algorithm: cfg.algorithm,
            nu,
            rollouts,
            seed,
            average_cost: report.max_error,
            completion: Completion::NotApplicable,
            crashed: false,
            diverged: !report.passed(),
            wall_ms_per_step: 0.0,
        },
        log: None,
    })
}

fn run_ratio_verify(
    cfg: &ExperimentConfig,
    nu: f64,
    rollouts: usize,
    seed: u64,
) -> Result<CellOutput, RunError> {
    let report = ratio_suite(rollouts, seed);
    Ok(CellOutput {
        summary: RunSummary {
            task: cfg.task,
            algorithm: cfg.algorithm,
            nu,
            rollouts,
            seed,
            average_cost: report.max_error,
            completion: Completion::NotApplicable,
            crashed: false,
            diverged: !report.passed(),
            wall_ms_per_step: 0.0,
        },
        log: None,
    })
}

/// Summary CSV, wall-clock excluded so reruns are byte-identical.
pub fn summary_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from("task,algorithm,nu,rollouts,seed,average_cost,completion_time,crashed,diverged\n");
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.task.name(),
            s.algorithm.name(),
            s.nu,
            s.rollouts,
            s.seed,
            s.average_cost,
            s.completion.csv_field(),
            s.crashed as u8,
            s.diverged as u8
        )
        .unwrap();
    }
    out
}

/// Wall-clock channel, kept out of the deterministic summary.
pub fn timing_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from("task,algorithm,nu,rollouts,seed,wall_ms_per_step\n");
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            s.task.name(),
            s.algorithm.name(),
            s.nu,
            s.rollouts,
            s.seed,
            s.wall_ms_per_step
        )
        .unwrap();
    }
    out
}

pub fn write_outputs(
    dir: &Path,
    summaries: &[RunSummary],
    logs: &[(String, String)],
) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.csv"), summary_csv(summaries))?;
    fs::write(dir.join("timing.csv"), timing_csv(summaries))?;
    for (stem, csv) in logs {
        fs::write(dir.join(format!("{stem}.csv")), csv)?;
    }
    Ok(())
}
