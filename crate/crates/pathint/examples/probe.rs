//! Manual exploration harness used while tuning the benchmark plants.

use nalgebra::DVector;
use pathint::envs::forest::generate_forest;
use pathint::ddp::{DdpConfig, DdpController, SmoothedCost};
use pathint::envs::{CartPole, Quadrotor, QuadrotorCost, QuadrotorSmoothCost, RaceCar};
use pathint::mppi::MppiController;
use pathint::rng::NoiseStream;
use pathint::task::run_task;

fn ddp_quad_isolated(use_forest: bool, use_noise: bool, iters: usize, horizon: usize, seed: u64) {
    use pathint::envs::forest::Bounds;
    use pathint::task::MpcController;
    let quad = Quadrotor::default();
    let forest = if use_forest {
        Some(generate_forest(4.0, Bounds::square(11.0), 0.5, (-9.0, -9.0), (9.0, 9.0), 42).unwrap())
    } else {
        None
    };
    let smooth = QuadrotorSmoothCost::new(&quad, [9.0, 9.0, 1.5], forest.as_ref());
    let mut cfg = DdpConfig::new(4);
    cfg.max_iterations = iters;
    cfg.horizon = horizon;
    cfg.limits = pathint::dynamics::ControlLimits::new(
        DVector::zeros(4),
        DVector::from_element(4, 4.0),
    );
    cfg.u_init = DVector::from_element(4, quad.hover_thrust());
    let mut ctrl = DdpController::new(&quad, &smooth, cfg).unwrap();
    let env = NoiseStream::new(7000 + seed).fork(1);
    let metric_cost = QuadrotorCost::new([9.0, 9.0, 1.5], forest.as_ref());
    let log = run_task(
        &mut ctrl,
        &quad,
        &metric_cost,
        &quad.start_state([-9.0, -9.0, 1.5]),
        20.0,
        0.02,
        if use_noise { Some(&env) } else { None },
    );
    println!(
        "ddp quad isolated forest={use_forest} noise={use_noise} iters={iters} seed={seed}: crashed={} final=({:.2},{:.2},{:.2})",
        log.crashed,
        log.states.last().unwrap()[0],
        log.states.last().unwrap()[1],
        log.states.last().unwrap()[2]
    );
    for i in (0..log.len()).step_by(25) {
        let x = &log.states[i];
        println!(
            "  t={:5.1} p=({:6.2},{:6.2},{:5.2}) v=({:5.2},{:5.2},{:5.2}) rp=({:5.2},{:5.2}) rot=({:4.2},{:4.2},{:4.2},{:4.2}) q={:9.1}",
            log.t[i], x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[12], x[13], x[14], x[15],
            log.running_cost[i]
        );
        if log.t[i] > 6.0 {
            break;
        }
    }
    let _ = ctrl.last_step_seconds();
}

fn racecar_cell(nu: f64, lambda: Option<f64>, seed: u64) -> (f64, f64, f64) {
    racecar_cell_rho(2500.0, nu, lambda, seed)
}

fn racecar_cell_rho(rho: f64, nu: f64, lambda: Option<f64>, seed: u64) -> (f64, f64, f64) {
    let car = RaceCar {
        rho,
        ..RaceCar::default()
    };
    let mut cfg = RaceCar::default_config();
    cfg.lambda = 1.0 / rho;
    cfg.nu = nu;
    cfg.master_seed = seed;
    if let Some(l) = lambda {
        cfg.lambda = l;
        cfg.strict_noise_check = false;
    }
    let mut ctrl = MppiController::new(&car, &car, cfg).unwrap();
    let env = NoiseStream::new(9000 + seed).fork(1);
    let log = run_task(&mut ctrl, &car, &car, &RaceCar::start_state(), 25.0, 0.02, Some(&env));
    let capped = (log.running_cost.iter().sum::<f64>() / log.len() as f64).min(25.0);
    let min_vx = log.states.iter().skip(250).map(|x| x[3]).fold(f64::MAX, f64::min);
    let max_d = log
        .states
        .iter()
        .map(|x| car.track_distance(x[0], x[1]))
        .fold(0.0f64, f64::max);
    (capped, min_vx, max_d)
}

fn racecar_sweep2() {
    for lambda in [Some(0.5), Some(2.0), Some(5.0), Some(20.0)] {
        for nu in [25.0, 50.0] {
            let mut rows = Vec::new();
            for seed in 0..3u64 {
                rows.push(racecar_cell(nu, lambda, seed));
            }
            let avg = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
            let min_vx = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
            let max_d = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
            println!(
                "nu={nu:5} lambda={lambda:?}: capped avg {avg:.3}, min vx {min_vx:.2}, max d {max_d:.3}  per-seed {:?}",
                rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}

fn racecar_sweep() {
    for lambda in [None, Some(1.0), Some(5.0), Some(20.0)] {
        for nu in [100.0, 300.0] {
            let mut rows = Vec::new();
            for seed in 0..3u64 {
                rows.push(racecar_cell(nu, lambda, seed));
            }
            let avg = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
            let min_vx = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
            let max_d = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
            println!(
                "nu={nu:5} lambda={lambda:?}: capped avg {avg:.3}, min vx {min_vx:.2}, max d {max_d:.3}  per-seed {:?}",
                rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}

fn ddp_racecar(seed: u64) {
    ddp_racecar_rho(2500.0, seed);
}

fn ddp_racecar_rho(rho: f64, seed: u64) {
    ddp_racecar_iters(rho, 10, seed);
}

fn ddp_racecar_cell(rho: f64, iters: usize, seed: u64) -> (f64, f64, f64) {
    let car = RaceCar {
        rho,
        ..RaceCar::default()
    };
    let smooth = SmoothedCost::new(&car, nalgebra::DMatrix::identity(2, 2), DVector::zeros(2));
    let mut cfg = DdpConfig::new(2);
    cfg.max_iterations = iters;
    cfg.limits = pathint::dynamics::ControlLimits::symmetric(2, 1.0);
    let mut ctrl = DdpController::new(&car, &smooth, cfg).unwrap();
    let env = NoiseStream::new(9000 + seed).fork(1);
    let log = run_task(&mut ctrl, &car, &car, &RaceCar::start_state(), 25.0, 0.02, Some(&env));
    let capped = (log.running_cost.iter().sum::<f64>() / log.len() as f64).min(25.0);
    let min_vx = log.states.iter().skip(250).map(|x| x[3]).fold(f64::MAX, f64::min);
    let max_d = log
        .states
        .iter()
        .map(|x| car.track_distance(x[0], x[1]))
        .fold(0.0f64, f64::max);
    (capped, min_vx, max_d)
}

fn ddp_racecar_iters(rho: f64, iters: usize, seed: u64) {
    let car = RaceCar {
        rho,
        ..RaceCar::default()
    };
    let smooth = SmoothedCost::new(&car, nalgebra::DMatrix::identity(2, 2), DVector::zeros(2));
    let mut cfg = DdpConfig::new(2);
    cfg.max_iterations = iters;
    cfg.limits = pathint::dynamics::ControlLimits::symmetric(2, 1.0);
    let mut ctrl = DdpController::new(&car, &smooth, cfg).unwrap();
    let env = NoiseStream::new(9000 + seed).fork(1);
    let t0 = std::time::Instant::now();
    let log = run_task(&mut ctrl, &car, &car, &RaceCar::start_state(), 25.0, 0.02, Some(&env));
    let wall = t0.elapsed().as_secs_f64();
    let capped = (log.running_cost.iter().sum::<f64>() / log.len() as f64).min(25.0);
    let min_vx = log.states.iter().skip(250).map(|x| x[3]).fold(f64::MAX, f64::min);
    let max_d = log
        .states
        .iter()
        .map(|x| car.track_distance(x[0], x[1]))
        .fold(0.0f64, f64::max);
    println!(
        "ddp racecar seed {seed}: capped avg {capped:.3}, min vx(after 5s) {min_vx:.2}, max d {max_d:.3}, wall {wall:.2}s"
    );
    for i in (0..log.len()).step_by(125) {
        let x = &log.states[i];
        println!(
            "  t={:5.1} x={:6.2} y={:6.2} vx={:5.2} vy={:5.2} q={:8.2}",
            log.t[i], x[0], x[1], x[3], x[4], log.running_cost[i]
        );
    }
}

fn ddp_quadrotor(seed: u64) {
    use pathint::envs::forest::Bounds;
    let quad = Quadrotor::default();
    let forest = generate_forest(4.0, Bounds::square(11.0), 0.5, (-9.0, -9.0), (9.0, 9.0), 42).unwrap();
    let metric_cost = QuadrotorCost::new([9.0, 9.0, 1.5], Some(&forest));
    let smooth = QuadrotorSmoothCost::new(&quad, [9.0, 9.0, 1.5], Some(&forest));
    let mut cfg = DdpConfig::new(4);
    cfg.limits = pathint::dynamics::ControlLimits::new(DVector::zeros(4), DVector::from_element(4, 4.0));
    cfg.u_init = DVector::from_element(4, quad.hover_thrust());
    let mut ctrl = DdpController::new(&quad, &smooth, cfg).unwrap();
    let env = NoiseStream::new(7000 + seed).fork(1);
    let x0 = quad.start_state([-9.0, -9.0, 1.5]);
    let t0 = std::time::Instant::now();
    let log = run_task(&mut ctrl, &quad, &metric_cost, &x0, 60.0, 0.02, Some(&env));
    let wall = t0.elapsed().as_secs_f64();
    let completion = log
        .states
        .iter()
        .position(|x| ((x[0] - 9.0).powi(2) + (x[1] - 9.0).powi(2)).sqrt() <= 1.0)
        .map(|i| log.t[i]);
    println!(
        "ddp quad seed {seed}: completion {completion:?}, crashed {}, wall {wall:.2}s",
        log.crashed
    );
    for i in (0..log.len()).step_by(250) {
        let x = &log.states[i];
        println!(
            "  t={:5.1} p=({:6.2},{:6.2},{:5.2}) v=({:5.2},{:5.2}) q={:8.2}",
            log.t[i], x[0], x[1], x[2], x[3], x[4], log.running_cost[i]
        );
    }
}

fn racecar(seed: u64) {
    let car = RaceCar::default();
    let mut cfg = RaceCar::default_config();
    cfg.master_seed = seed;
    let mut ctrl = MppiController::new(&car, &car, cfg).unwrap();
    let env = NoiseStream::new(9000 + seed).fork(1);
    let t0 = std::time::Instant::now();
    let log = run_task(
        &mut ctrl,
        &car,
        &car,
        &RaceCar::start_state(),
        25.0,
        0.02,
        Some(&env),
    );
    let wall = t0.elapsed().as_secs_f64();

    let capped: f64 = log
        .running_cost
        .iter()
        .map(|c| c.min(25.0))
        .sum::<f64>()
        / log.len() as f64;
    let mut laps = 0.0f64;
    let mut prev_angle = (-6.0f64).atan2(0.0);
    for x in &log.states {
        let ang = x[1].atan2(x[0]);
        let mut d = ang - prev_angle;
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        laps += d / (2.0 * std::f64::consts::PI);
        prev_angle = ang;
    }
    let min_vx = log.states.iter().skip(250).map(|x| x[3]).fold(f64::MAX, f64::min);
    let max_d = log
        .states
        .iter()
        .map(|x| car.track_distance(x[0], x[1]))
        .fold(0.0f64, f64::max);
    println!(
        "racecar seed {seed}: capped avg {capped:.3}, laps {laps:.2}, min vx(after 5s) {min_vx:.2}, max d {max_d:.3}, wall {wall:.2}s"
    );
    for i in (0..log.len()).step_by(125) {
        let x = &log.states[i];
        println!(
            "  t={:5.1} x={:6.2} y={:6.2} vx={:5.2} vy={:5.2} q={:8.2}",
            log.t[i], x[0], x[1], x[3], x[4], log.running_cost[i]
        );
    }
}

fn quadrotor(seed: u64) {
    let quad = Quadrotor::default();
    let forest = generate_forest(
        4.0,
        pathint::envs::forest::Bounds::square(11.0),
        0.5,
        (-9.0, -9.0),
        (9.0, 9.0),
        42,
    )
    .unwrap();
    println!("forest: {} obstacles", forest.obstacles().len());
    let cost = QuadrotorCost::new([9.0, 9.0, 1.5], Some(&forest));
    let mut cfg = quad.default_config();
    cfg.master_seed = seed;
    let mut ctrl = MppiController::new(&quad, &cost, cfg).unwrap();
    let env = NoiseStream::new(7000 + seed).fork(1);
    let t0 = std::time::Instant::now();
    let log = run_task(
        &mut ctrl,
        &quad,
        &cost,
        &quad.start_state([-9.0, -9.0, 1.5]),
        30.0,
        0.02,
        Some(&env),
    );
    let wall = t0.elapsed().as_secs_f64();

    let goal = [9.0f64, 9.0, 1.5];
    let mut completion = None;
    for (i, x) in log.states.iter().enumerate() {
        let d = ((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2) + (x[2] - goal[2]).powi(2))
            .sqrt();
        if d <= 1.0 {
            completion = Some(i as f64 * 0.02);
            break;
        }
    }
    println!(
        "quad seed {seed}: crashed={} completion={:?} wall {wall:.2}s",
        log.crashed, completion
    );
    for i in (0..log.len()).step_by(150) {
        let x = &log.states[i];
        println!(
            "  t={:5.1} p=({:6.2},{:6.2},{:5.2}) v=({:5.2},{:5.2},{:5.2}) yaw={:5.2} q={:9.1}",
            log.t[i], x[0], x[1], x[2], x[3], x[4], x[5], x[8], log.running_cost[i]
        );
    }
}

fn cartpole_run(nu: f64, k: usize, seed: u64, trace: bool) -> f64 {
    cartpole_run_opt(nu, k, seed, trace, true)
}

fn cartpole_run_opt(nu: f64, k: usize, seed: u64, trace: bool, noisy_env: bool) -> f64 {
    cartpole_run_lambda(nu, k, seed, trace, noisy_env, None)
}

fn cartpole_run_lambda(
    nu: f64,
    k: usize,
    seed: u64,
    trace: bool,
    noisy_env: bool,
    lambda: Option<f64>,
) -> f64 {
    let plant = CartPole::default();
    let mut cfg = CartPole::default_config();
    cfg.nu = nu;
    cfg.rollouts = k;
    cfg.master_seed = seed;
    if let Some(l) = lambda {
        cfg.lambda = l;
        cfg.strict_noise_check = false;
    }
    let mut ctrl = MppiController::new(&plant, &plant, cfg).unwrap();
    let env = NoiseStream::new(1000 + seed).fork(1);
    let log = run_task(
        &mut ctrl,
        &plant,
        &plant,
        &CartPole::start_state(),
        10.0,
        0.02,
        if noisy_env { Some(&env) } else { None },
    );
    if trace {
        let per_sec: Vec<String> = (0..10)
            .map(|s| {
                let c: f64 =
                    log.running_cost[s * 50..(s + 1) * 50].iter().sum::<f64>() / 50.0;
                format!("{c:6.0}")
            })
            .collect();
        println!("  nu={nu} K={k} seed={seed}: {}", per_sec.join(" "));
    }
    log.average_cost()
}

fn cartpole_nu_sweep() {
    for nu in [1.0, 500.0, 1500.0] {
        let mut costs = Vec::new();
        for seed in 0..10 {
            costs.push(cartpole_run(nu, 1000, seed, true));
        }
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        println!("cartpole nu={nu}: mean over 10 seeds {mean:.1}");
    }
    let _ = DVector::<f64>::zeros(1);
}

fn nu1_isolation() {
    println!("deterministic plant (no env noise), nu=1, K=1000:");
    for seed in 0..4 {
        cartpole_run_opt(1.0, 1000, seed, true, false);
    }
    println!("noisy plant, nu=1, K=10:");
    for seed in 0..4 {
        cartpole_run_opt(1.0, 10, seed, true, true);
    }
    println!("noisy plant, nu=1, K=100:");
    for seed in 0..4 {
        cartpole_run_opt(1.0, 100, seed, true, true);
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    if which == "nu1" {
        nu1_isolation();
        return;
    }
    if which == "k1" {
        k1_ablation();
        return;
    }
    if which == "carsweep" {
        racecar_sweep();
        return;
    }
    if which == "quadiso" {
        // no forest, no noise: pure rigid-body handling
        ddp_quad_isolated(false, false, 10, 50, 0);
        return;
    }
    if which == "quadiso2" {
        ddp_quad_isolated(true, false, 10, 50, 0);
        return;
    }
    if which == "quadiso4" {
        // long horizon: can the local optimizer see past the repulsion ring?
        ddp_quad_isolated(true, false, 10, 150, 0);
        return;
    }
    if which == "carsweep2" {
        racecar_sweep2();
        return;
    }
    if which == "carnoisy" {
        let rho = 400.0;
        for seed in 0..3u64 {
            ddp_racecar_rho(rho, seed);
        }
        for lambda in [None, Some(2.0)] {
            for nu in [1.0, 4.0, 16.0] {
                let mut rows = Vec::new();
                for seed in 0..3u64 {
                    rows.push(racecar_cell_rho(rho, nu, lambda, seed));
                }
                let avg = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
                let min_vx = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
                let max_d = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
                println!(
                    "rho={rho} nu={nu:4} lambda={lambda:?}: capped avg {avg:.3}, min vx {min_vx:.2}, max d {max_d:.3}  per-seed {:?}",
                    rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                );
            }
        }
        return;
    }
    if which == "ddpcar" {
        for seed in 0..3u64 {
            ddp_racecar(seed);
        }
        return;
    }
    if which == "crit7" {
        use pathint::envs::forest::Bounds;
        let quad = Quadrotor::default();
        let forest =
            generate_forest(4.0, Bounds::square(10.0), 0.5, (-9.0, -9.0), (9.0, 9.0), 42).unwrap();
        println!("forest: {} obstacles", forest.obstacles().len());
        let goal = [9.0, 9.0, 1.5];
        let metric = QuadrotorCost::new(goal, Some(&forest));
        let completion = |log: &pathint::task::RunLog| {
            log.states
                .iter()
                .position(|x| ((x[0] - 9.0f64).powi(2) + (x[1] - 9.0).powi(2)).sqrt() <= 1.0)
                .map(|i| log.t[i])
        };
        for algo in ["mppi", "ddp"] {
            let mut times = Vec::new();
            let mut crashes = 0usize;
            for seed in 0..10u64 {
                let env = NoiseStream::new(1000 + seed).fork(1);
                let x0 = quad.start_state([-9.0, -9.0, 1.5]);
                let log = if algo == "mppi" {
                    let mut cfg = quad.default_config();
                    cfg.master_seed = seed;
                    let mut ctrl = MppiController::new(&quad, &metric, cfg).unwrap();
                    run_task(&mut ctrl, &quad, &metric, &x0, 60.0, 0.02, Some(&env))
                } else {
                    let smooth = QuadrotorSmoothCost::new(&quad, goal, Some(&forest));
                    let mut cfg = DdpConfig::new(4);
                    cfg.limits = pathint::dynamics::ControlLimits::new(
                        DVector::zeros(4),
                        DVector::from_element(4, 4.0),
                    );
                    cfg.u_init = DVector::from_element(4, quad.hover_thrust());
                    let mut ctrl = DdpController::new(&quad, &smooth, cfg).unwrap();
                    run_task(&mut ctrl, &quad, &metric, &x0, 60.0, 0.02, Some(&env))
                };
                let t_goal = completion(&log);
                if log.crashed {
                    crashes += 1;
                }
                let x_end = log.states.last().unwrap();
                println!(
                    "{algo} seed {seed}: completion {:?}, crashed {}, final ({:.1},{:.1},{:.1})",
                    t_goal, log.crashed, x_end[0], x_end[1], x_end[2]
                );
                times.push(t_goal.unwrap_or(60.0));
            }
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            println!("{algo}: mean completion (DNF=60) {mean:.2}, crashes {crashes}/10");
        }
        return;
    }
    if which == "carnoisy2" {
        // genuinely noisy car: does certainty-equivalent planning crack?
        for rho in [200.0, 100.0] {
            for iters in [10usize, 1] {
                let mut rows = Vec::new();
                for seed in 0..3u64 {
                    rows.push(ddp_racecar_cell(rho, iters, seed));
                }
                let avg = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
                let min_vx = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
                let max_d = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
                println!(
                    "rho={rho} ddp iters={iters}: capped avg {avg:.3}, min vx {min_vx:.2}, max d {max_d:.3}  per-seed {:?}",
                    rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                );
            }
            for lambda in [None, Some(1.0)] {
                for nu in [1.0, 2.0, 4.0] {
                    let mut rows = Vec::new();
                    for seed in 0..3u64 {
                        rows.push(racecar_cell_rho(rho, nu, lambda, seed));
                    }
                    let avg = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
                    let min_vx = rows.iter().map(|r| r.1).fold(f64::MAX, f64::min);
                    let max_d = rows.iter().map(|r| r.2).fold(0.0f64, f64::max);
                    println!(
                        "rho={rho} mppi nu={nu:4} lambda={lambda:?}: capped avg {avg:.3}, min vx {min_vx:.2}, max d {max_d:.3}  per-seed {:?}",
                        rows.iter().map(|r| (r.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                    );
                }
            }
        }
        return;
    }
    if which == "ddpiter" {
        // real-time iteration budget: how conservative does the baseline get?
        for rho in [2500.0, 400.0] {
            for iters in [1usize, 2] {
                println!("--- rho={rho} max_iterations={iters}");
                for seed in 0..3u64 {
                    ddp_racecar_iters(rho, iters, seed);
                }
            }
        }
        return;
    }
    if which == "ddpquad" {
        for seed in 0..3u64 {
            ddp_quadrotor(seed);
        }
        return;
    }
    if which == "crit5" {
        // full criterion-5 protocol at lambda=200: 10 seeds per cell
        for (nu, k) in [(1.0, 1000), (1500.0, 1000), (1500.0, 100), (1500.0, 10), (500.0, 100)] {
            let mut costs = Vec::new();
            let mut upright_ok = 0usize;
            for seed in 0..10u64 {
                let plant = CartPole::default();
                let mut cfg = CartPole::default_config();
                cfg.nu = nu;
                cfg.rollouts = k;
                cfg.master_seed = seed;
                cfg.lambda = 200.0;
                cfg.strict_noise_check = false;
                let mut ctrl = MppiController::new(&plant, &plant, cfg).unwrap();
                let env = NoiseStream::new(1000 + seed).fork(1);
                let log = run_task(&mut ctrl, &plant, &plant, &CartPole::start_state(), 10.0, 0.02, Some(&env));
                let avg = log.average_cost();
                let tail = log.tail_rows(5.0);
                let all_up = tail.clone().all(|i| CartPole::is_upright(&log.states[i]));
                if all_up {
                    upright_ok += 1;
                }
                costs.push(avg);
            }
            let mean = costs.iter().sum::<f64>() / costs.len() as f64;
            println!(
                "nu={nu:6} K={k:5}: mean {mean:7.1} upright_tail {upright_ok}/10  per-seed {:?}",
                costs.iter().map(|c| c.round()).collect::<Vec<_>>()
            );
        }
        return;
    }
    if which == "lam" {
        for lambda in [10.0, 50.0, 200.0] {
            for nu in [1.0, 500.0, 1500.0] {
                let mut costs = Vec::new();
                for seed in 0..4u64 {
                    costs.push(cartpole_run_lambda(nu, 1000, seed, false, true, Some(lambda)));
                }
                let mean = costs.iter().sum::<f64>() / costs.len() as f64;
                println!(
                    "lambda={lambda} nu={nu}: mean {mean:7.1}  per-seed {:?}",
                    costs.iter().map(|c| c.round()).collect::<Vec<_>>()
                );
            }
        }
        return;
    }
    if which == "fwd" {
        for nu in [1.0, 1500.0] {
            for seed in 0..3u64 {
                let avg = forward_accumulation_variant(nu, 1000, seed);
                println!("forward-accum nu={nu} seed={seed}: avg {avg:.1}");
            }
        }
        return;
    }
    if which == "car" || which == "all" {
        for seed in [0, 1, 2] {
            racecar(seed);
        }
    }
    if which == "quad" || which == "all" {
        for seed in [0, 1, 2] {
            quadrotor(seed);
        }
    }
    if which == "nu" || which == "all" {
        cartpole_nu_sweep();
    }
}

// Selection-ablation: K=1 keeps the same perturbation magnitude but
// removes the reward-weighted choice among rollouts.
pub fn k1_ablation() {
    for seed in 0..4 {
        cartpole_run_opt(1.0, 1, seed, true, true);
    }
}

// Evidence run: the literal pseudocode accumulates stage costs forward
// (weight at step i sees cost up to i, not from i onward). This
// emulates that variant with the library's own sampling and rollouts.
pub fn forward_accumulation_variant(nu: f64, k: usize, seed: u64) -> f64 {
    use pathint::dynamics::ControlSequence;
    use pathint::mppi::{importance_weights_into, rollout_batch, sample_perturbations, RolloutBatch};

    let plant = CartPole::default();
    let mut cfg = CartPole::default_config();
    cfg.nu = nu;
    cfg.rollouts = k;
    cfg.master_seed = seed;
    let n = cfg.horizon;
    let m = 1usize;

    let mut plan = ControlSequence::zeros(n, m, cfg.dt);
    let mut batch = RolloutBatch::new(cfg.rollouts, n, m);
    let stream = NoiseStream::new(cfg.master_seed);
    let env = NoiseStream::new(1000 + seed).fork(1);

    let mut x = CartPole::start_state();
    let mut costs = Vec::new();
    let mut fwd = vec![0.0; cfg.rollouts * n];
    let mut col = vec![0.0; cfg.rollouts];
    let mut w = vec![0.0; cfg.rollouts];
    let u_init = cfg.u_init.clone();

    for step in 0..500 {
        let pass_stream = stream.fork(step as u64);
        sample_perturbations(&cfg, &plant, &pass_stream, &mut batch);
        rollout_batch(&plant, &plant, &cfg, &x, &plan, &mut batch);
        // Forward accumulation of the effective stage costs.
        for kk in 0..cfg.rollouts {
            let mut acc = 0.0;
            for i in 0..n {
                acc += batch.stage_costs[kk * n + i];
                fwd[kk * n + i] = acc;
            }
        }
        for i in 0..n {
            for kk in 0..cfg.rollouts {
                col[kk] = fwd[kk * n + i];
            }
            importance_weights_into(&col, cfg.lambda, &mut w);
            let mut du = 0.0;
            for kk in 0..cfg.rollouts {
                du += w[kk] * batch.perturbations[kk * n * m + i * m];
            }
            let u = &mut plan.get_mut(i)[0];
            *u = (*u + du).clamp(-10.0, 10.0);
        }
        costs.push(pathint::mppi::StageCost::running(&plant, &x, false, 0.0));
        // Execute u_0 under natural noise, then shift.
        let u0 = plan.get(0).clone();
        let mut eps = nalgebra::DVector::zeros(1);
        env.fill_cell(0, step as u64, eps.as_mut_slice());
        x = pathint::dynamics::euler_step(&plant, &x, &u0, &eps, step as f64 * cfg.dt, cfg.dt);
        plan.shift_left(&u_init);
    }
    costs.iter().sum::<f64>() / costs.len() as f64
}
