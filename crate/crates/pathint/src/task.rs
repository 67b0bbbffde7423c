//! Closed-loop task execution: a controller driving a simulated plant
//! at a fixed control rate, with logging.

use nalgebra::DVector;

use crate::dynamics::{euler_step_buffered, DiffusionModel, StepScratch};
use crate::mppi::StageCost;
use crate::rng::NoiseStream;
use crate::state::StateVector;

/// Anything that can serve as the per-period decision maker in a
/// closed loop: measure the state, return the control to execute.
pub trait MpcController {
    fn mpc_step(&mut self, x: &StateVector) -> DVector<f64>;

    /// Wall-clock seconds spent inside the latest `mpc_step`.
    fn last_step_seconds(&self) -> f64 {
        0.0
    }
}

/// Record of one closed-loop run. Row i holds the measured state, the
/// executed control, and the instantaneous running cost at control
/// period i.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub dt: f64,
    pub t: Vec<f64>,
    pub states: Vec<StateVector>,
    pub controls: Vec<DVector<f64>>,
    pub running_cost: Vec<f64>,
    /// Controller wall-clock per period, seconds. Never part of
    /// determinism comparisons.
    pub wall_seconds: Vec<f64>,
    /// The plant hit a crash state and stayed frozen there.
    pub crashed: bool,
    /// The plant state left the finite region and the run stopped early.
    pub diverged: bool,
}

impl RunLog {
    /// Time average of the instantaneous running cost over the run.
    pub fn average_cost(&self) -> f64 {
        if self.running_cost.is_empty() {
            return 0.0;
        }
        self.running_cost.iter().sum::<f64>() / self.running_cost.len() as f64
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Rows from the last `seconds` of the run.
    pub fn tail_rows(&self, seconds: f64) -> std::ops::Range<usize> {
        let rows = ((seconds / self.dt).round() as usize).min(self.len());
        self.len() - rows..self.len()
    }

    /// CSV with header `t,<states>,<controls>,running_cost`; floats are
    /// printed in shortest round-trip form, so reading the file back
    /// reproduces the in-memory values bit for bit.
    pub fn to_csv(&self, state_names: &[&str], control_names: &[&str]) -> String {
        let mut out = String::new();
        out.push('t');
        for s in state_names {
            out.push(',');
            out.push_str(s);
        }
        for c in control_names {
            out.push(',');
            out.push_str(c);
        }
        out.push_str(",running_cost\n");
        for i in 0..self.len() {
            out.push_str(&format!("{}", self.t[i]));
            for v in self.states[i].as_slice() {
                out.push_str(&format!(",{v}"));
            }
            for v in self.controls[i].iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.running_cost[i]));
        }
        out
    }
}

/// Runs `controller` against the simulated plant for `duration`
/// seconds at one control per `dt`, applying natural execution noise
/// from `env_noise` (or none). Returns the full log; divergence of the
/// plant terminates the run early with the flag set, a crash freezes
/// the state for the remainder (cost keeps accruing).
pub fn run_task(
    controller: &mut impl MpcController,
    model: &(impl DiffusionModel + ?Sized),
    cost: &(impl StageCost + ?Sized),
    x0: &StateVector,
    duration: f64,
    dt: f64,
    env_noise: Option<&NoiseStream>,
) -> RunLog {
    let steps = (duration / dt).round() as usize;
    let dims = model.dims();
    let mut log = RunLog {
        dt,
        t: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        controls: Vec::with_capacity(steps),
        running_cost: Vec::with_capacity(steps),
        wall_seconds: Vec::with_capacity(steps),
        crashed: false,
        diverged: false,
    };
    let mut x = x0.clone();
    let mut x_next = x0.clone();
    let mut eps = DVector::zeros(dims.p);
    let mut scratch = StepScratch::new(dims);

    for step in 0..steps {
        let t = step as f64 * dt;
        let u = controller.mpc_step(&x);
        log.t.push(t);
        log.states.push(x.clone());
        log.running_cost.push(cost.running(&x, log.crashed, t));
        log.controls.push(u.clone());
        log.wall_seconds.push(controller.last_step_seconds());

        if log.crashed {
            continue;
        }
        match env_noise {
            Some(stream) => stream.fill_cell(0, step as u64, eps.as_mut_slice()),
            None => eps.fill(0.0),
        }
        euler_step_buffered(model, &x, &u, &eps, t, dt, &mut scratch, &mut x_next);
        if !x_next.all_finite() {
            log.diverged = true;
            break;
        }
        std::mem::swap(&mut x, &mut x_next);
        if cost.is_crash(&x) {
            log.crashed = true;
        }
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dims;
    use nalgebra::DMatrix;

    struct Integrator;
    impl DiffusionModel for Integrator {
        fn dims(&self) -> Dims {
            Dims {
                n_a: 0,
                n_c: 1,
                m: 1,
                p: 1,
            }
        }
        fn rho(&self) -> Option<f64> {
            Some(100.0)
        }
        fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
            f_out[0] = 0.0;
        }
        fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
            g_out[(0, 0)] = 1.0;
        }
    }

    struct QuadCost;
    impl StageCost for QuadCost {
        fn running(&self, x: &StateVector, _c: bool, _t: f64) -> f64 {
            x[0] * x[0]
        }
    }

    /// Proportional feedback stub standing in for a full optimizer.
    struct PController;
    impl MpcController for PController {
        fn mpc_step(&mut self, x: &StateVector) -> DVector<f64> {
            DVector::from_vec(vec![-2.0 * x[0]])
        }
    }

    #[test]
    fn run_length_matches_duration_times_rate() {
        let x0 = StateVector::new(DVector::from_vec(vec![1.0]), 0);
        let log = run_task(
            &mut PController,
            &Integrator,
            &QuadCost,
            &x0,
            10.0,
            0.02,
            None,
        );
        assert_eq!(log.len(), 500);
        assert!(!log.crashed && !log.diverged);
        // Feedback shrinks the state, so the average cost is well below
        // the initial instantaneous cost.
        assert!(log.average_cost() < 0.5);
        assert_eq!(log.tail_rows(1.0).len(), 50);
    }

    #[test]
    fn run_is_bitwise_deterministic_with_env_noise() {
        let x0 = StateVector::new(DVector::from_vec(vec![1.0]), 0);
        let stream = NoiseStream::new(17).fork(1);
        let go = || {
            run_task(
                &mut PController,
                &Integrator,
                &QuadCost,
                &x0,
                2.0,
                0.02,
                Some(&stream),
            )
        };
        let (a, b) = (go(), go());
        for i in 0..a.len() {
            assert_eq!(a.states[i][0].to_bits(), b.states[i][0].to_bits());
            assert_eq!(a.controls[i][0].to_bits(), b.controls[i][0].to_bits());
        }
    }

    #[test]
    fn csv_round_trips_bit_exactly() {
        let x0 = StateVector::new(DVector::from_vec(vec![0.3]), 0);
        let stream = NoiseStream::new(5).fork(0);
        let log = run_task(
            &mut PController,
            &Integrator,
            &QuadCost,
            &x0,
            0.5,
            0.02,
            Some(&stream),
        );
        let csv = log.to_csv(&["x"], &["u"]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,x,u,running_cost");
        assert_eq!(csv.lines().count(), log.len() + 1);
        for (i, line) in lines.enumerate() {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(cols[0].to_bits(), log.t[i].to_bits());
            assert_eq!(cols[1].to_bits(), log.states[i][0].to_bits());
            assert_eq!(cols[2].to_bits(), log.controls[i][0].to_bits());
            assert_eq!(cols[3].to_bits(), log.running_cost[i].to_bits());
        }
    }

    #[test]
    fn divergence_stops_the_run_with_flag() {
        struct Blow;
        impl DiffusionModel for Blow {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 0,
                    n_c: 1,
                    m: 1,
                    p: 1,
                }
            }
            fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                f_out[0] = x[0] * x[0] * x[0];
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out[(0, 0)] = 0.0;
            }
            fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
                b_out[(0, 0)] = 0.0;
            }
        }
        let x0 = StateVector::new(DVector::from_vec(vec![5.0]), 0);
        let log = run_task(&mut PController, &Blow, &QuadCost, &x0, 5.0, 0.1, None);
        assert!(log.diverged);
        assert!(log.len() < 50);
    }
}
