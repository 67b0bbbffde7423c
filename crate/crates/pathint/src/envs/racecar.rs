//! Planar race car on an elliptical track.
//!
//! Single-track (bicycle) model with nonlinear lateral tire forces,
//! rear-wheel drive against quadratic drag, and first-order actuators
//! for steering and throttle. Both commands are normalized to [-1, 1];
//! the steering command maps to a wheel angle of `max_steer` radians
//! at full lock. The cost rewards staying on an elliptical centerline
//! (semi-axes 13 m by 6 m) at a target forward speed.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlLimits, DiffusionModel, Dims};
use crate::mppi::{MppiConfig, StageCost};
use crate::state::StateVector;

/// State layout: (x, y, yaw, v_x, v_y, yaw_rate | steer_act, throttle_act).
/// The actuator pair is the stochastic block; noise reaches the chassis
/// only through it, which keeps the model control-affine despite the
/// nonlinear tire curve.
#[derive(Debug, Clone)]
pub struct RaceCar {
    pub mass: f64,
    pub inertia_z: f64,
    /// Center of gravity to front axle, meters.
    pub dist_front: f64,
    /// Center of gravity to rear axle, meters.
    pub dist_rear: f64,
    /// Lateral tire curve F = -D sin(C atan(B alpha)).
    pub pacejka_b: f64,
    pub pacejka_c: f64,
    /// Tire-ground friction coefficient; peak force per axle is
    /// friction times the static axle load.
    pub friction: f64,
    /// Drive force at full throttle, newtons.
    pub max_drive_force: f64,
    /// Quadratic (aero) and linear (rolling) drag coefficients.
    pub drag_quadratic: f64,
    pub drag_rolling: f64,
    /// Wheel angle at full steering lock, radians.
    pub max_steer: f64,
    pub steer_tau: f64,
    pub throttle_tau: f64,
    /// Control-channel noise scale.
    pub rho: f64,
    /// Track ellipse semi-axes, meters.
    pub track_semi_x: f64,
    pub track_semi_y: f64,
    pub target_speed: f64,
}

impl Default for RaceCar {
    fn default() -> Self {
        Self {
            mass: 21.0,
            inertia_z: 1.2,
            dist_front: 0.34,
            dist_rear: 0.34,
            pacejka_b: 5.5,
            pacejka_c: 1.6,
            friction: 0.9,
            max_drive_force: 85.0,
            drag_quadratic: 0.6,
            drag_rolling: 0.8,
            max_steer: 0.45,
            steer_tau: 0.1,
            throttle_tau: 0.2,
            rho: 2500.0,
            track_semi_x: 13.0,
            track_semi_y: 6.0,
            target_speed: 7.0,
        }
    }
}

/// Forces at the tire contact patches for one state.
#[derive(Debug, Clone, Copy)]
pub struct TireForces {
    pub front_lateral: f64,
    pub rear_lateral: f64,
    /// Longitudinal force the rear tire transmits (drive or brake),
    /// before body-level drag.
    pub rear_longitudinal: f64,
}

impl RaceCar {
    pub const STATE_NAMES: [&'static str; 8] = [
        "x",
        "y",
        "yaw",
        "v_x",
        "v_y",
        "yaw_rate",
        "steer_act",
        "throttle_act",
    ];
    pub const CONTROL_NAMES: [&'static str; 2] = ["steer_cmd", "throttle_cmd"];

    /// At rest on the bottom of the track, facing the counterclockwise
    /// direction of travel.
    pub fn start_state() -> StateVector {
        StateVector::from_blocks(&[0.0, -6.0, 0.0, 0.0, 0.0, 0.0], &[0.0, 0.0])
    }

    pub fn default_config() -> MppiConfig {
        let mut cfg = MppiConfig::new(2);
        cfg.rollouts = 1000;
        cfg.horizon = 50;
        cfg.dt = 0.02;
        cfg.lambda = 1.0 / 2500.0; // r / rho
        cfg.nu = 25.0;
        cfg.limits = ControlLimits::symmetric(2, 1.0);
        cfg
    }

    fn axle_loads(&self) -> (f64, f64) {
        let g = 9.81;
        let wheelbase = self.dist_front + self.dist_rear;
        let front = self.mass * g * self.dist_rear / wheelbase;
        let rear = self.mass * g * self.dist_front / wheelbase;
        (front, rear)
    }

    /// Normalized track-boundary distance
    /// d = |(x/13)^2 + (y/6)^2 - 1|.
    pub fn track_distance(&self, x: f64, y: f64) -> f64 {
        let e = (x / self.track_semi_x).powi(2) + (y / self.track_semi_y).powi(2) - 1.0;
        e.abs()
    }

    pub fn tire_forces(&self, x: &StateVector) -> TireForces {
        let (v_x, v_y, r) = (x[3], x[4], x[5]);
        let steer = self.max_steer * x[6];
        let throttle = x[7];

        // Slip angles with a low-speed floor on the denominator so the
        // model stays smooth through standstill.
        let v_slip = v_x.abs().max(0.3);
        let alpha_f = (v_y + self.dist_front * r).atan2(v_slip) - steer;
        let alpha_r = (v_y - self.dist_rear * r).atan2(v_slip);

        let (load_f, load_r) = self.axle_loads();
        let peak_f = self.friction * load_f;
        let peak_r = self.friction * load_r;

        let drive = (self.max_drive_force * throttle).clamp(-peak_r, peak_r);
        // Friction ellipse: longitudinal use shrinks the lateral peak.
        let lat_cap_r = peak_r * (1.0 - (drive / peak_r).powi(2)).max(0.0).sqrt();

        let curve = |alpha: f64, peak: f64| {
            -peak * (self.pacejka_c * (self.pacejka_b * alpha).atan()).sin()
        };
        TireForces {
            front_lateral: curve(alpha_f, peak_f),
            rear_lateral: curve(alpha_r, lat_cap_r),
            rear_longitudinal: drive,
        }
    }
}

impl DiffusionModel for RaceCar {
    fn dims(&self) -> Dims {
        Dims {
            n_a: 6,
            n_c: 2,
            m: 2,
            p: 2,
        }
    }

    fn rho(&self) -> Option<f64> {
        Some(self.rho)
    }

    fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
        let (yaw, v_x, v_y, r) = (x[2], x[3], x[4], x[5]);
        let steer = self.max_steer * x[6];
        let forces = self.tire_forces(x);
        let drag = self.drag_quadratic * v_x * v_x.abs() + self.drag_rolling * v_x;
        let f_x = forces.rear_longitudinal - drag;

        let (sin_yaw, cos_yaw) = yaw.sin_cos();
        let (sin_st, cos_st) = steer.sin_cos();
        f_out[0] = v_x * cos_yaw - v_y * sin_yaw;
        f_out[1] = v_x * sin_yaw + v_y * cos_yaw;
        f_out[2] = r;
        f_out[3] = (f_x - forces.front_lateral * sin_st) / self.mass + v_y * r;
        f_out[4] = (forces.front_lateral * cos_st + forces.rear_lateral) / self.mass - v_x * r;
        f_out[5] = (self.dist_front * forces.front_lateral * cos_st
            - self.dist_rear * forces.rear_lateral)
            / self.inertia_z;
        // Actuators relax toward their commands; the commanded part
        // lives in the control gain.
        f_out[6] = -x[6] / self.steer_tau;
        f_out[7] = -x[7] / self.throttle_tau;
    }

    fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
        g_out[(0, 0)] = 1.0 / self.steer_tau;
        g_out[(1, 1)] = 1.0 / self.throttle_tau;
    }
}

impl StageCost for RaceCar {
    /// q = 100 d^2 + (v_x - target)^2.
    fn running(&self, x: &StateVector, _crashed: bool, _t: f64) -> f64 {
        let d = self.track_distance(x[0], x[1]);
        100.0 * d * d + (x[3] - self.target_speed).powi(2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::euler_step_buffered;
    use crate::dynamics::StepScratch;
    use approx::assert_relative_eq;

    fn chassis(x: f64, y: f64, yaw: f64, vx: f64, vy: f64, r: f64) -> StateVector {
        StateVector::from_blocks(&[x, y, yaw, vx, vy, r], &[0.0, 0.0])
    }

    fn simulate(car: &RaceCar, x0: &StateVector, u: &[f64; 2], dt: f64, steps: usize) -> Vec<StateVector> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(x0.clone());
        let u = DVector::from_row_slice(u);
        let eps = DVector::zeros(2);
        let mut scratch = StepScratch::new(car.dims());
        let mut next = x0.clone();
        for i in 0..steps {
            let x = out.last().unwrap();
            euler_step_buffered(car, x, &u, &eps, i as f64 * dt, dt, &mut scratch, &mut next);
            out.push(next.clone());
        }
        out
    }

    #[test]
    fn cost_frozen_values() {
        let car = RaceCar::default();
        assert_eq!(car.running(&chassis(13.0, 0.0, 0.0, 7.0, 0.0, 0.0), false, 0.0), 0.0);
        assert_relative_eq!(
            car.running(&chassis(0.0, 0.0, 0.0, 7.0, 0.0, 0.0), false, 0.0),
            100.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            car.running(&chassis(13.0, 0.0, 0.0, 0.0, 0.0, 0.0), false, 0.0),
            49.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn track_distance_symmetry() {
        let car = RaceCar::default();
        for &(x, y) in &[(3.0, 2.0), (10.0, 5.0), (14.0, 0.5), (0.0, 0.0)] {
            let d = car.track_distance(x, y);
            assert_eq!(d, car.track_distance(-x, y));
            assert_eq!(d, car.track_distance(x, -y));
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn straight_line_coasting_is_symmetric() {
        let car = RaceCar::default();
        let f = car.drift(&chassis(0.0, -6.0, 0.0, 3.0, 0.0, 0.0), 0.0);
        assert_eq!(f[4], 0.0, "no lateral acceleration");
        assert_eq!(f[5], 0.0, "no yaw acceleration");
        assert!(f[3] < 0.0, "drag decelerates the car");
    }

    #[test]
    fn constant_throttle_accelerates_to_drag_balance() {
        let car = RaceCar::default();
        let states = simulate(&car, &RaceCar::start_state(), &[0.0, 0.5], 0.01, 1200);
        for w in states.windows(2) {
            assert!(w[1][3] >= w[0][3] - 1e-12, "v_x must grow monotonically");
        }
        // Equilibrium: 0.5 * 85 = drag_q v^2 + drag_r v.
        let v_eq = {
            let (a, b, c) = (car.drag_quadratic, car.drag_rolling, 0.5 * car.max_drive_force);
            (-b + (b * b + 4.0 * a * c).sqrt()) / (2.0 * a)
        };
        let v_end = states.last().unwrap()[3];
        assert_relative_eq!(v_end, v_eq, max_relative = 0.05);
    }

    #[test]
    fn low_speed_steering_matches_kinematic_bicycle() {
        let car = RaceCar::default();
        // Hold ~1.5 m/s and a 0.1 rad wheel angle; after transients the
        // yaw rate should sit near v_x tan(steer) / wheelbase.
        let drag = car.drag_quadratic * 1.5 * 1.5 + car.drag_rolling * 1.5;
        let throttle = drag / car.max_drive_force;
        let steer_cmd = 0.1 / car.max_steer;
        let mut x0 = RaceCar::start_state();
        x0[3] = 1.5;
        x0[6] = steer_cmd;
        x0[7] = throttle;
        let states = simulate(&car, &x0, &[steer_cmd, throttle], 0.01, 400);
        let tail = &states[300..];
        let mean_r: f64 = tail.iter().map(|s| s[5]).sum::<f64>() / tail.len() as f64;
        let mean_vx: f64 = tail.iter().map(|s| s[3]).sum::<f64>() / tail.len() as f64;
        let kinematic = mean_vx * 0.1f64.tan() / (car.dist_front + car.dist_rear);
        assert_relative_eq!(mean_r, kinematic, max_relative = 0.10);
    }

    #[test]
    fn tire_forces_respect_friction_ellipse() {
        let car = RaceCar::default();
        let (load_f, load_r) = car.axle_loads();
        let (peak_f, peak_r) = (car.friction * load_f, car.friction * load_r);
        let mut s = 0.42f64;
        for _ in 0..300 {
            s = (s * 1103.7 + 0.17) % 1.0;
            let vx = 12.0 * s;
            let vy = 6.0 * ((s * 7.3) % 1.0) - 3.0;
            let r = 8.0 * ((s * 3.1) % 1.0) - 4.0;
            let steer = 2.0 * ((s * 11.9) % 1.0) - 1.0;
            let throttle = 2.0 * ((s * 5.7) % 1.0) - 1.0;
            let mut x = chassis(0.0, 0.0, 0.0, vx, vy, r);
            x[6] = steer;
            x[7] = throttle;
            let f = car.tire_forces(&x);
            assert!(f.front_lateral.abs() <= peak_f + 1e-9);
            let rear_sq =
                (f.rear_longitudinal / peak_r).powi(2) + (f.rear_lateral / peak_r).powi(2);
            assert!(rear_sq <= 1.0 + 1e-9, "rear tire outside ellipse: {rear_sq}");
        }
    }

    #[test]
    fn actuators_track_commands() {
        let car = RaceCar::default();
        let states = simulate(&car, &RaceCar::start_state(), &[0.8, -0.4], 0.01, 200);
        let end = states.last().unwrap();
        assert_relative_eq!(end[6], 0.8, max_relative = 1e-6);
        assert_relative_eq!(end[7], -0.4, max_relative = 1e-3);
    }
}
