//! Quadrotor point-to-point flight through a cylinder forest.
//!
//! Twelve rigid-body states plus four first-order rotor-thrust states.
//! Attitude uses roll/pitch/yaw Euler angles with the usual kinematic
//! singularity at pitch = +-90 degrees; rollouts that tumble through it
//! blow up numerically and are absorbed by the divergence penalty, and
//! small linear/angular damping keeps the nominal trajectory far away
//! from it. Noise enters through the rotor commands only.

use nalgebra::{DMatrix, DVector};

use crate::ddp::{CostExpansion, DdpCost};
use crate::dynamics::{ControlLimits, DiffusionModel, Dims};
use crate::envs::forest::ObstacleForest;
use crate::mppi::{MppiConfig, StageCost};
use crate::state::StateVector;

/// State layout:
/// (p_x, p_y, p_z, v_x, v_y, v_z, roll, pitch, yaw, w_x, w_y, w_z
///  | thrust_1..thrust_4).
///
/// Rotors are numbered 1 front (+x arm), 2 right, 3 back, 4 left;
/// 1 and 3 spin opposite to 2 and 4.
#[derive(Debug, Clone)]
pub struct Quadrotor {
    pub mass: f64,
    /// Arm length from center to each rotor, meters.
    pub arm: f64,
    /// Diagonal body inertia (roll, pitch, yaw axes).
    pub inertia: [f64; 3],
    /// Yaw torque per newton of rotor thrust.
    pub yaw_torque_coeff: f64,
    /// Rotor thrust first-order lag time constant.
    pub motor_tau: f64,
    pub gravity: f64,
    /// Aerodynamic-style damping on velocity and body rates.
    pub lin_damping: f64,
    pub ang_damping: f64,
    /// Control-channel noise scale.
    pub rho: f64,
}

impl Default for Quadrotor {
    fn default() -> Self {
        Self {
            mass: 0.5,
            arm: 0.175,
            inertia: [2.3e-3, 2.3e-3, 4.0e-3],
            yaw_torque_coeff: 0.02,
            motor_tau: 0.15,
            gravity: 9.81,
            lin_damping: 0.1,
            ang_damping: 0.3,
            rho: 500.0,
        }
    }
}

impl Quadrotor {
    pub const STATE_NAMES: [&'static str; 16] = [
        "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "roll", "pitch", "yaw", "w_x", "w_y", "w_z",
        "thrust_1", "thrust_2", "thrust_3", "thrust_4",
    ];
    pub const CONTROL_NAMES: [&'static str; 4] =
        ["thrust_cmd_1", "thrust_cmd_2", "thrust_cmd_3", "thrust_cmd_4"];

    /// Per-rotor thrust that exactly cancels gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }

    /// Hovering at a point with rotors already at hover thrust.
    pub fn start_state(&self, p: [f64; 3]) -> StateVector {
        let h = self.hover_thrust();
        StateVector::from_blocks(
            &[p[0], p[1], p[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[h, h, h, h],
        )
    }

    pub fn default_config(&self) -> MppiConfig {
        let mut cfg = MppiConfig::new(4);
        cfg.rollouts = 600;
        cfg.horizon = 50;
        cfg.dt = 0.02;
        cfg.lambda = 1.0 / self.rho;
        cfg.nu = 25.0;
        cfg.u_init = DVector::from_element(4, self.hover_thrust());
        cfg.limits = ControlLimits::new(DVector::zeros(4), DVector::from_element(4, 4.0));
        cfg
    }
}

impl DiffusionModel for Quadrotor {
    fn dims(&self) -> Dims {
        Dims {
            n_a: 12,
            n_c: 4,
            m: 4,
            p: 4,
        }
    }

    fn rho(&self) -> Option<f64> {
        Some(self.rho)
    }

    fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
        let (vx, vy, vz) = (x[3], x[4], x[5]);
        let (roll, pitch, yaw) = (x[6], x[7], x[8]);
        let (wx, wy, wz) = (x[9], x[10], x[11]);
        let (f1, f2, f3, f4) = (x[12], x[13], x[14], x[15]);

        let thrust = f1 + f2 + f3 + f4;
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();

        f_out[0] = vx;
        f_out[1] = vy;
        f_out[2] = vz;
        // Body z axis in world coordinates times thrust / mass.
        let a = thrust / self.mass;
        f_out[3] = a * (cr * sp * cy + sr * sy) - self.lin_damping * vx;
        f_out[4] = a * (cr * sp * sy - sr * cy) - self.lin_damping * vy;
        f_out[5] = a * (cr * cp) - self.gravity - self.lin_damping * vz;

        // Euler-angle kinematics; tan(pitch) is the singular direction.
        let tp = sp / cp;
        f_out[6] = wx + sr * tp * wy + cr * tp * wz;
        f_out[7] = cr * wy - sr * wz;
        f_out[8] = (sr * wy + cr * wz) / cp;

        let torque_x = self.arm * (f2 - f4);
        let torque_y = self.arm * (f3 - f1);
        let torque_z = self.yaw_torque_coeff * (f1 - f2 + f3 - f4);
        let [ix, iy, iz] = self.inertia;
        f_out[9] = (torque_x - (iz - iy) * wy * wz) / ix - self.ang_damping * wx;
        f_out[10] = (torque_y - (ix - iz) * wz * wx) / iy - self.ang_damping * wy;
        f_out[11] = (torque_z - (iy - ix) * wx * wy) / iz - self.ang_damping * wz;

        f_out[12] = -f1 / self.motor_tau;
        f_out[13] = -f2 / self.motor_tau;
        f_out[14] = -f3 / self.motor_tau;
        f_out[15] = -f4 / self.motor_tau;
    }

    fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
        for j in 0..4 {
            g_out[(j, j)] = 1.0 / self.motor_tau;
        }
    }
}

/// Navigation cost: quadratic pulls toward the goal point and level
/// yaw, a soft exponential repulsion from the nearest obstacle, and a
/// large sticky penalty once the vehicle has hit ground or a trunk.
pub struct QuadrotorCost<'a> {
    pub goal: [f64; 3],
    pub forest: Option<&'a ObstacleForest>,
    pub crash_penalty: f64,
}

impl<'a> QuadrotorCost<'a> {
    pub fn new(goal: [f64; 3], forest: Option<&'a ObstacleForest>) -> Self {
        Self {
            goal,
            forest,
            crash_penalty: 1000.0,
        }
    }

    fn obstacle_term(&self, x: f64, y: f64) -> f64 {
        match self.forest {
            Some(f) => 350.0 * (-f.surface_distance(x, y) / 12.0).exp(),
            None => 0.0,
        }
    }
}

/// Obstacle cost used by the trajectory-optimizer baseline in place of
/// the crash indicator: 2000 sum of exp(-d^2/2) over every trunk whose
/// surface lies within 10 m, with d the surface distance. Smooth and
/// twice differentiable where it matters (the cutoff at 10 m switches a
/// term of order e^-50, far below rounding at these cost scales).
pub fn smooth_obstacle_cost(forest: &ObstacleForest, x: f64, y: f64) -> f64 {
    forest
        .within(x, y, 10.0)
        .map(|(o, center_d)| {
            let s = center_d - o.radius;
            2000.0 * (-0.5 * s * s).exp()
        })
        .sum()
}

impl StageCost for QuadrotorCost<'_> {
    fn running(&self, x: &StateVector, crashed: bool, _t: f64) -> f64 {
        let dp = [x[0] - self.goal[0], x[1] - self.goal[1], x[2] - self.goal[2]];
        let speed_sq = x[3] * x[3] + x[4] * x[4] + x[5] * x[5];
        let yaw = x[8];
        let mut q = 2.5 * dp[0] * dp[0] + 2.5 * dp[1] * dp[1] + 150.0 * dp[2] * dp[2]
            + 50.0 * yaw * yaw
            + speed_sq
            + self.obstacle_term(x[0], x[1]);
        if crashed {
            q += self.crash_penalty;
        }
        q
    }

    fn is_crash(&self, x: &StateVector) -> bool {
        if x[2] <= 0.0 {
            return true;
        }
        match self.forest {
            Some(f) => f.surface_distance(x[0], x[1]) <= 0.0,
            None => false,
        }
    }
}

/// Quadrotor cost for the trajectory-optimizer baseline. Same quadratic
/// navigation terms as [`QuadrotorCost`], but the crash indicator and
/// the long-range exponential are replaced by the smooth per-trunk
/// repulsion, and a quadratic effort term about hover is added. All
/// derivatives are exact.
pub struct QuadrotorSmoothCost<'a> {
    pub goal: [f64; 3],
    pub forest: Option<&'a ObstacleForest>,
    /// Control effort weight about the hover reference.
    pub r: DMatrix<f64>,
    pub u_hover: DVector<f64>,
}

impl<'a> QuadrotorSmoothCost<'a> {
    pub fn new(plant: &Quadrotor, goal: [f64; 3], forest: Option<&'a ObstacleForest>) -> Self {
        Self {
            goal,
            forest,
            r: DMatrix::identity(4, 4),
            u_hover: DVector::from_element(4, plant.hover_thrust()),
        }
    }
}

impl DdpCost for QuadrotorSmoothCost<'_> {
    fn stage(&self, x: &StateVector, u: &DVector<f64>, _t: f64) -> f64 {
        let dp = [x[0] - self.goal[0], x[1] - self.goal[1], x[2] - self.goal[2]];
        let speed_sq = x[3] * x[3] + x[4] * x[4] + x[5] * x[5];
        let yaw = x[8];
        let obstacle = match self.forest {
            Some(f) => smooth_obstacle_cost(f, x[0], x[1]),
            None => 0.0,
        };
        let du = u - &self.u_hover;
        2.5 * dp[0] * dp[0] + 2.5 * dp[1] * dp[1] + 150.0 * dp[2] * dp[2]
            + 50.0 * yaw * yaw
            + speed_sq
            + obstacle
            + 0.5 * (du.transpose() * &self.r * &du)[(0, 0)]
    }

    fn stage_expansion(&self, x: &StateVector, u: &DVector<f64>, _t: f64, out: &mut CostExpansion) {
        out.lx.fill(0.0);
        out.lxx.fill(0.0);
        out.lux.fill(0.0);

        out.lx[0] = 5.0 * (x[0] - self.goal[0]);
        out.lx[1] = 5.0 * (x[1] - self.goal[1]);
        out.lx[2] = 300.0 * (x[2] - self.goal[2]);
        out.lxx[(0, 0)] = 5.0;
        out.lxx[(1, 1)] = 5.0;
        out.lxx[(2, 2)] = 300.0;
        for j in 3..6 {
            out.lx[j] = 2.0 * x[j];
            out.lxx[(j, j)] = 2.0;
        }
        out.lx[8] = 100.0 * x[8];
        out.lxx[(8, 8)] = 100.0;

        if let Some(f) = self.forest {
            for (o, center_d) in f.within(x[0], x[1], 10.0) {
                let s = center_d - o.radius;
                let e = 2000.0 * (-0.5 * s * s).exp();
                // Unit vector from trunk center to the vehicle.
                let vx = (x[0] - o.x) / center_d;
                let vy = (x[1] - o.y) / center_d;
                out.lx[0] += -e * s * vx;
                out.lx[1] += -e * s * vy;
                // Hessian of e(s(p)): e (s^2 - 1) vv' - e s (I - vv')/d.
                let radial = e * (s * s - 1.0);
                let tangential = -e * s / center_d;
                out.lxx[(0, 0)] += radial * vx * vx + tangential * (1.0 - vx * vx);
                out.lxx[(1, 1)] += radial * vy * vy + tangential * (1.0 - vy * vy);
                let off = radial * vx * vy + tangential * (-vx * vy);
                out.lxx[(0, 1)] += off;
                out.lxx[(1, 0)] += off;
            }
        }

        let du = u - &self.u_hover;
        out.lu.gemv(1.0, &self.r, &du, 0.0);
        out.luu.copy_from(&self.r);
    }

    fn terminal_expansion(&self, _x: &StateVector, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        grad.fill(0.0);
        hess.fill(0.0);
    }
}
