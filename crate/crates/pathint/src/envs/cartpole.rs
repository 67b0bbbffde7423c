//! Cart-pole swing-up plant.
//!
//! A velocity-servo cart (commanded velocity u, first-order response
//! with gain 10) carrying a pendulum that hangs at theta = 0 and is
//! balanced at theta = pi. The swing-up cost is minimized by driving
//! the pole upright and parking the cart at the origin.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ControlLimits, DiffusionModel, Dims};
use crate::mppi::{MppiConfig, StageCost};
use crate::state::StateVector;

/// State layout: (p, theta | p_dot, theta_dot); noise enters the
/// velocity pair through the control channel.
#[derive(Debug, Clone)]
pub struct CartPole {
    /// Pole length, meters.
    pub length: f64,
    /// Gravity, m/s^2.
    pub gravity: f64,
    /// Velocity-servo gain: p_ddot = gain (u - p_dot).
    pub gain: f64,
    /// Control-channel noise scale; diffusion = gain column / sqrt(rho).
    pub rho: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            length: 1.0,
            gravity: 9.81,
            gain: 10.0,
            rho: 1e4,
        }
    }
}

impl CartPole {
    pub const STATE_NAMES: [&'static str; 4] = ["p", "theta", "p_dot", "theta_dot"];
    pub const CONTROL_NAMES: [&'static str; 1] = ["u"];

    /// Hanging at rest at the origin.
    pub fn start_state() -> StateVector {
        StateVector::zeros(2, 2)
    }

    /// Whether the pole is within the upright band used for reporting:
    /// |1 + cos(theta)| < 0.1.
    pub fn is_upright(x: &StateVector) -> bool {
        (1.0 + x[1].cos()).abs() < 0.1
    }

    /// Baseline solver configuration for the swing-up task; callers
    /// override the sweep knobs (rollouts, nu, seed).
    pub fn default_config() -> MppiConfig {
        let mut cfg = MppiConfig::new(1);
        cfg.rollouts = 1000;
        cfg.horizon = 50;
        cfg.dt = 0.02;
        cfg.lambda = 1.0 / 1e4; // r / rho
        cfg.nu = 1500.0;
        cfg.limits = ControlLimits::symmetric(1, 10.0);
        cfg
    }
}

/// Wraps an angle to (-pi, pi] for reporting; dynamics stay unwrapped.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

impl DiffusionModel for CartPole {
    fn dims(&self) -> Dims {
        Dims {
            n_a: 2,
            n_c: 2,
            m: 1,
            p: 1,
        }
    }

    fn rho(&self) -> Option<f64> {
        Some(self.rho)
    }

    fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
        let (theta, p_dot, theta_dot) = (x[1], x[2], x[3]);
        f_out[0] = p_dot;
        f_out[1] = theta_dot;
        // Cart acceleration without the commanded part; the pole feels
        // the full cart acceleration, so the -gain*p_dot piece shows up
        // here and the commanded piece in the control gain.
        f_out[2] = -self.gain * p_dot;
        f_out[3] = -(self.gravity / self.length) * theta.sin()
            + (self.gain * p_dot / self.length) * theta.cos();
    }

    fn control_gain_c_into(&self, x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
        let theta = x[1];
        g_out[(0, 0)] = self.gain;
        g_out[(1, 0)] = -(self.gain / self.length) * theta.cos();
    }
}

impl StageCost for CartPole {
    /// q = p^2 + 500 (1 + cos theta)^2 + theta_dot^2 + p_dot^2.
    fn running(&self, x: &StateVector, _crashed: bool, _t: f64) -> f64 {
        let (p, theta, p_dot, theta_dot) = (x[0], x[1], x[2], x[3]);
        let swing = 1.0 + theta.cos();
        p * p + 500.0 * swing * swing + theta_dot * theta_dot + p_dot * p_dot
    }
}
