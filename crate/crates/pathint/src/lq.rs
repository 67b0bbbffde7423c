//! Discrete-time finite-horizon LQR solved by the textbook backward
//! Riccati recursion.
//!
//! This module is an oracle: the trajectory optimizer and the
//! verification suites are checked against it, so it deliberately
//! shares no code with them. Everything here is direct matrix algebra
//! on the problem definition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Linear-quadratic problem
///
/// ```text
/// x_{i+1} = A x_i + B u_i
/// J = sum_{i<N} (x_i' Q x_i + u_i' R u_i)/2 + x_N' Qf x_N / 2
/// ```
#[derive(Debug, Clone)]
pub struct DiscreteLq {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

/// Output of the Riccati recursion over N steps.
#[derive(Debug, Clone)]
pub struct LqPolicy {
    /// Feedback gains; the optimal control at step i is u = -gains[i] x.
    pub gains: Vec<DMatrix<f64>>,
    /// Value matrices; cost-to-go from step i is x' value[i] x / 2.
    /// Length N+1, with value[N] = Qf.
    pub value: Vec<DMatrix<f64>>,
}

impl DiscreteLq {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Backward recursion
    ///
    /// ```text
    /// K_i = (R + B' P_{i+1} B)^-1 B' P_{i+1} A
    /// P_i = Q + A' P_{i+1} (A - B K_i)
    /// ```
    ///
    /// with P_N = Qf; P is symmetrized every step.
    pub fn solve(&self, n_steps: usize) -> Result<LqPolicy> {
        let n = self.state_dim();
        let m = self.control_dim();
        assert_eq!(self.a.ncols(), n, "A must be square");
        assert_eq!(self.b.nrows(), n, "B row count must match A");
        assert_eq!((self.q.nrows(), self.q.ncols()), (n, n), "Q shape");
        assert_eq!((self.r.nrows(), self.r.ncols()), (m, m), "R shape");
        assert_eq!((self.qf.nrows(), self.qf.ncols()), (n, n), "Qf shape");

        let mut value = vec![DMatrix::zeros(n, n); n_steps + 1];
        let mut gains = vec![DMatrix::zeros(m, n); n_steps];
        value[n_steps] = self.qf.clone();
        for i in (0..n_steps).rev() {
            let p_next = &value[i + 1];
            let btp = self.b.transpose() * p_next;
            let h = &self.r + &btp * &self.b;
            let h = (&h + h.transpose()) * 0.5;
            let chol = nalgebra::Cholesky::new(h)
                .ok_or(Error::NotPositiveDefinite("R + B'PB in Riccati recursion"))?;
            gains[i] = chol.solve(&(&btp * &self.a));
            let p = &self.q + self.a.transpose() * p_next * (&self.a - &self.b * &gains[i]);
            value[i] = (&p + p.transpose()) * 0.5;
        }
        Ok(LqPolicy { gains, value })
    }
}

/// Optimal cost from `x0`: x0' P_0 x0 / 2.
pub fn optimal_cost(policy: &LqPolicy, x0: &DVector<f64>) -> f64 {
    0.5 * (x0.transpose() * &policy.value[0] * x0)[(0, 0)]
}

/// Rolls the closed-loop system forward under the policy, returning
/// states (N+1), controls (N), and the accrued cost.
pub fn simulate(
    lq: &DiscreteLq,
    policy: &LqPolicy,
    x0: &DVector<f64>,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
    let n_steps = policy.gains.len();
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut us = Vec::with_capacity(n_steps);
    let mut cost = 0.0;
    xs.push(x0.clone());
    for i in 0..n_steps {
        let x = &xs[i];
        let u = -(&policy.gains[i] * x);
        cost += 0.5 * ((x.transpose() * &lq.q * x)[(0, 0)] + (u.transpose() * &lq.r * &u)[(0, 0)]);
        xs.push(&lq.a * x + &lq.b * &u);
        us.push(u);
    }
    let xn = &xs[n_steps];
    cost += 0.5 * (xn.transpose() * &lq.qf * xn)[(0, 0)];
    (xs, us, cost)
}

/// Exact partition coefficients for the scalar linear-quadratic case,
/// by backward Gaussian integration: under pure Brownian motion of
/// scale `sigma` with running cost (q_c/2) x^2 dt per step,
/// Psi_i(x) = exp(-(a_i x^2 + b_i)) stays Gaussian through every
/// backward step, so the expectation over the next increment has a
/// closed form. Returns (a_0, b_0).
///
/// The exponential transform linearizes the matching control problem
/// exactly: 2 lambda a_0 equals the Riccati gain P_0 of
/// `DiscreteLq { a: 1, b: dt, q: q_c dt, r: r dt, qf: 0 }` when
/// lambda = sigma^2 r. Keeping both routes lets a Monte-Carlo
/// partition estimate be gated against plain Riccati output.
pub fn scalar_log_partition_coeffs(
    q_c: f64,
    sigma: f64,
    lambda: f64,
    dt: f64,
    n: usize,
) -> (f64, f64) {
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let grow = 1.0 + 2.0 * a * sigma * sigma * dt;
        b += 0.5 * grow.ln();
        a = q_c * dt / (2.0 * lambda) + a / grow;
    }
    (a, b)
}

/// Cost of an arbitrary open-loop control sequence on the problem.
pub fn open_loop_cost(lq: &DiscreteLq, x0: &DVector<f64>, us: &[DVector<f64>]) -> f64 {
    let mut x = x0.clone();
    let mut cost = 0.0;
    for u in us {
        cost += 0.5 * ((x.transpose() * &lq.q * &x)[(0, 0)] + (u.transpose() * &lq.r * u)[(0, 0)]);
        x = &lq.a * &x + &lq.b * u;
    }
    cost + 0.5 * (x.transpose() * &lq.qf * &x)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar_lq(a: f64, b: f64, q: f64, r: f64, qf: f64) -> DiscreteLq {
        DiscreteLq {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
            qf: DMatrix::from_element(1, 1, qf),
        }
    }

    fn random_lq(rng: &mut impl Rng, n: usize, m: usize) -> DiscreteLq {
        let rand_mat = |rng: &mut dyn RngCore, r: usize, c: usize| {
            DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
        };
        let spd = |rng: &mut dyn RngCore, d: usize| {
            let m = rand_mat(rng, d, d);
            &m * m.transpose() + DMatrix::identity(d, d) * 0.5
        };
        DiscreteLq {
            a: rand_mat(rng, n, n),
            b: rand_mat(rng, n, m),
            q: spd(rng, n),
            r: spd(rng, m),
            qf: spd(rng, n),
        }
    }

    #[test]
    fn one_step_scalar_matches_hand_solution() {
        // x' = x + u, unit weights, one step from x0 = 2:
        // minimize (x0^2 + u^2)/2 + (x0+u)^2/2 -> u = -1, J = 3.
        let lq = scalar_lq(1.0, 1.0, 1.0, 1.0, 1.0);
        let pol = lq.solve(1).unwrap();
        assert_relative_eq!(pol.gains[0][(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(pol.value[0][(0, 0)], 1.5, max_relative = 1e-14);
        let x0 = DVector::from_vec(vec![2.0]);
        assert_relative_eq!(optimal_cost(&pol, &x0), 3.0, max_relative = 1e-14);
        let (_, us, cost) = simulate(&lq, &pol, &x0);
        assert_relative_eq!(us[0][0], -1.0, max_relative = 1e-14);
        assert_relative_eq!(cost, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn two_step_scalar_matches_hand_solution() {
        // Same system, two steps: P1 = 1.5, K0 = 0.6, P0 = 1.6.
        let lq = scalar_lq(1.0, 1.0, 1.0, 1.0, 1.0);
        let pol = lq.solve(2).unwrap();
        assert_relative_eq!(pol.gains[1][(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(pol.gains[0][(0, 0)], 0.6, max_relative = 1e-14);
        assert_relative_eq!(pol.value[0][(0, 0)], 1.6, max_relative = 1e-14);
        let x0 = DVector::from_vec(vec![1.0]);
        let (_, _, cost) = simulate(&lq, &pol, &x0);
        assert_relative_eq!(cost, 0.8, max_relative = 1e-14);
    }

    #[test]
    fn long_horizon_converges_to_golden_ratio() {
        // Stationary P for a = b = q = r = 1 solves P^2 = 1 + P.
        let lq = scalar_lq(1.0, 1.0, 1.0, 1.0, 1.0);
        let pol = lq.solve(60).unwrap();
        let phi = 0.5 * (1.0 + 5.0f64.sqrt());
        assert_relative_eq!(pol.value[0][(0, 0)], phi, max_relative = 1e-12);
    }

    #[test]
    fn simulated_cost_equals_value_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let lq = random_lq(&mut rng, 3, 2);
            let pol = lq.solve(15).unwrap();
            let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let (_, _, cost) = simulate(&lq, &pol, &x0);
            assert_relative_eq!(cost, optimal_cost(&pol, &x0), max_relative = 1e-10);
        }
    }

    #[test]
    fn perturbing_the_optimal_controls_never_helps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let lq = random_lq(&mut rng, 3, 2);
            let pol = lq.solve(10).unwrap();
            let x0 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let (_, us, best) = simulate(&lq, &pol, &x0);
            for _ in 0..20 {
                let bumped: Vec<_> = us
                    .iter()
                    .map(|u| u + DVector::from_fn(2, |_, _| rng.gen_range(-0.1..0.1)))
                    .collect();
                assert!(open_loop_cost(&lq, &x0, &bumped) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn value_matrices_stay_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lq = random_lq(&mut rng, 4, 2);
        let pol = lq.solve(12).unwrap();
        for p in &pol.value {
            assert_relative_eq!(p, &p.transpose(), max_relative = 1e-12);
            assert!(nalgebra::Cholesky::new(p.clone() + DMatrix::identity(4, 4) * 1e-12).is_some());
        }
    }
}
