//! Self-check batteries: each suite computes one quantity along two
//! independent routes and reports the worst disagreement. The CLI
//! `verify` command is a thin printer over these.
//!
//! - `ratio`: closed-form trajectory likelihood ratio against a
//!   brute-force product of per-step Gaussian densities.
//! - `fk`: Monte-Carlo path-integral partition estimate on a scalar
//!   LQ problem against the exact Gaussian-integration value, with the
//!   Riccati cross-check of the quadratic coefficient.
//! - `lq`: one trajectory-optimizer iteration on random LQ instances
//!   against the discrete Riccati recursion.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::ddp::{CostExpansion, DdpConfig, DdpController, DdpCost, DdpDynamics};
use crate::dynamics::{ControlSequence, DiffusionModel, Dims};
use crate::likelihood::{
    feynman_kac_estimate, log_likelihood_ratio, trajectory_log_density, PathLaw, SamplingPolicy,
};
use crate::lq::{optimal_cost, scalar_log_partition_coeffs, DiscreteLq};
use crate::rng::NoiseStream;
use crate::state::StateVector;

/// One case that exceeded its suite's tolerance, with enough detail to
/// reproduce it: rebuild the suite with the same master seed and the
/// failing case index draws the same instance.
#[derive(Debug, Clone)]
pub struct CaseFailure {
    pub case: usize,
    pub master_seed: u64,
    pub detail: String,
}

impl std::fmt::Display for CaseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "case {} (master seed {}): {}",
            self.case, self.master_seed, self.detail
        )
    }
}

/// Outcome of one suite run.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: usize,
    /// What `max_error` measures, for printing.
    pub metric: &'static str,
    /// Worst per-case error in the gate's units.
    pub max_error: f64,
    /// The suite passes iff `max_error <= tolerance` for every case;
    /// failures carry the offending cases.
    pub tolerance: f64,
    /// Error of each case in the gate's units, indexed by case number.
    pub case_errors: Vec<f64>,
    pub failures: Vec<CaseFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "suite {}: {} cases, max {} {:.3e} (tolerance {:.1e}): {}",
            self.suite,
            self.cases,
            self.metric,
            self.max_error,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

fn random_invertible(rng: &mut ChaCha8Rng, n: usize, diag: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.4..0.4));
    for i in 0..n {
        m[(i, i)] += diag + rng.gen_range(0.0..0.5);
    }
    m
}

/// Random control-affine diffusion with constant coefficients and a
/// linear drift term; every field is an explicit matrix so the
/// brute-force density route below needs no model internals.
struct RandomAffine {
    f0: DVector<f64>,
    f_lin: DMatrix<f64>,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl DiffusionModel for RandomAffine {
    fn dims(&self) -> Dims {
        Dims {
            n_a: 0,
            n_c: self.f0.len(),
            m: self.g.ncols(),
            p: self.b.ncols(),
        }
    }
    fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
        f_out.copy_from(&(&self.f0 + &self.f_lin * x.as_vector()));
    }
    fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
        g_out.copy_from(&self.g);
    }
    fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
        b_out.copy_from(&self.b);
    }
}

/// Checks the closed-form log likelihood ratio against the difference
/// of brute-force trajectory log densities on random small instances
/// (state dimension <= 3, horizon <= 5, arbitrary invertible per-step
/// transforms).
///
/// The gate is an absolute bound on the log-ratio disagreement, which
/// for small errors equals the relative error of the density ratio
/// itself: |exp(d) - 1| ~ |d|.
pub fn ratio_suite(cases: usize, master_seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let tolerance = 1e-8;
    let mut max_error = 0.0f64;
    let mut case_errors = Vec::with_capacity(cases);
    let mut failures = Vec::new();

    for case in 0..cases {
        let n_c = rng.gen_range(1..=3usize);
        let steps = rng.gen_range(1..=5usize);
        let dt = rng.gen_range(0.01..0.1);

        let model = RandomAffine {
            f0: DVector::from_fn(n_c, |_, _| rng.gen_range(-1.0..1.0)),
            f_lin: DMatrix::from_fn(n_c, n_c, |_, _| rng.gen_range(-0.5..0.5)),
            g: random_invertible(&mut rng, n_c, 1.0),
            b: random_invertible(&mut rng, n_c, 1.0),
        };
        let controls: Vec<DVector<f64>> = (0..steps)
            .map(|_| DVector::from_fn(n_c, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let transforms: Vec<DMatrix<f64>> = (0..steps)
            .map(|_| random_invertible(&mut rng, n_c, 0.8))
            .collect();

        // Simulate under the sampling law: the rate-level noise
        // covariance is A' Sigma A, realized by A' B w per step.
        let mut traj = vec![StateVector::new(
            DVector::from_fn(n_c, |_, _| rng.gen_range(-1.0..1.0)),
            0,
        )];
        for (i, u) in controls.iter().enumerate() {
            let x = traj[i].as_vector();
            let w = DVector::from_fn(n_c, |_, _| {
                // Box-Muller on two uniforms; tails are irrelevant here.
                let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen_range(0.0..1.0));
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            let drift = &model.f0 + &model.f_lin * x + &model.g * u;
            let next = x + drift * dt + transforms[i].transpose() * &model.b * w * dt.sqrt();
            traj.push(StateVector::new(next, 0));
        }

        let seq = ControlSequence::new(controls, dt, 0.0);
        let policy = SamplingPolicy::with_transforms(seq, transforms).expect("invertible");
        let closed = log_likelihood_ratio(&model, &policy, &traj).expect("ratio");
        let lp = trajectory_log_density(&model, PathLaw::Natural, &traj, dt, 0.0).expect("p");
        let lq = trajectory_log_density(&model, PathLaw::Sampling(&policy), &traj, dt, 0.0)
            .expect("q");
        let oracle = lp - lq;

        let err = (closed - oracle).abs();
        max_error = max_error.max(err);
        case_errors.push(err);
        if err > tolerance {
            failures.push(CaseFailure {
                case,
                master_seed,
                detail: format!(
                    "n_c={n_c} steps={steps} dt={dt:.4}: closed {closed:.12e} vs densities {oracle:.12e} (|diff| {err:.3e})"
                ),
            });
        }
    }

    SuiteReport {
        suite: "ratio",
        cases,
        metric: "log-ratio error",
        max_error,
        tolerance,
        case_errors,
        failures,
    }
}

/// Gates a Monte-Carlo partition estimate on the scalar LQ problem
/// against the exact Gaussian-integration value: the value-function
/// reading -lambda log Psi must land within 3 standard errors. Also
/// cross-checks the exact coefficients against the independent Riccati
/// recursion (2 lambda a_0 = P_0) before trusting them.
pub fn fk_suite(rollouts: usize, master_seed: u64) -> SuiteReport {
    let (q_c, sigma, r, dt, n) = (3.0, 0.5, 2.0, 0.05, 50usize);
    let lambda = sigma * sigma * r;
    let tolerance = 3.0;
    let mut max_error = 0.0f64;
    let mut case_errors = Vec::new();
    let mut failures = Vec::new();

    let (a0, b0) = scalar_log_partition_coeffs(q_c, sigma, lambda, dt, n);
    let riccati = DiscreteLq {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::from_element(1, 1, dt),
        q: DMatrix::from_element(1, 1, q_c * dt),
        r: DMatrix::from_element(1, 1, r * dt),
        qf: DMatrix::zeros(1, 1),
    }
    .solve(n)
    .expect("riccati");
    let p0 = riccati.value[0][(0, 0)];
    let coeff_err = (p0 - 2.0 * lambda * a0).abs() / p0.abs();
    if coeff_err > 1e-12 {
        failures.push(CaseFailure {
            case: 0,
            master_seed,
            detail: format!(
                "transform coefficient mismatch: P_0 {p0:.15e} vs 2 lambda a_0 {:.15e}",
                2.0 * lambda * a0
            ),
        });
    }

    struct Brownian {
        sigma: f64,
    }
    impl DiffusionModel for Brownian {
        fn dims(&self) -> Dims {
            Dims {
                n_a: 0,
                n_c: 1,
                m: 1,
                p: 1,
            }
        }
        fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
            f_out[0] = 0.0;
        }
        fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
            g_out[(0, 0)] = 1.0;
        }
        fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
            b_out[(0, 0)] = self.sigma;
        }
    }

    let model = Brownian { sigma };
    for (case, x0) in [0.0, 0.8, 1.5].into_iter().enumerate() {
        let est = feynman_kac_estimate(
            &model,
            &|x: &StateVector, _t| 0.5 * q_c * x[0] * x[0],
            &|_x: &StateVector| 0.0,
            lambda,
            &StateVector::new(DVector::from_element(1, x0), 0),
            n,
            dt,
            rollouts,
            &NoiseStream::new(master_seed.wrapping_add(case as u64)),
            1e9,
        );
        let exact = lambda * (a0 * x0 * x0 + b0);
        let err = (est.value(lambda) - exact).abs();
        let se = est.value_std_err(lambda).max(1e-300);
        max_error = max_error.max(err / se);
        case_errors.push(err / se);
        if err > tolerance * se {
            failures.push(CaseFailure {
                case,
                master_seed,
                detail: format!(
                    "x0={x0}: -lambda log Psi {:.8e} vs exact {exact:.8e} ({:.2} standard errors)",
                    est.value(lambda),
                    err / se
                ),
            });
        }
    }

    SuiteReport {
        suite: "fk",
        cases: 3,
        metric: "error / standard error",
        max_error,
        tolerance,
        case_errors,
        failures,
    }
}

/// Linear plant for the lq suite; the default finite-difference
/// linearization runs against it, so the suite also covers that path.
struct LinearDyn {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl DdpDynamics for LinearDyn {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &StateVector, u: &DVector<f64>, _t: f64, _dt: f64) -> StateVector {
        StateVector::new(&self.a * x.as_vector() + &self.b * u, 0)
    }
}

struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    qf: DMatrix<f64>,
}

impl DdpCost for QuadraticCost {
    fn stage(&self, x: &StateVector, u: &DVector<f64>, _t: f64) -> f64 {
        0.5 * (x.as_vector().dot(&(&self.q * x.as_vector())) + u.dot(&(&self.r * u)))
    }
    fn terminal(&self, x: &StateVector) -> f64 {
        0.5 * x.as_vector().dot(&(&self.qf * x.as_vector()))
    }
    fn stage_expansion(&self, x: &StateVector, u: &DVector<f64>, _t: f64, out: &mut CostExpansion) {
        out.lx.copy_from(&(&self.q * x.as_vector()));
        out.lu.copy_from(&(&self.r * u));
        out.lxx.copy_from(&self.q);
        out.luu.copy_from(&self.r);
        out.lux.fill(0.0);
    }
    fn terminal_expansion(&self, x: &StateVector, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        grad.copy_from(&(&self.qf * x.as_vector()));
        hess.copy_from(&self.qf);
    }
}

/// Runs one trajectory-optimizer iteration on random LQ instances and
/// compares the resulting feedback gains (and realized cost) against
/// the discrete Riccati recursion.
pub fn lq_suite(cases: usize, master_seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let tolerance = 1e-8;
    let mut max_error = 0.0f64;
    let mut case_errors = Vec::with_capacity(cases);
    let mut failures = Vec::new();

    for case in 0..cases {
        let n = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=3usize);
        let steps = rng.gen_range(3..=8usize);

        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) / (n as f64).sqrt();
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let mq = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mr = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let mf = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let lq = DiscreteLq {
            q: mq.transpose() * &mq,
            r: mr.transpose() * &mr + DMatrix::identity(m, m) * 0.1,
            qf: mf.transpose() * &mf,
            a: a.clone(),
            b: b.clone(),
        };
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

        let policy = lq.solve(steps).expect("riccati");
        let expected = optimal_cost(&policy, &x0);

        let dyn_ = LinearDyn { a, b };
        let cost = QuadraticCost {
            q: lq.q.clone(),
            r: lq.r.clone(),
            qf: lq.qf.clone(),
        };
        let mut cfg = DdpConfig::new(m);
        cfg.horizon = steps;
        cfg.max_iterations = 1;
        let mut ctrl = DdpController::new(&dyn_, &cost, cfg).expect("config");
        ctrl.optimize(&StateVector::new(x0.clone(), 0)).expect("solve");

        let local = ctrl.last_policy.as_ref().expect("policy");
        let mut err = 0.0f64;
        for i in 0..steps {
            err = err.max((&local.feedback[i] + &policy.gains[i]).abs().max());
        }
        let cost_err = (ctrl.cost_trace.last().unwrap() - expected).abs() / expected.max(1e-12);
        max_error = max_error.max(err).max(cost_err);
        case_errors.push(err.max(cost_err));
        if err > tolerance || cost_err > 1e-9 {
            failures.push(CaseFailure {
                case,
                master_seed,
                detail: format!(
                    "n={n} m={m} steps={steps}: max gain error {err:.3e}, cost rel error {cost_err:.3e}"
                ),
            });
        }
    }

    SuiteReport {
        suite: "lq",
        cases,
        metric: "gain error",
        max_error,
        tolerance,
        case_errors,
        failures,
    }
}
