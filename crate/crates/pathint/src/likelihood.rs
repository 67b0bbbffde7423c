//! Exact trajectory densities and likelihood ratios for discretized
//! controlled diffusions.
//!
//! A sampled rollout is distributed under a *sampling law* q (mean
//! shifted by the control plan, per-step covariance scaled through an
//! invertible transform A_i), while the optimality machinery needs
//! expectations under the *natural law* p (zero control, unscaled
//! noise). Because only the directly actuated block is stochastic and
//! its one-step transitions are Gaussian, the ratio p/q has a closed
//! form: a determinant factor per step plus a quadratic correction Q_i.
//! Folding Q_i into the running cost turns importance-weighted
//! optimization into plain cost-weighted averaging, which is what the
//! controller module executes.
//!
//! All arithmetic stays in the log domain; ratios are exponentiated
//! only inside normalized weight computations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dynamics::{natural_step_covariance, ControlSequence, DiffusionModel};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::state::StateVector;

/// Max-abs residual allowed between a trajectory's deterministic block
/// and its one-step prediction before the trajectory is rejected.
pub const A_BLOCK_RESIDUAL_TOL: f64 = 1e-9;

/// Relative tolerance for the strict control-channel noise check
/// (diffusion scale, control cost, and temperature must cohere).
pub const NOISE_ASSUMPTION_REL_TOL: f64 = 1e-9;

/// The distribution a trajectory is evaluated under.
#[derive(Clone, Copy)]
pub enum PathLaw<'a> {
    /// Uncontrolled dynamics with natural noise (u = 0, A = I).
    Natural,
    /// Mean-shifted, variance-transformed sampling dynamics.
    Sampling(&'a SamplingPolicy),
}

/// Mean shift and per-step covariance transform of the sampling law.
///
/// The shipped configuration scales noise isotropically, A_i = sqrt(nu) I;
/// the general constructor accepts arbitrary invertible per-step
/// transforms.
#[derive(Debug, Clone)]
pub struct SamplingPolicy {
    controls: ControlSequence,
    transforms: Vec<DMatrix<f64>>,
    nu: Option<f64>,
}

impl SamplingPolicy {
    /// Policy with A_i = sqrt(nu) I at every step.
    pub fn isotropic(controls: ControlSequence, nu: f64, n_c: usize) -> Result<Self> {
        assert!(nu > 0.0, "variance scale must be positive");
        let n = controls.len();
        let a = DMatrix::identity(n_c, n_c) * nu.sqrt();
        Ok(Self {
            controls,
            transforms: vec![a; n],
            nu: Some(nu),
        })
    }

    /// Policy with explicit per-step transforms; each must be
    /// invertible for the likelihood ratio to exist.
    pub fn with_transforms(
        controls: ControlSequence,
        transforms: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        assert_eq!(
            transforms.len(),
            controls.len(),
            "one transform per control step"
        );
        for (step, a) in transforms.iter().enumerate() {
            if !is_invertible(a) {
                return Err(Error::SingularTransform { step });
            }
        }
        Ok(Self {
            controls,
            transforms,
            nu: None,
        })
    }

    pub fn controls(&self) -> &ControlSequence {
        &self.controls
    }

    pub fn transform(&self, i: usize) -> &DMatrix<f64> {
        &self.transforms[i]
    }

    /// Isotropic variance scale, when the policy was built that way.
    pub fn nu(&self) -> Option<f64> {
        self.nu
    }
}

fn is_invertible(a: &DMatrix<f64>) -> bool {
    let lu = a.clone().lu();
    let det = lu.determinant();
    let scale: f64 = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    det.is_finite() && det.abs() > 1e-12 * scale.powi(a.nrows() as i32)
}

/// Inverse of an SPD matrix through its Cholesky factor.
fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(m, what)?.inverse())
}

fn spd_factor(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite(what))
}

/// Step innovation and mean shift:
/// z = (x_next_c - x_c)/dt - f_c(x, t), mu = G_c(x, t) u.
pub fn compute_z_mu(
    model: &(impl DiffusionModel + ?Sized),
    x: &StateVector,
    x_next: &StateVector,
    u: &DVector<f64>,
    t: f64,
    dt: f64,
) -> (DVector<f64>, DVector<f64>) {
    let d = model.dims();
    let f = model.drift(x, t);
    let mut z = DVector::zeros(d.n_c);
    for r in 0..d.n_c {
        z[r] = (x_next[d.n_a + r] - x[d.n_a + r]) / dt - f[d.n_a + r];
    }
    let mu = model.control_gain_c(x, t) * u;
    (z, mu)
}

/// The covariance-correction matrix of the likelihood ratio:
/// Sigma^-1 - (A^T Sigma A)^-1.
///
/// Always the inverse form; the uninverted matrix does not exist when
/// A = I (the correction degenerates to exactly zero, and the ratio
/// reduces to the mean-shift terms alone).
pub fn gamma_inverse(sigma: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_invertible(a) {
        return Err(Error::SingularTransform { step: 0 });
    }
    let sigma_inv = spd_inverse(sigma, "step covariance")?;
    let lambda = a.transpose() * sigma * a;
    let lambda_inv = spd_inverse(&lambda, "transformed step covariance")?;
    Ok(sigma_inv - lambda_inv)
}

/// Per-step quadratic correction of the log likelihood ratio:
/// (z-mu)^T GammaInv (z-mu) + 2 mu^T Sigma^-1 (z-mu) + mu^T Sigma^-1 mu.
pub fn q_term(
    z: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    gamma_inv: &DMatrix<f64>,
) -> Result<f64> {
    let chol = spd_factor(sigma, "step covariance")?;
    let d = z - mu;
    let sigma_inv_d = chol.solve(&d);
    let sigma_inv_mu = chol.solve(mu);
    Ok(d.dot(&(gamma_inv * &d)) + 2.0 * mu.dot(&sigma_inv_d) + mu.dot(&sigma_inv_mu))
}

/// Everything Theorem-level code needs about one transition.
#[derive(Debug, Clone)]
pub struct StepTerms {
    pub z: DVector<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub gamma_inv: DMatrix<f64>,
    pub q: f64,
}

/// Per-step likelihood terms along a trajectory.
#[derive(Debug, Clone)]
pub struct LikelihoodTerms {
    pub steps: Vec<StepTerms>,
}

impl LikelihoodTerms {
    /// Computes z, mu, covariances, and Q for every transition of `traj`
    /// under `policy`. Fails if the trajectory's deterministic block is
    /// inconsistent with the model or a covariance is degenerate.
    pub fn compute(
        model: &(impl DiffusionModel + ?Sized),
        policy: &SamplingPolicy,
        traj: &[StateVector],
    ) -> Result<Self> {
        check_a_block_consistency(model, traj, policy.controls().dt(), policy.controls().start_time())?;
        let controls = policy.controls();
        let dt = controls.dt();
        assert_eq!(
            traj.len(),
            controls.len() + 1,
            "trajectory must have one more state than the plan has steps"
        );
        let mut steps = Vec::with_capacity(controls.len());
        for i in 0..controls.len() {
            let t = controls.time_at(i);
            let (z, mu) = compute_z_mu(model, &traj[i], &traj[i + 1], controls.get(i), t, dt);
            let sigma = natural_step_covariance(model, &traj[i], t, dt);
            let a = policy.transform(i);
            let lambda = a.transpose() * &sigma * a;
            let gamma_inv = gamma_inverse(&sigma, a)?;
            let q = q_term(&z, &mu, &sigma, &gamma_inv)?;
            steps.push(StepTerms {
                z,
                mu,
                sigma,
                lambda,
                gamma_inv,
                q,
            });
        }
        Ok(Self { steps })
    }
}

/// Rejects trajectories whose deterministic block does not follow the
/// model's one-step prediction.
fn check_a_block_consistency(
    model: &(impl DiffusionModel + ?Sized),
    traj: &[StateVector],
    dt: f64,
    start_time: f64,
) -> Result<()> {
    let d = model.dims();
    for i in 0..traj.len().saturating_sub(1) {
        let t = start_time + i as f64 * dt;
        let f = model.drift(&traj[i], t);
        let mut worst = 0.0f64;
        for r in 0..d.n_a {
            let predicted = traj[i][r] + f[r] * dt;
            worst = worst.max((traj[i + 1][r] - predicted).abs());
        }
        if worst > A_BLOCK_RESIDUAL_TOL {
            return Err(Error::InconsistentTrajectory {
                step: i,
                residual: worst,
                tol: A_BLOCK_RESIDUAL_TOL,
            });
        }
    }
    Ok(())
}

/// Log density of a trajectory under the given law.
///
/// Per transition the stochastic block contributes a Gaussian factor
/// with covariance Sigma_i (natural law) or A_i^T Sigma_i A_i (sampling
/// law):
///
/// ```text
/// log P = sum_i [ -(n_c/2) log 2pi - (1/2) log|cov_i|
///                 - (dt/2) (z_i - mu_i)^T cov_i^-1 (z_i - mu_i) ]
/// ```
///
/// The deterministic block must follow the model exactly (within
/// `A_BLOCK_RESIDUAL_TOL`); otherwise the trajectory has probability
/// zero and an error is returned.
pub fn trajectory_log_density(
    model: &(impl DiffusionModel + ?Sized),
    law: PathLaw<'_>,
    traj: &[StateVector],
    dt: f64,
    start_time: f64,
) -> Result<f64> {
    check_a_block_consistency(model, traj, dt, start_time)?;
    let d = model.dims();
    let n_steps = traj.len() - 1;
    if let PathLaw::Sampling(p) = law {
        assert_eq!(p.controls().len(), n_steps, "plan length mismatch");
    }
    let zero_u = DVector::zeros(d.m);
    let mut log_p = 0.0;
    for i in 0..n_steps {
        let t = start_time + i as f64 * dt;
        let u = match law {
            PathLaw::Natural => &zero_u,
            PathLaw::Sampling(p) => p.controls().get(i),
        };
        let (z, mu) = compute_z_mu(model, &traj[i], &traj[i + 1], u, t, dt);
        let sigma = natural_step_covariance(model, &traj[i], t, dt);
        let cov = match law {
            PathLaw::Natural => sigma,
            PathLaw::Sampling(p) => {
                let a = p.transform(i);
                a.transpose() * sigma * a
            }
        };
        let chol = spd_factor(&cov, "step covariance")?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let dvec = &z - &mu;
        let quad = dvec.dot(&chol.solve(&dvec));
        log_p += -(d.n_c as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - 0.5 * dt * quad;
    }
    Ok(log_p)
}

/// Closed-form log of p(tau)/q(tau): natural law over sampling law.
///
/// ```text
/// log ratio = sum_i [ log|det A_i| - (dt/2) Q_i ]
/// ```
///
/// and equals `trajectory_log_density(Natural) -
/// trajectory_log_density(Sampling)` identically.
pub fn log_likelihood_ratio(
    model: &(impl DiffusionModel + ?Sized),
    policy: &SamplingPolicy,
    traj: &[StateVector],
) -> Result<f64> {
    let terms = LikelihoodTerms::compute(model, policy, traj)?;
    let dt = policy.controls().dt();
    let mut log_ratio = 0.0;
    for (i, s) in terms.steps.iter().enumerate() {
        let det = policy.transform(i).clone().lu().determinant().abs();
        log_ratio += det.ln() - 0.5 * dt * s.q;
    }
    Ok(log_ratio)
}

/// Scales the covariance correction by the temperature, giving the
/// matrix that enters the augmented running cost.
pub fn gamma_inv_tilde(gamma_inv: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    gamma_inv * lambda
}

/// Running cost with the likelihood-ratio correction folded in
/// (general form):
///
/// ```text
/// q~ = q + (1/2)(z-mu)^T GammaInvTilde (z-mu) + mu^T HInv (z-mu)
///        + (1/2) mu^T HInv mu
/// ```
pub fn augmented_running_cost_general(
    q_val: f64,
    z: &DVector<f64>,
    mu: &DVector<f64>,
    gamma_inv_tilde: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
) -> f64 {
    let d = z - mu;
    q_val + 0.5 * d.dot(&(gamma_inv_tilde * &d)) + mu.dot(&(h_inv * &d)) + 0.5 * mu.dot(&(h_inv * mu))
}

/// Running cost correction in the control-channel special case, written
/// directly in control coordinates:
///
/// ```text
/// q~ = q + ((1 - 1/nu)/2) du^T R du + u^T R du + (1/2) u^T R u
/// ```
pub fn augmented_running_cost(
    q_val: f64,
    u: &DVector<f64>,
    du: &DVector<f64>,
    r: &DMatrix<f64>,
    nu: f64,
) -> f64 {
    let r_du = r * du;
    let r_u = r * u;
    q_val + 0.5 * (1.0 - 1.0 / nu) * du.dot(&r_du) + u.dot(&r_du) + 0.5 * u.dot(&r_u)
}

/// When the diffusion is the control gain over sqrt(rho) and the
/// control cost is r I, the noise assumption ties the temperature to
/// lambda = r / rho. Returns an error describing the mismatch when the
/// configured lambda violates that by more than `NOISE_ASSUMPTION_REL_TOL`.
pub fn check_noise_assumption(r_diag: f64, rho: f64, lambda: f64) -> std::result::Result<(), String> {
    let implied = r_diag / rho;
    let rel = ((lambda - implied) / implied).abs();
    if rel > NOISE_ASSUMPTION_REL_TOL {
        Err(format!(
            "temperature {lambda:e} breaks the control-channel noise assumption: \
             r/rho = {implied:e} (rel. deviation {rel:.2e}); \
             the path-integral optimality interpretation is heuristic at this setting"
        ))
    } else {
        Ok(())
    }
}

/// Monte-Carlo estimate of the path-integral partition value.
#[derive(Debug, Clone, Copy)]
pub struct FkEstimate {
    /// Sample mean of exp(-S/lambda) over K uncontrolled rollouts.
    pub psi: f64,
    /// Standard error of the sample mean.
    pub std_err: f64,
    /// Rollouts that left the finite-state region and were charged the
    /// penalty cost instead.
    pub diverged: usize,
    pub rollouts: usize,
}

impl FkEstimate {
    /// The value-function reading of the estimate, -lambda log psi.
    pub fn value(&self, lambda: f64) -> f64 {
        -lambda * self.psi.ln()
    }

    /// Standard error of `value` (delta method).
    pub fn value_std_err(&self, lambda: f64) -> f64 {
        lambda * self.std_err / self.psi
    }
}

/// Estimates Psi(x0) = E_p[exp(-S(tau)/lambda)] by K uncontrolled
/// rollouts, where S is the state cost-to-go
/// `phi(x_N) + sum_i q(x_i, t_i) dt`.
///
/// Deterministic in (stream, K): rollout k consumes exactly the noise
/// cells (k, 0..horizon) regardless of worker count.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_estimate(
    model: &(impl DiffusionModel + ?Sized),
    q: &(impl Fn(&StateVector, f64) -> f64 + Sync),
    phi: &(impl Fn(&StateVector) -> f64 + Sync),
    lambda: f64,
    x0: &StateVector,
    horizon: usize,
    dt: f64,
    rollouts: usize,
    stream: &NoiseStream,
    divergence_penalty: f64,
) -> FkEstimate {
    use rayon::prelude::*;

    assert!(rollouts >= 1);
    let d = model.dims();
    let u = DVector::zeros(d.m);

    let costs: Vec<f64> = (0..rollouts)
        .into_par_iter()
        .map(|k| {
            let mut scratch = crate::dynamics::StepScratch::new(d);
            let mut x = x0.clone();
            let mut x_next = x0.clone();
            let mut eps = DVector::zeros(d.p);
            let mut s = 0.0;
            for i in 0..horizon {
                let t = i as f64 * dt;
                s += q(&x, t) * dt;
                stream.fill_cell(k as u64, i as u64, eps.as_mut_slice());
                crate::dynamics::euler_step_buffered(
                    model, &x, &u, &eps, t, dt, &mut scratch, &mut x_next,
                );
                std::mem::swap(&mut x, &mut x_next);
                if !x.all_finite() {
                    return divergence_penalty;
                }
            }
            s + phi(&x)
        })
        .collect();

    let diverged = costs.iter().filter(|&&c| c == divergence_penalty).count();
    let weights: Vec<f64> = costs.iter().map(|s| (-s / lambda).exp()).collect();
    let mean = weights.iter().sum::<f64>() / rollouts as f64;
    let var = if rollouts > 1 {
        weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (rollouts as f64 - 1.0)
    } else {
        0.0
    };
    FkEstimate {
        psi: mean,
        std_err: (var / rollouts as f64).sqrt(),
        diverged,
        rollouts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{euler_step, Dims};
    use approx::assert_relative_eq;

    /// Scalar fully stochastic model: dx = f_c dt + g u dt + b eps sqrt(dt).
    struct Scalar {
        f_c: f64,
        g: f64,
        b: f64,
    }

    impl DiffusionModel for Scalar {
        fn dims(&self) -> Dims {
            Dims {
                n_a: 0,
                n_c: 1,
                m: 1,
                p: 1,
            }
        }
        fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
            f_out[0] = self.f_c;
        }
        fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
            g_out[(0, 0)] = self.g;
        }
        fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
            b_out[(0, 0)] = self.b;
        }
    }

    fn state1(v: f64) -> StateVector {
        StateVector::new(DVector::from_vec(vec![v]), 0)
    }

    #[test]
    fn z_mu_match_hand_arithmetic() {
        // f_c=1, dt=0.1, x: 0 -> 0.2, G_c=2, u=3: z = 2-1 = 1, mu = 6
        let m = Scalar {
            f_c: 1.0,
            g: 2.0,
            b: 1.0,
        };
        let (z, mu) = compute_z_mu(
            &m,
            &state1(0.0),
            &state1(0.2),
            &DVector::from_vec(vec![3.0]),
            0.0,
            0.1,
        );
        assert_relative_eq!(z[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(mu[0], 6.0, max_relative = 1e-14);
    }

    #[test]
    fn z_equals_mu_on_noise_free_steps() {
        let m = Scalar {
            f_c: -0.3,
            g: 1.7,
            b: 0.5,
        };
        let x = state1(0.4);
        let u = DVector::from_vec(vec![0.9]);
        let x_next = euler_step(&m, &x, &u, &DVector::zeros(1), 0.0, 0.05);
        let (z, mu) = compute_z_mu(&m, &x, &x_next, &u, 0.0, 0.05);
        assert_relative_eq!(z[0], mu[0], max_relative = 1e-12);
    }

    #[test]
    fn zero_step_zero_control_gives_zero_terms() {
        let m = Scalar {
            f_c: 0.0,
            g: 2.0,
            b: 1.0,
        };
        let (z, mu) = compute_z_mu(&m, &state1(0.7), &state1(0.7), &DVector::zeros(1), 0.0, 0.1);
        assert_eq!(z[0], 0.0);
        assert_eq!(mu[0], 0.0);
    }

    #[test]
    fn gamma_inverse_identity_transform_is_bitwise_zero() {
        let sigma = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let g = gamma_inverse(&sigma, &DMatrix::identity(3, 3)).unwrap();
        assert!(
            g.iter().all(|v| *v == 0.0),
            "expected exact zero, got {g}"
        );
    }

    #[test]
    fn gamma_inverse_scalar_and_isotropic_cases() {
        let sigma = DMatrix::from_element(1, 1, 4.0);
        let a = DMatrix::from_element(1, 1, 2.0f64.sqrt());
        let g = gamma_inverse(&sigma, &a).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.125, max_relative = 1e-14);

        // A = sqrt(nu) I: (1 - 1/nu) Sigma^-1, nu = 4, Sigma = I
        let g = gamma_inverse(
            &DMatrix::identity(2, 2),
            &(DMatrix::identity(2, 2) * 2.0),
        )
        .unwrap();
        assert_relative_eq!(g[(0, 0)], 0.75, max_relative = 1e-14);
        assert_relative_eq!(g[(1, 1)], 0.75, max_relative = 1e-14);
        assert_relative_eq!(g[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_inverse_rejects_degenerate_inputs() {
        let singular_sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            gamma_inverse(&singular_sigma, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite(_))
        ));
        let sigma = DMatrix::identity(2, 2);
        assert!(matches!(
            gamma_inverse(&sigma, &DMatrix::zeros(2, 2)),
            Err(Error::SingularTransform { .. })
        ));
    }

    #[test]
    fn q_term_frozen_values() {
        let z = DVector::from_vec(vec![1.0]);
        let mu = DVector::from_vec(vec![0.5]);
        let sigma = DMatrix::identity(1, 1);

        // Girsanov-only: A = I
        let q = q_term(&z, &mu, &sigma, &DMatrix::zeros(1, 1)).unwrap();
        assert_relative_eq!(q, 0.75, max_relative = 1e-14);

        // A = sqrt(2): GammaInv = 1 - 1/2 = 0.5
        let gi = gamma_inverse(&sigma, &DMatrix::from_element(1, 1, 2.0f64.sqrt())).unwrap();
        let q = q_term(&z, &mu, &sigma, &gi).unwrap();
        assert_relative_eq!(q, 0.875, max_relative = 1e-12);

        // mu = 0 and GammaInv = 0: everything vanishes
        let q = q_term(&z, &DVector::zeros(1), &sigma, &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn log_density_matches_scalar_gaussian() {
        // One unit step of pure noise: z = 1, Sigma = 1, dt = 1, u = 0:
        // log p = log(1/sqrt(2 pi)) - 1/2
        let m = Scalar {
            f_c: 0.0,
            g: 1.0,
            b: 1.0,
        };
        let traj = vec![state1(0.0), state1(1.0)];
        let lp = trajectory_log_density(&m, PathLaw::Natural, &traj, 1.0, 0.0).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5;
        assert_relative_eq!(lp, expected, max_relative = 1e-14);
    }

    #[test]
    fn ratio_is_density_difference_and_trivial_at_identity() {
        let m = Scalar {
            f_c: 0.2,
            g: 1.5,
            b: 0.8,
        };
        let dt = 0.05;
        let stream = NoiseStream::new(7);
        let controls = ControlSequence::new(
            vec![
                DVector::from_vec(vec![0.4]),
                DVector::from_vec(vec![-0.2]),
                DVector::from_vec(vec![1.1]),
            ],
            dt,
            0.0,
        );
        // Simulate under the sampling law so the trajectory is typical.
        let nu: f64 = 2.5;
        let mut traj = vec![state1(0.1)];
        for i in 0..3 {
            let eps = DVector::from_vec(vec![nu.sqrt() * stream.standard_normal(0, i as u64, 0)]);
            let x = euler_step(&m, traj.last().unwrap(), controls.get(i), &eps, 0.0, dt);
            traj.push(x);
        }

        let policy = SamplingPolicy::isotropic(controls.clone(), nu, 1).unwrap();
        let lr = log_likelihood_ratio(&m, &policy, &traj).unwrap();
        let lp = trajectory_log_density(&m, PathLaw::Natural, &traj, dt, 0.0).unwrap();
        let lq = trajectory_log_density(&m, PathLaw::Sampling(&policy), &traj, dt, 0.0).unwrap();
        assert_relative_eq!(lr, lp - lq, max_relative = 1e-11);

        // u = 0, A = I: the two laws coincide and the ratio is one.
        let zero = SamplingPolicy::isotropic(ControlSequence::zeros(3, 1, dt), 1.0, 1).unwrap();
        let lr0 = log_likelihood_ratio(&m, &zero, &traj).unwrap();
        assert_eq!(lr0, 0.0);
    }

    #[test]
    fn inconsistent_a_block_is_rejected() {
        struct OneA;
        impl DiffusionModel for OneA {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 1,
                    n_c: 1,
                    m: 1,
                    p: 1,
                }
            }
            fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                f_out[0] = x[1];
                f_out[1] = 0.0;
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out[(0, 0)] = 1.0;
            }
            fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
                b_out[(0, 0)] = 1.0;
            }
        }
        let good = vec![
            StateVector::from_blocks(&[0.0], &[1.0]),
            StateVector::from_blocks(&[0.1], &[1.3]),
        ];
        assert!(trajectory_log_density(&OneA, PathLaw::Natural, &good, 0.1, 0.0).is_ok());
        let bad = vec![
            StateVector::from_blocks(&[0.0], &[1.0]),
            StateVector::from_blocks(&[0.2], &[1.3]),
        ];
        let err = trajectory_log_density(&OneA, PathLaw::Natural, &bad, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::InconsistentTrajectory { step: 0, .. }));
        assert!(err.to_string().contains("inconsistent trajectory"));
    }

    #[test]
    fn augmented_cost_special_case_frozen_value() {
        // q=1, u=2, du=1, R=1, nu=2: 1 + 0.25 + 2 + 2 = 5.25
        let r = DMatrix::identity(1, 1);
        let q = augmented_running_cost(
            1.0,
            &DVector::from_vec(vec![2.0]),
            &DVector::from_vec(vec![1.0]),
            &r,
            2.0,
        );
        assert_relative_eq!(q, 5.25, max_relative = 1e-14);
    }

    #[test]
    fn augmented_cost_is_plain_cost_at_rest() {
        let r = DMatrix::identity(2, 2) * 3.0;
        let q = augmented_running_cost(
            7.5,
            &DVector::zeros(2),
            &DVector::zeros(2),
            &r,
            1.0,
        );
        assert_eq!(q, 7.5);
        // u = 0, nu = 1 with nonzero du: correction vanishes exactly
        let q = augmented_running_cost(
            7.5,
            &DVector::zeros(2),
            &DVector::from_vec(vec![1.0, -2.0]),
            &r,
            1.0,
        );
        assert_eq!(q, 7.5);
    }

    #[test]
    fn general_and_special_augmented_costs_agree() {
        // Control-channel configuration: B_c = G_c / sqrt(rho),
        // R = r I, lambda = r / rho, A = sqrt(nu) I, z - mu = G_c du.
        let g_c = DMatrix::from_row_slice(2, 2, &[1.3, 0.4, -0.2, 0.9]);
        let r_mat = DMatrix::identity(2, 2) * 2.0;
        let (r, rho, nu): (f64, f64, f64) = (2.0, 50.0, 3.0);
        let lambda = r / rho;
        let u = DVector::from_vec(vec![0.7, -1.1]);
        let du = DVector::from_vec(vec![0.3, 0.5]);
        let dt = 0.05;

        let mu = &g_c * &u;
        let z = &g_c * (&u + &du);
        let sigma = (&g_c * g_c.transpose()) * (dt / rho);
        let a = DMatrix::identity(2, 2) * nu.sqrt();
        let gamma_inv = gamma_inverse(&sigma, &a).unwrap();
        // Gamma~^-1 = lambda dt Gamma^-1 brings the dt-bearing covariance
        // back to the control-cost scale.
        let git = gamma_inv_tilde(&gamma_inv, lambda * dt);
        let g_inv = g_c.clone().try_inverse().unwrap();
        let h_inv = g_inv.transpose() * &r_mat * &g_inv;

        let general = augmented_running_cost_general(2.0, &z, &mu, &git, &h_inv);
        let special = augmented_running_cost(2.0, &u, &du, &r_mat, nu);
        assert_relative_eq!(general, special, max_relative = 1e-12);
    }

    #[test]
    fn noise_assumption_check() {
        assert!(check_noise_assumption(1.0, 10_000.0, 1e-4).is_ok());
        let err = check_noise_assumption(1.0, 10_000.0, 2e-4).unwrap_err();
        assert!(err.contains("heuristic"));
    }

    #[test]
    fn fk_constant_costs_are_exact() {
        let m = Scalar {
            f_c: 0.0,
            g: 1.0,
            b: 1.0,
        };
        let stream = NoiseStream::new(3);
        let est = feynman_kac_estimate(
            &m,
            &|_x: &StateVector, _t| 0.0,
            &|_x: &StateVector| 0.0,
            1.0,
            &state1(0.0),
            5,
            0.1,
            64,
            &stream,
            1e6,
        );
        assert_eq!(est.psi, 1.0);
        assert_eq!(est.std_err, 0.0);
        assert_eq!(est.diverged, 0);

        let est = feynman_kac_estimate(
            &m,
            &|_x: &StateVector, _t| 0.0,
            &|_x: &StateVector| 2.0,
            1.0,
            &state1(0.0),
            5,
            0.1,
            64,
            &stream,
            1e6,
        );
        assert_relative_eq!(est.psi, (-2.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn fk_counts_diverged_rollouts() {
        struct Explode;
        impl DiffusionModel for Explode {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 0,
                    n_c: 1,
                    m: 1,
                    p: 1,
                }
            }
            fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                // Finite until the state grows, then NaN.
                f_out[0] = if x[0].abs() > 0.2 { f64::NAN } else { 0.0 };
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out[(0, 0)] = 1.0;
            }
            fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
                b_out[(0, 0)] = 1.0;
            }
        }
        let est = feynman_kac_estimate(
            &Explode,
            &|_x: &StateVector, _t| 0.0,
            &|_x: &StateVector| 0.0,
            1.0,
            &state1(0.0),
            20,
            0.1,
            256,
            &NoiseStream::new(11),
            1e6,
        );
        assert!(est.diverged > 0, "expected some rollouts to blow up");
        assert!(est.psi < 1.0);
    }

    use crate::lq::scalar_log_partition_coeffs;

    /// Discrete-time LQ Riccati recursion for the matching control
    /// problem: running cost (q_c/2) x^2 + (r/2) u^2, dynamics x' = x + u dt.
    /// Hand recursion, independent of the lq module.
    fn scalar_lq_riccati(q_c: f64, r: f64, dt: f64, n: usize) -> f64 {
        let mut p = 0.0f64;
        for _ in 0..n {
            p = q_c * dt + p * r / (r + p * dt);
        }
        p
    }

    #[test]
    fn fk_matches_exact_scalar_lq_value() {
        let (q_c, sigma, r, dt, n, x0) = (3.0, 0.5, 2.0, 0.05, 50, 0.8);
        let lambda = sigma * sigma * r;

        // The log transform linearizes the discrete problem exactly:
        // the quadratic coefficient of -lambda log Psi is half the
        // Riccati gain.
        let (a0, b0) = scalar_log_partition_coeffs(q_c, sigma, lambda, dt, n);
        let p0 = scalar_lq_riccati(q_c, r, dt, n);
        assert_relative_eq!(p0, 2.0 * lambda * a0, max_relative = 1e-12);

        let m = Scalar {
            f_c: 0.0,
            g: 1.0,
            b: sigma,
        };
        let est = feynman_kac_estimate(
            &m,
            &|x: &StateVector, _t| 0.5 * q_c * x[0] * x[0],
            &|_x: &StateVector| 0.0,
            lambda,
            &state1(x0),
            n,
            dt,
            20_000,
            &NoiseStream::new(2024),
            1e6,
        );
        let exact = (-(a0 * x0 * x0 + b0)).exp();
        assert_eq!(est.diverged, 0);
        assert!(
            (est.psi - exact).abs() <= 3.0 * est.std_err,
            "psi {} vs exact {} (3 SE = {})",
            est.psi,
            exact,
            3.0 * est.std_err
        );
    }

    #[test]
    fn fk_is_deterministic_in_seed_and_k() {
        let m = Scalar {
            f_c: -0.5,
            g: 1.0,
            b: 0.7,
        };
        let q = |x: &StateVector, _t: f64| 0.5 * x[0] * x[0];
        let phi = |x: &StateVector| 0.5 * x[0] * x[0];
        let run = || {
            feynman_kac_estimate(
                &m,
                &q,
                &phi,
                0.49,
                &state1(1.0),
                30,
                0.05,
                500,
                &NoiseStream::new(99),
                1e6,
            )
        };
        let (a, b) = (run(), run());
        assert_eq!(a.psi.to_bits(), b.psi.to_bits());
        assert_eq!(a.std_err.to_bits(), b.std_err.to_bits());
    }
}
