//! Controlled-diffusion system abstraction and its fixed-step
//! Euler–Maruyama discretization.
//!
//! Systems have the form
//!
//! ```text
//! dx = f(x,t) dt + G(x,t) u dt + B(x,t) dw
//! ```
//!
//! where `G` and `B` are zero in the first `n_a` rows: control and noise
//! enter only the directly actuated block. The discrete step is
//!
//! ```text
//! x' = x + (f + G u) dt + B eps sqrt(dt)
//! ```
//!
//! with `eps` standard normal. No higher-order integrator is offered:
//! the trajectory likelihood machinery is derived for exactly this
//! discretization and must match the simulator step for step.

use nalgebra::{DMatrix, DVector};

use crate::state::StateVector;

/// Block and input sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Indirectly actuated states (deterministic rows).
    pub n_a: usize,
    /// Directly actuated states (rows where control and noise enter).
    pub n_c: usize,
    /// Control dimension.
    pub m: usize,
    /// Noise dimension. Shipped plants use p = m (noise through the
    /// control channel); the general p != m path exists for the
    /// likelihood machinery.
    pub p: usize,
}

impl Dims {
    pub fn n(&self) -> usize {
        self.n_a + self.n_c
    }
}

/// A controlled diffusion, affine in control and noise.
///
/// Implementations provide drift over the full state and the nonzero
/// (bottom-block) parts of the control gain and diffusion matrices.
/// The `_into` methods write into caller-owned buffers so rollout loops
/// stay allocation-free.
pub trait DiffusionModel: Sync {
    fn dims(&self) -> Dims;

    /// Noise scale for models whose diffusion is the control gain
    /// divided by sqrt(rho) (noise enters through the control channel).
    /// `None` for models with an independent diffusion matrix.
    fn rho(&self) -> Option<f64> {
        None
    }

    /// Writes f(x,t) (length n) into `f_out`.
    fn drift_into(&self, x: &StateVector, t: f64, f_out: &mut DVector<f64>);

    /// Writes G_c(x,t) (n_c x m) into `g_out`.
    fn control_gain_c_into(&self, x: &StateVector, t: f64, g_out: &mut DMatrix<f64>);

    /// Writes B_c(x,t) (n_c x p) into `b_out`. Defaults to
    /// G_c / sqrt(rho), which requires `rho()` and p = m.
    fn diffusion_c_into(&self, x: &StateVector, t: f64, b_out: &mut DMatrix<f64>) {
        let rho = self
            .rho()
            .expect("model must override diffusion_c_into or provide rho");
        let d = self.dims();
        assert_eq!(d.p, d.m, "default diffusion requires p = m");
        self.control_gain_c_into(x, t, b_out);
        *b_out /= rho.sqrt();
    }

    fn drift(&self, x: &StateVector, t: f64) -> DVector<f64> {
        let mut f = DVector::zeros(self.dims().n());
        self.drift_into(x, t, &mut f);
        f
    }

    fn control_gain_c(&self, x: &StateVector, t: f64) -> DMatrix<f64> {
        let d = self.dims();
        let mut g = DMatrix::zeros(d.n_c, d.m);
        self.control_gain_c_into(x, t, &mut g);
        g
    }

    fn diffusion_c(&self, x: &StateVector, t: f64) -> DMatrix<f64> {
        let d = self.dims();
        let mut b = DMatrix::zeros(d.n_c, d.p);
        self.diffusion_c_into(x, t, &mut b);
        b
    }

    /// Full n x m control gain; the top n_a rows are zero by
    /// construction.
    fn control_gain(&self, x: &StateVector, t: f64) -> DMatrix<f64> {
        let d = self.dims();
        let mut g = DMatrix::zeros(d.n(), d.m);
        g.rows_mut(d.n_a, d.n_c)
            .copy_from(&self.control_gain_c(x, t));
        g
    }

    /// Full n x p diffusion; the top n_a rows are zero by construction.
    fn diffusion(&self, x: &StateVector, t: f64) -> DMatrix<f64> {
        let d = self.dims();
        let mut b = DMatrix::zeros(d.n(), d.p);
        b.rows_mut(d.n_a, d.n_c).copy_from(&self.diffusion_c(x, t));
        b
    }
}

/// Reusable buffers for `euler_step_buffered`.
#[derive(Debug, Clone)]
pub struct StepScratch {
    f: DVector<f64>,
    g_c: DMatrix<f64>,
    b_c: DMatrix<f64>,
}

impl StepScratch {
    pub fn new(dims: Dims) -> Self {
        Self {
            f: DVector::zeros(dims.n()),
            g_c: DMatrix::zeros(dims.n_c, dims.m),
            b_c: DMatrix::zeros(dims.n_c, dims.p),
        }
    }
}

/// One Euler–Maruyama step: x' = x + (f + G u) dt + B eps sqrt(dt).
///
/// The a-block advances deterministically; control and noise touch only
/// the c-block. Panics on dimension mismatch. A non-finite result is
/// not an error here; callers check `StateVector::all_finite` and
/// penalize diverged rollouts.
pub fn euler_step(
    model: &(impl DiffusionModel + ?Sized),
    x: &StateVector,
    u: &DVector<f64>,
    eps: &DVector<f64>,
    t: f64,
    dt: f64,
) -> StateVector {
    let mut out = x.clone();
    let mut scratch = StepScratch::new(model.dims());
    euler_step_buffered(model, x, u, eps, t, dt, &mut scratch, &mut out);
    out
}

/// `euler_step` writing into `out` with caller-owned scratch buffers.
#[allow(clippy::too_many_arguments)]
pub fn euler_step_buffered(
    model: &(impl DiffusionModel + ?Sized),
    x: &StateVector,
    u: &DVector<f64>,
    eps: &DVector<f64>,
    t: f64,
    dt: f64,
    scratch: &mut StepScratch,
    out: &mut StateVector,
) {
    let d = model.dims();
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(x.dim(), d.n(), "state dimension mismatch");
    assert_eq!(u.len(), d.m, "control dimension mismatch");
    assert_eq!(eps.len(), d.p, "noise dimension mismatch");

    model.drift_into(x, t, &mut scratch.f);
    model.control_gain_c_into(x, t, &mut scratch.g_c);

    out.as_mut_vector().copy_from(x.as_vector());
    out.as_mut_vector().axpy(dt, &scratch.f, 1.0);
    out.as_mut_vector()
        .rows_mut(d.n_a, d.n_c)
        .gemv(dt, &scratch.g_c, u, 1.0);
    if eps.iter().any(|e| *e != 0.0) {
        model.diffusion_c_into(x, t, &mut scratch.b_c);
        out.as_mut_vector()
            .rows_mut(d.n_a, d.n_c)
            .gemv(dt.sqrt(), &scratch.b_c, eps, 1.0);
    }
}

/// Step covariance of the natural (uncontrolled) transition noise:
/// B_c B_c^T dt, symmetric positive semidefinite.
pub fn natural_step_covariance(
    model: &(impl DiffusionModel + ?Sized),
    x: &StateVector,
    t: f64,
    dt: f64,
) -> DMatrix<f64> {
    assert!(dt > 0.0, "dt must be positive");
    let b_c = model.diffusion_c(x, t);
    let mut cov = &b_c * b_c.transpose();
    cov *= dt;
    cov
}

/// Per-dimension box limits on controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLimits {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl ControlLimits {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "limit dimension mismatch");
        assert!(
            lo.iter().zip(hi.iter()).all(|(l, h)| l <= h),
            "lower limit exceeds upper limit"
        );
        Self { lo, hi }
    }

    /// Symmetric limits [-b, b] in every dimension.
    pub fn symmetric(m: usize, b: f64) -> Self {
        Self::new(DVector::from_element(m, -b), DVector::from_element(m, b))
    }

    /// No-op limits (infinite box).
    pub fn unbounded(m: usize) -> Self {
        Self::symmetric(m, f64::INFINITY)
    }

    /// Clamps a single component.
    pub fn clamp_component(&self, j: usize, v: f64) -> f64 {
        v.clamp(self.lo[j], self.hi[j])
    }

    pub fn clamp_in_place(&self, u: &mut DVector<f64>) {
        for j in 0..u.len() {
            u[j] = u[j].clamp(self.lo[j], self.hi[j]);
        }
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut v = u.clone();
        self.clamp_in_place(&mut v);
        v
    }
}

/// Open-loop control plan over N steps of length dt.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    controls: Vec<DVector<f64>>,
    dt: f64,
    start_time: f64,
}

impl ControlSequence {
    pub fn new(controls: Vec<DVector<f64>>, dt: f64, start_time: f64) -> Self {
        assert!(!controls.is_empty(), "plan must cover at least one step");
        assert!(dt > 0.0, "dt must be positive");
        let m = controls[0].len();
        assert!(
            controls.iter().all(|u| u.len() == m && u.iter().all(|v| v.is_finite())),
            "controls must share dimension and be finite"
        );
        Self {
            controls,
            dt,
            start_time,
        }
    }

    /// All-zero plan of N steps with control dimension m.
    pub fn zeros(n_steps: usize, m: usize, dt: f64) -> Self {
        Self::new(vec![DVector::zeros(m); n_steps], dt, 0.0)
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn control_dim(&self) -> usize {
        self.controls[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.dt
    }

    pub fn get(&self, i: usize) -> &DVector<f64> {
        &self.controls[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.controls[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.controls.iter()
    }

    /// Receding-horizon shift: drops u_0, moves everything one slot
    /// left, and fills the tail with `u_init`. Start time advances by dt.
    pub fn shift_left(&mut self, u_init: &DVector<f64>) {
        assert_eq!(u_init.len(), self.control_dim());
        self.controls.rotate_left(1);
        let n = self.controls.len();
        self.controls[n - 1].copy_from(u_init);
        self.start_time += self.dt;
    }

    pub fn clamp(&mut self, limits: &ControlLimits) {
        for u in &mut self.controls {
            limits.clamp_in_place(u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// dx = -x dt + u dt + eps sqrt(dt), all scalar, fully actuated.
    struct ScalarLinear;

    impl DiffusionModel for ScalarLinear {
        fn dims(&self) -> Dims {
            Dims {
                n_a: 0,
                n_c: 1,
                m: 1,
                p: 1,
            }
        }

        fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
            f_out[0] = -x[0];
        }

        fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
            g_out[(0, 0)] = 1.0;
        }

        fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
            b_out[(0, 0)] = 1.0;
        }
    }

    /// Two a-states integrating one noisy c-state; exercises the
    /// partition structure with p = m = 1.
    struct Chain;

    impl DiffusionModel for Chain {
        fn dims(&self) -> Dims {
            Dims {
                n_a: 2,
                n_c: 1,
                m: 1,
                p: 1,
            }
        }

        fn rho(&self) -> Option<f64> {
            Some(4.0)
        }

        fn drift_into(&self, x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
            f_out[0] = x[2];
            f_out[1] = x[0];
            f_out[2] = -0.5 * x[2];
        }

        fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
            g_out[(0, 0)] = 2.0;
        }
    }

    #[test]
    fn zero_model_is_identity() {
        struct Inert;
        impl DiffusionModel for Inert {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 1,
                    n_c: 2,
                    m: 2,
                    p: 2,
                }
            }
            fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                f_out.fill(0.0);
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out.fill(0.0);
            }
            fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
                b_out.fill(0.0);
            }
        }
        let x = StateVector::from_blocks(&[1.0], &[2.0, 3.0]);
        let x2 = euler_step(
            &Inert,
            &x,
            &DVector::from_vec(vec![5.0, -5.0]),
            &DVector::zeros(2),
            0.0,
            0.1,
        );
        assert_eq!(x2, x);
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        // x=1, u=0, eps=1, dt=0.01: x' = 1 - 0.01 + 0.1 = 1.09
        let x = StateVector::new(DVector::from_vec(vec![1.0]), 0);
        let x2 = euler_step(
            &ScalarLinear,
            &x,
            &DVector::zeros(1),
            &DVector::from_vec(vec![1.0]),
            0.0,
            0.01,
        );
        assert_relative_eq!(x2[0], 1.09, max_relative = 1e-15);
    }

    #[test]
    fn partition_rows_are_exactly_zero() {
        let x = StateVector::from_blocks(&[0.3, -0.7], &[1.1]);
        let g = Chain.control_gain(&x, 0.0);
        let b = Chain.diffusion(&x, 0.0);
        for r in 0..2 {
            assert_eq!(g[(r, 0)], 0.0);
            assert_eq!(b[(r, 0)], 0.0);
        }
        assert_eq!(b[(2, 0)], 1.0); // G_c / sqrt(rho) = 2 / 2
    }

    #[test]
    fn noise_never_touches_a_block() {
        let x = StateVector::from_blocks(&[0.3, -0.7], &[1.1]);
        let u = DVector::from_vec(vec![0.4]);
        let noisy = euler_step(&Chain, &x, &u, &DVector::from_vec(vec![2.5]), 0.0, 0.02);
        let clean = euler_step(&Chain, &x, &u, &DVector::zeros(1), 0.0, 0.02);
        assert_eq!(noisy[0], clean[0]);
        assert_eq!(noisy[1], clean[1]);
        assert_ne!(noisy[2], clean[2]);
    }

    #[test]
    fn weak_order_probe_error_halves_with_dt() {
        // Integrate dx = -x dt to T = 1; global Euler error is O(dt).
        let run = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut x = StateVector::new(DVector::from_vec(vec![1.0]), 0);
            let u = DVector::zeros(1);
            let eps = DVector::zeros(1);
            for _ in 0..steps {
                x = euler_step(&ScalarLinear, &x, &u, &eps, 0.0, dt);
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = run(0.02) / run(0.04);
        assert!(
            (ratio - 0.5).abs() < 0.05,
            "error ratio {ratio} not within 10% of 1/2"
        );
    }

    #[test]
    fn natural_covariance_matches_hand_product() {
        struct TwoChannel;
        impl DiffusionModel for TwoChannel {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 0,
                    n_c: 2,
                    m: 2,
                    p: 2,
                }
            }
            fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                f_out.fill(0.0);
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out.fill_with_identity();
            }
            fn diffusion_c_into(&self, _x: &StateVector, _t: f64, b_out: &mut DMatrix<f64>) {
                b_out.copy_from_slice(&[1.0, 1.0, 0.0, 1.0]); // column-major [[1,0],[1,1]]
            }
        }
        let x = StateVector::zeros(0, 2);
        let cov = natural_step_covariance(&TwoChannel, &x, 0.0, 1.0);
        assert_eq!(cov[(0, 0)], 1.0);
        assert_eq!(cov[(0, 1)], 1.0);
        assert_eq!(cov[(1, 0)], 1.0);
        assert_eq!(cov[(1, 1)], 2.0);

        // B_c = I scaled: identity case with dt
        struct Iso;
        impl DiffusionModel for Iso {
            fn dims(&self) -> Dims {
                Dims {
                    n_a: 0,
                    n_c: 2,
                    m: 2,
                    p: 2,
                }
            }
            fn rho(&self) -> Option<f64> {
                Some(10_000.0)
            }
            fn drift_into(&self, _x: &StateVector, _t: f64, f_out: &mut DVector<f64>) {
                f_out.fill(0.0);
            }
            fn control_gain_c_into(&self, _x: &StateVector, _t: f64, g_out: &mut DMatrix<f64>) {
                g_out.fill_with_identity();
            }
        }
        let cov = natural_step_covariance(&Iso, &x, 0.0, 1.0);
        assert_relative_eq!(cov[(0, 0)], 1e-4, max_relative = 1e-12);
        assert_eq!(cov[(0, 1)], 0.0);
    }

    #[test]
    fn shift_left_drops_head_and_appends_init() {
        let mut seq = ControlSequence::new(
            vec![
                DVector::from_vec(vec![1.0]),
                DVector::from_vec(vec![2.0]),
                DVector::from_vec(vec![3.0]),
            ],
            0.1,
            0.0,
        );
        seq.shift_left(&DVector::from_vec(vec![9.0]));
        assert_eq!(seq.get(0)[0], 2.0);
        assert_eq!(seq.get(1)[0], 3.0);
        assert_eq!(seq.get(2)[0], 9.0);
        assert_relative_eq!(seq.start_time(), 0.1);
    }

    #[test]
    fn clamp_respects_box() {
        let lim = ControlLimits::symmetric(2, 1.0);
        let v = lim.clamp(&DVector::from_vec(vec![-3.0, 0.5]));
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 0.5);
    }
}
