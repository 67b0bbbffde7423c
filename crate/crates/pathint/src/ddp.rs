//! Receding-horizon iLQG trajectory optimizer, used as the
//! deterministic baseline against the sampling controller.
//!
//! Each control period the optimizer linearizes the discrete step map
//! along the current plan (central finite differences), quadratizes the
//! cost, runs a regularized Riccati-style backward pass for feedforward
//! and feedback gains, and line-searches the resulting policy. The
//! first planned control is executed and the plan shifts forward one
//! step with the same warm-start rule as the sampling controller, so
//! closed-loop comparisons isolate the optimizer.
//!
//! The dynamics expansion is first order (no second-order dynamics
//! tensors); the plant interface stays derivative-free.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{euler_step, ControlLimits, ControlSequence, DiffusionModel};
use crate::error::{Error, Result};
use crate::mppi::StageCost;
use crate::state::StateVector;
use crate::task::MpcController;

/// Deterministic discrete-time dynamics the optimizer works on.
///
/// Any [`DiffusionModel`] qualifies through the blanket impl (its
/// noise-free Euler step). Test problems implement the trait directly.
pub trait DdpDynamics: Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Size of the indirectly actuated block, used when rebuilding
    /// partitioned states. Zero for unpartitioned test systems.
    fn a_block_dim(&self) -> usize {
        0
    }

    /// Discrete step map x_{i+1} = F(x_i, u_i).
    fn step(&self, x: &StateVector, u: &DVector<f64>, t: f64, dt: f64) -> StateVector;

    /// Jacobians of the step map at (x, u) by central differences with
    /// step 1e-5 scaled by component magnitude. `a_out` is n x n,
    /// `b_out` n x m.
    fn linearize(
        &self,
        x: &StateVector,
        u: &DVector<f64>,
        t: f64,
        dt: f64,
        a_out: &mut DMatrix<f64>,
        b_out: &mut DMatrix<f64>,
    ) {
        let n = self.state_dim();
        let m = self.control_dim();
        for j in 0..n {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_mut_vector()[j] += h;
            xm.as_mut_vector()[j] -= h;
            let fp = self.step(&xp, u, t, dt);
            let fm = self.step(&xm, u, t, dt);
            for i in 0..n {
                a_out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..m {
            let h = 1e-5 * u[j].abs().max(1.0);
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fp = self.step(x, &up, t, dt);
            let fm = self.step(x, &um, t, dt);
            for i in 0..n {
                b_out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
}

impl<M: DiffusionModel> DdpDynamics for M {
    fn state_dim(&self) -> usize {
        self.dims().n()
    }

    fn control_dim(&self) -> usize {
        self.dims().m
    }

    fn a_block_dim(&self) -> usize {
        self.dims().n_a
    }

    fn step(&self, x: &StateVector, u: &DVector<f64>, t: f64, dt: f64) -> StateVector {
        euler_step(self, x, u, &DVector::zeros(self.dims().p), t, dt)
    }
}

/// Quadratic expansion of one stage cost about a nominal (x, u).
#[derive(Debug, Clone)]
pub struct CostExpansion {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

impl CostExpansion {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            lx: DVector::zeros(n),
            lu: DVector::zeros(m),
            lxx: DMatrix::zeros(n, n),
            luu: DMatrix::zeros(m, m),
            lux: DMatrix::zeros(m, n),
        }
    }

    fn is_finite(&self) -> bool {
        self.lx.iter().all(|v| v.is_finite())
            && self.lu.iter().all(|v| v.is_finite())
            && self.lxx.iter().all(|v| v.is_finite())
            && self.luu.iter().all(|v| v.is_finite())
            && self.lux.iter().all(|v| v.is_finite())
    }
}

/// Cost interface for the optimizer: stage and terminal values plus
/// their local quadratic models. The expansion methods default to
/// central finite differences so any smooth black-box cost works;
/// implementations with cheap exact derivatives override them.
pub trait DdpCost: Sync {
    fn stage(&self, x: &StateVector, u: &DVector<f64>, t: f64) -> f64;

    fn terminal(&self, _x: &StateVector) -> f64 {
        0.0
    }

    fn stage_expansion(&self, x: &StateVector, u: &DVector<f64>, t: f64, out: &mut CostExpansion) {
        fd_cost_expansion(&|xx, uu| self.stage(xx, uu, t), x, u, out);
    }

    fn terminal_expansion(&self, x: &StateVector, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        fd_state_quadratics(&|xx| self.terminal(xx), x, grad, hess);
    }
}

/// FD step for cost derivatives: coarser than the dynamics step because
/// second differences divide by h^2.
fn cost_fd_step(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

/// Central-difference gradient and Hessian of a scalar function of the
/// state, written into `grad` (n) and `hess` (n x n, symmetric).
pub fn fd_state_quadratics(
    f: &dyn Fn(&StateVector) -> f64,
    x: &StateVector,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) {
    let n = x.dim();
    let f0 = f(x);
    let eval = |bumps: &[(usize, f64)]| {
        let mut xb = x.clone();
        for &(j, h) in bumps {
            xb.as_mut_vector()[j] += h;
        }
        f(&xb)
    };
    let h: Vec<f64> = (0..n).map(|j| cost_fd_step(x[j])).collect();
    for j in 0..n {
        let fp = eval(&[(j, h[j])]);
        let fm = eval(&[(j, -h[j])]);
        grad[j] = (fp - fm) / (2.0 * h[j]);
        hess[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
    }
    for j in 0..n {
        for k in 0..j {
            let pp = eval(&[(j, h[j]), (k, h[k])]);
            let pm = eval(&[(j, h[j]), (k, -h[k])]);
            let mp = eval(&[(j, -h[j]), (k, h[k])]);
            let mm = eval(&[(j, -h[j]), (k, -h[k])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[j] * h[k]);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
}

/// Full joint expansion of a stage cost over (x, u) by central
/// differences, including the mixed block.
pub fn fd_cost_expansion(
    f: &dyn Fn(&StateVector, &DVector<f64>) -> f64,
    x: &StateVector,
    u: &DVector<f64>,
    out: &mut CostExpansion,
) {
    let n = x.dim();
    let m = u.len();
    let f0 = f(x, u);
    // Index space: 0..n are state components, n..n+m control components.
    let eval = |bumps: &[(usize, f64)]| {
        let mut xb = x.clone();
        let mut ub = u.clone();
        for &(j, h) in bumps {
            if j < n {
                xb.as_mut_vector()[j] += h;
            } else {
                ub[j - n] += h;
            }
        }
        f(&xb, &ub)
    };
    let h: Vec<f64> = (0..n + m)
        .map(|j| cost_fd_step(if j < n { x[j] } else { u[j - n] }))
        .collect();
    let mut grad = vec![0.0; n + m];
    let mut hess = DMatrix::zeros(n + m, n + m);
    for j in 0..n + m {
        let fp = eval(&[(j, h[j])]);
        let fm = eval(&[(j, -h[j])]);
        grad[j] = (fp - fm) / (2.0 * h[j]);
        hess[(j, j)] = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
    }
    for j in 0..n + m {
        for k in 0..j {
            let pp = eval(&[(j, h[j]), (k, h[k])]);
            let pm = eval(&[(j, h[j]), (k, -h[k])]);
            let mp = eval(&[(j, -h[j]), (k, h[k])]);
            let mm = eval(&[(j, -h[j]), (k, -h[k])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[j] * h[k]);
            hess[(j, k)] = v;
            hess[(k, j)] = v;
        }
    }
    for j in 0..n {
        out.lx[j] = grad[j];
        for k in 0..n {
            out.lxx[(j, k)] = hess[(j, k)];
        }
    }
    for j in 0..m {
        out.lu[j] = grad[n + j];
        for k in 0..m {
            out.luu[(j, k)] = hess[(n + j, n + k)];
        }
        for k in 0..n {
            out.lux[(j, k)] = hess[(n + j, k)];
        }
    }
}

/// Wraps a plant stage cost for the optimizer: the state cost passes
/// through unchanged (quadratized by finite differences) and a
/// quadratic control-effort term (u - u_ref)' R (u - u_ref) / 2 is
/// added with exact derivatives. Suits plants whose state cost is
/// already smooth.
pub struct SmoothedCost<'a, C: StageCost + ?Sized> {
    inner: &'a C,
    r: DMatrix<f64>,
    u_ref: DVector<f64>,
}

impl<'a, C: StageCost + ?Sized> SmoothedCost<'a, C> {
    pub fn new(inner: &'a C, r: DMatrix<f64>, u_ref: DVector<f64>) -> Self {
        assert_eq!(r.nrows(), r.ncols(), "control effort weight must be square");
        assert_eq!(r.nrows(), u_ref.len(), "weight/reference dimension mismatch");
        Self { inner, r, u_ref }
    }
}

impl<C: StageCost + ?Sized> DdpCost for SmoothedCost<'_, C> {
    fn stage(&self, x: &StateVector, u: &DVector<f64>, t: f64) -> f64 {
        let du = u - &self.u_ref;
        self.inner.running(x, false, t) + 0.5 * (du.transpose() * &self.r * &du)[(0, 0)]
    }

    fn stage_expansion(&self, x: &StateVector, u: &DVector<f64>, t: f64, out: &mut CostExpansion) {
        fd_state_quadratics(
            &|xx| self.inner.running(xx, false, t),
            x,
            &mut out.lx,
            &mut out.lxx,
        );
        let du = u - &self.u_ref;
        out.lu.gemv(1.0, &self.r, &du, 0.0);
        out.luu.copy_from(&self.r);
        out.lux.fill(0.0);
    }

    fn terminal_expansion(&self, _x: &StateVector, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
        grad.fill(0.0);
        hess.fill(0.0);
    }
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct DdpConfig {
    /// Horizon length in steps (N).
    pub horizon: usize,
    /// Step length in seconds.
    pub dt: f64,
    /// Optimization iterations allowed per control period.
    pub max_iterations: usize,
    /// First nonzero regularization level.
    pub reg_min: f64,
    /// Give up raising regularization past this.
    pub reg_max: f64,
    /// Multiplier applied on each rejection.
    pub reg_growth: f64,
    /// Line-search step sizes, descending from 1.
    pub line_search_steps: Vec<f64>,
    /// Stop iterating once an accepted step improves cost by less.
    pub cost_tolerance: f64,
    /// Value appended to the plan tail on each shift.
    pub u_init: DVector<f64>,
    /// Control box limits, applied in the forward pass.
    pub limits: ControlLimits,
}

impl DdpConfig {
    pub fn new(m: usize) -> Self {
        Self {
            horizon: 50,
            dt: 0.02,
            max_iterations: 10,
            reg_min: 1e-6,
            reg_max: 1e10,
            reg_growth: 10.0,
            line_search_steps: vec![1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
            cost_tolerance: 1e-6,
            u_init: DVector::zeros(m),
            limits: ControlLimits::unbounded(m),
        }
    }

    pub fn validate(&self, n_controls: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must cover at least one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        if !(self.reg_min > 0.0 && self.reg_max > self.reg_min && self.reg_growth > 1.0) {
            return Err(Error::Config(
                "regularization schedule must satisfy 0 < min < max, growth > 1".into(),
            ));
        }
        if self.line_search_steps.is_empty()
            || self.line_search_steps[0] != 1.0
            || !self
                .line_search_steps
                .windows(2)
                .all(|w| w[0] > w[1] && w[1] > 0.0)
        {
            return Err(Error::Config(
                "line-search steps must descend strictly from 1".into(),
            ));
        }
        if !(self.cost_tolerance >= 0.0) {
            return Err(Error::Config("cost tolerance must be non-negative".into()));
        }
        if self.u_init.len() != n_controls {
            return Err(Error::Config("u_init dimension mismatch".into()));
        }
        if self.limits.clamp(&self.u_init) != self.u_init {
            return Err(Error::Config("u_init must lie inside the control box".into()));
        }
        Ok(())
    }
}

/// Local linear policy about a nominal trajectory: at step i play
/// u = us[i] + alpha k[i] + feedback[i] (x - xs[i]).
#[derive(Debug, Clone)]
pub struct LocalPolicy {
    /// Nominal states, length N+1.
    pub xs: Vec<StateVector>,
    /// Nominal controls, length N.
    pub us: Vec<DVector<f64>>,
    /// Feedforward steps, length N.
    pub k: Vec<DVector<f64>>,
    /// Feedback gains (m x n), length N.
    pub feedback: Vec<DMatrix<f64>>,
    /// Sum over steps of k' Q_u, the linear coefficient of the local
    /// cost model; non-positive by construction.
    pub linear_decrease: f64,
}

impl LocalPolicy {
    /// Model-predicted cost decrease for a line-search step alpha;
    /// non-negative for alpha in (0, 1].
    pub fn expected_decrease(&self, alpha: f64) -> f64 {
        (0.5 * alpha * alpha - alpha) * self.linear_decrease
    }
}

/// Riccati-style backward sweep over a quadratized trajectory.
///
/// `reg` is added to the control Hessian before inversion; a
/// non-positive-definite regularized Hessian is reported as an error so
/// the caller can raise `reg` and retry.
#[allow(clippy::too_many_arguments)]
pub fn backward_pass(
    xs: &[StateVector],
    us: &[DVector<f64>],
    a_mats: &[DMatrix<f64>],
    b_mats: &[DMatrix<f64>],
    stages: &[CostExpansion],
    terminal_grad: &DVector<f64>,
    terminal_hess: &DMatrix<f64>,
    reg: f64,
) -> Result<LocalPolicy> {
    let n_steps = us.len();
    assert_eq!(xs.len(), n_steps + 1, "need N+1 states for N controls");
    let n = terminal_grad.len();
    let m = us[0].len();

    let mut vx = terminal_grad.clone();
    let mut vxx = terminal_hess.clone();
    let mut k = vec![DVector::zeros(m); n_steps];
    let mut feedback = vec![DMatrix::zeros(m, n); n_steps];
    let mut linear_decrease = 0.0;

    for i in (0..n_steps).rev() {
        let (a, b, l) = (&a_mats[i], &b_mats[i], &stages[i]);
        let qx = &l.lx + a.transpose() * &vx;
        let qu = &l.lu + b.transpose() * &vx;
        let qxx = &l.lxx + a.transpose() * &vxx * a;
        let quu = &l.luu + b.transpose() * &vxx * b;
        let qux = &l.lux + b.transpose() * &vxx * a;

        let mut quu_reg = (&quu + quu.transpose()) * 0.5;
        for j in 0..m {
            quu_reg[(j, j)] += reg;
        }
        let chol = nalgebra::Cholesky::new(quu_reg)
            .ok_or(Error::HessianNotInvertible { step: i, reg })?;
        k[i] = -chol.solve(&qu);
        feedback[i] = -chol.solve(&qux);
        if !k[i].iter().all(|v| v.is_finite()) || !feedback[i].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("backward-pass gains"));
        }
        linear_decrease += k[i].dot(&qu);

        // Value recursion with the regularized solve's gains.
        let kt_quu = feedback[i].transpose() * &quu;
        vx = qx + &kt_quu * &k[i] + feedback[i].transpose() * &qu + qux.transpose() * &k[i];
        vxx = qxx + kt_quu * &feedback[i]
            + feedback[i].transpose() * &qux
            + qux.transpose() * &feedback[i];
        vxx = (&vxx + vxx.transpose()) * 0.5;
    }

    Ok(LocalPolicy {
        xs: xs.to_vec(),
        us: us.to_vec(),
        k,
        feedback,
        linear_decrease,
    })
}

/// Rolls the policy forward with step size `alpha`, clamping controls.
/// Returns the new trajectory and its cost, or `None` if the rollout
/// left the finite range (the caller rejects that step size).
pub fn forward_pass(
    dynamics: &(impl DdpDynamics + ?Sized),
    cost: &(impl DdpCost + ?Sized),
    limits: &ControlLimits,
    policy: &LocalPolicy,
    alpha: f64,
    t0: f64,
    dt: f64,
) -> Option<(Vec<StateVector>, Vec<DVector<f64>>, f64)> {
    assert!((0.0..=1.0).contains(&alpha), "step size must be in [0, 1]");
    let n_steps = policy.us.len();
    let mut xs = Vec::with_capacity(n_steps + 1);
    let mut us = Vec::with_capacity(n_steps);
    let mut j = 0.0;
    xs.push(policy.xs[0].clone());
    for i in 0..n_steps {
        let x = &xs[i];
        let dx = x.as_vector() - policy.xs[i].as_vector();
        let mut u = &policy.us[i] + alpha * &policy.k[i];
        u.gemv(1.0, &policy.feedback[i], &dx, 1.0);
        limits.clamp_in_place(&mut u);
        let t = t0 + i as f64 * dt;
        j += cost.stage(x, &u, t);
        let x_next = dynamics.step(x, &u, t, dt);
        if !x_next.all_finite() {
            return None;
        }
        us.push(u);
        xs.push(x_next);
    }
    j += cost.terminal(&xs[n_steps]);
    j.is_finite().then_some((xs, us, j))
}

/// Next regularization level after a rejection: strictly increasing
/// from zero through `reg_min` until `reg_max`.
fn raise_reg(reg: f64, cfg: &DdpConfig) -> f64 {
    if reg == 0.0 {
        cfg.reg_min
    } else {
        (reg * cfg.reg_growth).min(cfg.reg_max)
    }
}

fn lower_reg(reg: f64, cfg: &DdpConfig) -> f64 {
    let r = reg / cfg.reg_growth;
    if r < cfg.reg_min {
        0.0
    } else {
        r
    }
}

/// Receding-horizon wrapper around the optimizer; drop-in peer of the
/// sampling controller for closed-loop runs.
pub struct DdpController<'a, D: DdpDynamics, C: DdpCost> {
    dynamics: &'a D,
    cost: &'a C,
    cfg: DdpConfig,
    plan: ControlSequence,
    /// Gains from the final backward pass of the latest optimize call.
    pub last_policy: Option<LocalPolicy>,
    /// Nominal cost after each accepted iteration of the latest
    /// optimize call, starting with the initial rollout's cost.
    pub cost_trace: Vec<f64>,
    /// Regularization level at the end of the latest optimize call.
    pub last_regularization: f64,
    /// The latest optimize call failed and the executed control came
    /// from the unimproved plan.
    pub last_solve_failed: bool,
    last_seconds: f64,
}

impl<'a, D: DdpDynamics, C: DdpCost> DdpController<'a, D, C> {
    pub fn new(dynamics: &'a D, cost: &'a C, cfg: DdpConfig) -> Result<Self> {
        cfg.validate(dynamics.control_dim())?;
        let mut plan = ControlSequence::zeros(cfg.horizon, dynamics.control_dim(), cfg.dt);
        for i in 0..cfg.horizon {
            plan.get_mut(i).copy_from(&cfg.u_init);
        }
        Ok(Self {
            dynamics,
            cost,
            cfg,
            plan,
            last_policy: None,
            cost_trace: Vec::new(),
            last_regularization: 0.0,
            last_solve_failed: false,
            last_seconds: 0.0,
        })
    }

    pub fn config(&self) -> &DdpConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &ControlSequence {
        &self.plan
    }

    /// Cost of rolling the current plan out from `x0`; `None` if the
    /// rollout diverges.
    fn rollout_plan(&self, x0: &StateVector) -> Option<(Vec<StateVector>, Vec<DVector<f64>>, f64)> {
        let n_steps = self.cfg.horizon;
        let t0 = self.plan.start_time();
        let mut xs = Vec::with_capacity(n_steps + 1);
        let mut us = Vec::with_capacity(n_steps);
        let mut j = 0.0;
        xs.push(x0.clone());
        for i in 0..n_steps {
            let u = self.cfg.limits.clamp(self.plan.get(i));
            let t = t0 + i as f64 * self.cfg.dt;
            j += self.cost.stage(&xs[i], &u, t);
            let x_next = self.dynamics.step(&xs[i], &u, t, self.cfg.dt);
            if !x_next.all_finite() {
                return None;
            }
            us.push(u);
            xs.push(x_next);
        }
        j += self.cost.terminal(&xs[n_steps]);
        j.is_finite().then_some((xs, us, j))
    }

    /// Optimizes the plan in place from the measured state. Iterates
    /// backward/forward passes up to the configured budget; a rejected
    /// line search raises regularization and retries, and the plan is
    /// kept unchanged if regularization tops out.
    pub fn optimize(&mut self, x0: &StateVector) -> Result<()> {
        let n_steps = self.cfg.horizon;
        let n = self.dynamics.state_dim();
        let m = self.dynamics.control_dim();
        let dt = self.cfg.dt;
        let t0 = self.plan.start_time();

        let (mut xs, mut us, mut j) = match self.rollout_plan(x0) {
            Some(v) => v,
            None => {
                // The warm-started plan diverges from this state; fall
                // back to a cold plan before giving up.
                for i in 0..n_steps {
                    self.plan.get_mut(i).copy_from(&self.cfg.u_init);
                }
                self.rollout_plan(x0)
                    .ok_or(Error::NonFinite("nominal trajectory"))?
            }
        };
        self.cost_trace.clear();
        self.cost_trace.push(j);

        let mut a_mats = vec![DMatrix::zeros(n, n); n_steps];
        let mut b_mats = vec![DMatrix::zeros(n, m); n_steps];
        let mut stages = vec![CostExpansion::zeros(n, m); n_steps];
        let mut term_grad = DVector::zeros(n);
        let mut term_hess = DMatrix::zeros(n, n);

        let mut reg = 0.0;
        let mut stale = true;
        let mut iterations = 0;
        while iterations < self.cfg.max_iterations {
            iterations += 1;
            if stale {
                for i in 0..n_steps {
                    let t = t0 + i as f64 * dt;
                    self.dynamics
                        .linearize(&xs[i], &us[i], t, dt, &mut a_mats[i], &mut b_mats[i]);
                    if !a_mats[i].iter().all(|v| v.is_finite())
                        || !b_mats[i].iter().all(|v| v.is_finite())
                    {
                        return Err(Error::NonFinite("dynamics Jacobian"));
                    }
                    self.cost.stage_expansion(&xs[i], &us[i], t, &mut stages[i]);
                    if !stages[i].is_finite() {
                        return Err(Error::NonFinite("cost expansion"));
                    }
                }
                self.cost
                    .terminal_expansion(&xs[n_steps], &mut term_grad, &mut term_hess);
                stale = false;
            }

            let policy = loop {
                match backward_pass(
                    &xs, &us, &a_mats, &b_mats, &stages, &term_grad, &term_hess, reg,
                ) {
                    Ok(p) => break p,
                    Err(Error::HessianNotInvertible { step, .. }) => {
                        if reg >= self.cfg.reg_max {
                            self.last_regularization = reg;
                            return Err(Error::HessianNotInvertible { step, reg });
                        }
                        reg = raise_reg(reg, &self.cfg);
                    }
                    Err(e) => return Err(e),
                }
            };

            let mut accepted = None;
            for &alpha in &self.cfg.line_search_steps {
                if let Some((xs_new, us_new, j_new)) = forward_pass(
                    self.dynamics,
                    self.cost,
                    &self.cfg.limits,
                    &policy,
                    alpha,
                    t0,
                    dt,
                ) {
                    if j_new < j {
                        accepted = Some((xs_new, us_new, j_new));
                        break;
                    }
                }
            }
            self.last_policy = Some(policy);

            match accepted {
                Some((xs_new, us_new, j_new)) => {
                    let improvement = j - j_new;
                    xs = xs_new;
                    us = us_new;
                    j = j_new;
                    self.cost_trace.push(j);
                    stale = true;
                    reg = lower_reg(reg, &self.cfg);
                    if improvement < self.cfg.cost_tolerance {
                        break;
                    }
                }
                None => {
                    if reg >= self.cfg.reg_max {
                        break; // keep the nominal plan
                    }
                    reg = raise_reg(reg, &self.cfg);
                }
            }
        }
        self.last_regularization = reg;

        for i in 0..n_steps {
            self.plan.get_mut(i).copy_from(&us[i]);
        }
        Ok(())
    }
}

impl<D: DdpDynamics, C: DdpCost> MpcController for DdpController<'_, D, C> {
    fn mpc_step(&mut self, x: &StateVector) -> DVector<f64> {
        let start = Instant::now();
        self.last_solve_failed = self.optimize(x).is_err();
        let u = self.cfg.limits.clamp(self.plan.get(0));
        self.plan.shift_left(&self.cfg.u_init);
        self.last_seconds = start.elapsed().as_secs_f64();
        u
    }

    fn last_step_seconds(&self) -> f64 {
        self.last_seconds
    }
}
