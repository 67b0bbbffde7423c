//! Sampling-based receding-horizon controller.
//!
//! Each control period the controller perturbs its current plan with K
//! random control variations, simulates all K rollouts, scores every
//! timestep of every rollout with an augmented running cost (plant cost
//! plus the likelihood-ratio correction from [`crate::likelihood`]),
//! and moves each planned control toward the reward-weighted average
//! of the sampled variations. The first control is executed and the
//! plan shifts forward one step.
//!
//! Weighting is per timestep: the variation at step i is weighted by
//! the softmax of the cost-to-go from step i onward, so early steps are
//! judged by whole-horizon outcomes while late steps only by their own
//! tails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{euler_step_buffered, ControlLimits, ControlSequence, DiffusionModel, StepScratch};
use crate::error::{Error, Result};
use crate::likelihood::check_noise_assumption;
use crate::rng::NoiseStream;
use crate::state::StateVector;

/// Stage cost interface the sampling controller optimizes against.
///
/// Costs are pure functions of state; control effort enters through the
/// controller's own quadratic correction terms. `is_crash` marks states
/// that freeze the vehicle for the rest of a rollout (the flag is
/// sticky and passed back into the cost so crashes keep accruing).
pub trait StageCost: Sync {
    /// Running cost q(x, t); `crashed` is the sticky crash flag.
    fn running(&self, x: &StateVector, crashed: bool, t: f64) -> f64;

    /// Terminal cost added once at the end of the horizon.
    fn terminal(&self, _x: &StateVector, _crashed: bool) -> f64 {
        0.0
    }

    /// Whether this state counts as a crash (ground/obstacle contact).
    fn is_crash(&self, _x: &StateVector) -> bool {
        false
    }
}

/// Solver configuration.
#[derive(Debug, Clone)]
pub struct MppiConfig {
    /// Number of sampled rollouts per optimization pass (K).
    pub rollouts: usize,
    /// Horizon length in steps (N).
    pub horizon: usize,
    /// Step length in seconds.
    pub dt: f64,
    /// Softmax temperature.
    pub lambda: f64,
    /// Exploration variance multiplier (sampling variance = nu times
    /// the natural variance).
    pub nu: f64,
    /// Control cost matrix R (SPD).
    pub r: DMatrix<f64>,
    /// Value appended to the plan tail on each shift.
    pub u_init: DVector<f64>,
    /// Control box limits.
    pub limits: ControlLimits,
    /// Cost-to-go substituted for rollouts that leave the finite-state
    /// region.
    pub penalty_cost: f64,
    /// Seed for all perturbation sampling.
    pub master_seed: u64,
    /// Optimization passes per control period.
    pub iterations: usize,
    /// Enforce the temperature/noise coherence (lambda = r/rho) instead
    /// of merely warning about it.
    pub strict_noise_check: bool,
}

impl MppiConfig {
    /// Reasonable defaults around a given control dimension; callers
    /// override the fields that matter for their plant.
    pub fn new(m: usize) -> Self {
        Self {
            rollouts: 100,
            horizon: 50,
            dt: 0.02,
            lambda: 1.0,
            nu: 1.0,
            r: DMatrix::identity(m, m),
            u_init: DVector::zeros(m),
            limits: ControlLimits::unbounded(m),
            penalty_cost: 1e6,
            master_seed: 0,
            iterations: 1,
            strict_noise_check: true,
        }
    }

    /// Checks invariants; returns warnings that do not block a run.
    pub fn validate(&self, model: &(impl DiffusionModel + ?Sized)) -> Result<Vec<String>> {
        let m = model.dims().m;
        if self.rollouts == 0 || self.horizon == 0 {
            return Err(Error::Config("need at least one rollout and one step".into()));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.nu.is_nan() || self.nu < 1.0 {
            return Err(Error::Config(
                "exploration variance multiplier must be at least 1".into(),
            ));
        }
        if self.r.nrows() != m || self.r.ncols() != m {
            return Err(Error::Config(format!(
                "control cost must be {m}x{m} for this plant"
            )));
        }
        if nalgebra::Cholesky::new(self.r.clone()).is_none() {
            return Err(Error::Config("control cost matrix must be SPD".into()));
        }
        if self.u_init.len() != m {
            return Err(Error::Config("u_init dimension mismatch".into()));
        }
        let clamped = self.limits.clamp(&self.u_init);
        if clamped != self.u_init {
            return Err(Error::Config("u_init must lie inside the control box".into()));
        }

        let mut warnings = Vec::new();
        let rho = model.rho().ok_or_else(|| {
            Error::Config("sampling controller requires a control-channel noise scale".into())
        })?;
        match uniform_diagonal(&self.r) {
            Some(r_scalar) => {
                if let Err(msg) = check_noise_assumption(r_scalar, rho, self.lambda) {
                    if self.strict_noise_check {
                        return Err(Error::Config(msg));
                    }
                    eprintln!("warning: {msg}");
                    warnings.push(msg);
                }
            }
            None => {
                let msg = "control cost is not a multiple of the identity; \
                           temperature/noise coherence not checked"
                    .to_string();
                if self.strict_noise_check {
                    return Err(Error::Config(msg));
                }
                eprintln!("warning: {msg}");
                warnings.push(msg);
            }
        }
        Ok(warnings)
    }
}

fn uniform_diagonal(r: &DMatrix<f64>) -> Option<f64> {
    let d = r[(0, 0)];
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            let expect = if i == j { d } else { 0.0 };
            if (r[(i, j)] - expect).abs() > 1e-12 * d.abs().max(1.0) {
                return None;
            }
        }
    }
    Some(d)
}

/// One optimization pass worth of sampled data, laid out flat for
/// parallel writes: rollout k owns `perturbations[k*n*m..(k+1)*n*m]`
/// and `costs_to_go[k*n..(k+1)*n]`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub rollouts: usize,
    pub horizon: usize,
    pub control_dim: usize,
    /// Effective (post-clamp) control perturbations, indexed [k][i][j].
    pub perturbations: Vec<f64>,
    /// Stage costs q~ per step, indexed [k][i]; terminal cost folded
    /// into the cost-to-go column, not stored here.
    pub stage_costs: Vec<f64>,
    /// Cost from step i to the horizon end, indexed [k][i].
    pub costs_to_go: Vec<f64>,
    /// Sticky crash flag per rollout.
    pub crashed: Vec<bool>,
    /// Rollouts that left the finite-state region; their cost-to-go
    /// column is the penalty cost.
    pub diverged: Vec<bool>,
}

impl RolloutBatch {
    pub fn new(rollouts: usize, horizon: usize, control_dim: usize) -> Self {
        Self {
            rollouts,
            horizon,
            control_dim,
            perturbations: vec![0.0; rollouts * horizon * control_dim],
            stage_costs: vec![0.0; rollouts * horizon],
            costs_to_go: vec![0.0; rollouts * horizon],
            crashed: vec![false; rollouts],
            diverged: vec![false; rollouts],
        }
    }

    /// Perturbation vector for rollout k at step i.
    pub fn perturbation(&self, k: usize, i: usize) -> &[f64] {
        let m = self.control_dim;
        let at = (k * self.horizon + i) * m;
        &self.perturbations[at..at + m]
    }

    /// Cost-to-go for rollout k from step i onward.
    pub fn cost_to_go(&self, k: usize, i: usize) -> f64 {
        self.costs_to_go[k * self.horizon + i]
    }
}

/// Fills the perturbation tensor with
/// `du = sqrt(nu) * eps / (sqrt(rho) * sqrt(dt))`,
/// one noise cell per (rollout, step). Deterministic in the stream.
pub fn sample_perturbations(
    cfg: &MppiConfig,
    model: &(impl DiffusionModel + ?Sized),
    stream: &NoiseStream,
    batch: &mut RolloutBatch,
) {
    let rho = model.rho().expect("validated config implies a noise scale");
    let scale = cfg.nu.sqrt() / (rho.sqrt() * cfg.dt.sqrt());
    let n = cfg.horizon;
    let m = batch.control_dim;
    batch
        .perturbations
        .par_chunks_mut(n * m)
        .enumerate()
        .for_each(|(k, chunk)| {
            for i in 0..n {
                let cell = &mut chunk[i * m..(i + 1) * m];
                stream.fill_cell(k as u64, i as u64, cell);
                for v in cell.iter_mut() {
                    *v *= scale;
                }
            }
        });
}

/// Control-effort part of the augmented stage cost:
/// `((1 - 1/nu)/2) du'R du + u'R du + (1/2) u'R u`.
///
/// The diagonal fast path avoids the matrix product; both paths are the
/// same arithmetic when R is diagonal.
struct ControlCost {
    r: DMatrix<f64>,
    r_diag: Option<DVector<f64>>,
    half_one_minus_inv_nu: f64,
}

impl ControlCost {
    fn new(r: &DMatrix<f64>, nu: f64) -> Self {
        let diag = uniform_or_plain_diagonal(r);
        Self {
            r: r.clone(),
            r_diag: diag,
            half_one_minus_inv_nu: 0.5 * (1.0 - 1.0 / nu),
        }
    }

    fn eval(&self, u: &[f64], du: &[f64], scratch: &mut DVector<f64>) -> f64 {
        match &self.r_diag {
            Some(d) => {
                let mut acc = 0.0;
                for j in 0..u.len() {
                    let (uj, dj, rj) = (u[j], du[j], d[j]);
                    acc += self.half_one_minus_inv_nu * rj * dj * dj
                        + rj * uj * dj
                        + 0.5 * rj * uj * uj;
                }
                acc
            }
            None => {
                // scratch = R du, then R u
                for row in 0..u.len() {
                    let mut s = 0.0;
                    for col in 0..u.len() {
                        s += self.r[(row, col)] * du[col];
                    }
                    scratch[row] = s;
                }
                let mut acc = 0.0;
                for j in 0..u.len() {
                    acc += (self.half_one_minus_inv_nu * du[j] + u[j]) * scratch[j];
                }
                for row in 0..u.len() {
                    let mut s = 0.0;
                    for col in 0..u.len() {
                        s += self.r[(row, col)] * u[col];
                    }
                    acc += 0.5 * u[row] * s;
                }
                acc
            }
        }
    }
}

fn uniform_or_plain_diagonal(r: &DMatrix<f64>) -> Option<DVector<f64>> {
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            if i != j && r[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some(r.diagonal())
}

/// Simulates every rollout in the batch from `x0` under the perturbed
/// plan and fills stage costs and costs-to-go.
///
/// Perturbed controls are clamped before use and the tensor is
/// overwritten with the effective (post-clamp) perturbations so that
/// the cost terms, the simulated trajectory, and the later control
/// update all see the same variation. Crashes freeze the state (the
/// cost keeps accruing with the crash flag set); non-finite states mark
/// the rollout diverged and its whole cost-to-go column becomes the
/// penalty cost.
pub fn rollout_batch(
    model: &(impl DiffusionModel + ?Sized),
    cost: &(impl StageCost + ?Sized),
    cfg: &MppiConfig,
    x0: &StateVector,
    plan: &ControlSequence,
    batch: &mut RolloutBatch,
) {
    assert_eq!(plan.len(), cfg.horizon, "plan length must match the horizon");
    let n = cfg.horizon;
    let m = batch.control_dim;
    let dims = model.dims();
    let ctrl_cost = ControlCost::new(&cfg.r, cfg.nu);
    let start_time = plan.start_time();
    let dt = cfg.dt;

    let RolloutBatch {
        perturbations,
        stage_costs,
        costs_to_go,
        crashed,
        diverged,
        ..
    } = batch;

    perturbations
        .par_chunks_mut(n * m)
        .zip(stage_costs.par_chunks_mut(n))
        .zip(costs_to_go.par_chunks_mut(n))
        .zip(crashed.par_iter_mut().zip(diverged.par_iter_mut()))
        .for_each_init(
            || RolloutScratch::new(dims, x0),
            |scratch, (((du_k, stage_k), ctg_k), (crash_k, div_k))| {
                scratch.x.as_mut_vector().copy_from(x0.as_vector());
                let mut is_crashed = false;
                let mut is_diverged = false;

                for i in 0..n {
                    let t = start_time + i as f64 * dt;
                    let du_i = &mut du_k[i * m..(i + 1) * m];
                    // Effective control: clamp(u + du); store back the
                    // clamped variation.
                    for j in 0..m {
                        let uj = plan.get(i)[j];
                        let eff = cfg.limits.clamp_component(j, uj + du_i[j]);
                        scratch.u_eff[j] = eff;
                        du_i[j] = eff - uj;
                    }
                    stage_k[i] = cost.running(&scratch.x, is_crashed, t)
                        + ctrl_cost.eval(plan.get(i).as_slice(), du_i, &mut scratch.r_work);

                    if !is_crashed {
                        euler_step_buffered(
                            model,
                            &scratch.x,
                            &scratch.u_eff,
                            &scratch.eps_zero,
                            t,
                            dt,
                            &mut scratch.step,
                            &mut scratch.x_next,
                        );
                        if !scratch.x_next.all_finite() {
                            is_diverged = true;
                            break;
                        }
                        std::mem::swap(&mut scratch.x, &mut scratch.x_next);
                        if cost.is_crash(&scratch.x) {
                            is_crashed = true;
                        }
                    }
                }

                *crash_k = is_crashed;
                *div_k = is_diverged;
                if is_diverged {
                    for v in ctg_k.iter_mut() {
                        *v = cfg.penalty_cost;
                    }
                    for v in stage_k.iter_mut() {
                        *v = 0.0;
                    }
                    return;
                }

                // Reverse cumulative sum; the virtual column past the
                // horizon is the terminal cost. A stage cost can
                // overflow to infinity while the state itself is still
                // finite, so the accumulation re-checks finiteness and
                // demotes such rollouts to the penalty column too.
                let mut tail = cost.terminal(&scratch.x, is_crashed);
                for i in (0..n).rev() {
                    tail += stage_k[i];
                    if !tail.is_finite() {
                        *div_k = true;
                        for v in ctg_k.iter_mut() {
                            *v = cfg.penalty_cost;
                        }
                        for v in stage_k.iter_mut() {
                            *v = 0.0;
                        }
                        return;
                    }
                    ctg_k[i] = tail;
                }
            },
        );
}

struct RolloutScratch {
    x: StateVector,
    x_next: StateVector,
    u_eff: DVector<f64>,
    eps_zero: DVector<f64>,
    r_work: DVector<f64>,
    step: StepScratch,
}

impl RolloutScratch {
    fn new(dims: crate::dynamics::Dims, x0: &StateVector) -> Self {
        Self {
            x: x0.clone(),
            x_next: x0.clone(),
            u_eff: DVector::zeros(dims.m),
            eps_zero: DVector::zeros(dims.p),
            r_work: DVector::zeros(dims.m),
            step: StepScratch::new(dims),
        }
    }
}

/// Softmax weights over one cost-to-go column, computed after
/// subtracting the column minimum (shift invariance makes this licit
/// and keeps the exponentials in range).
pub fn importance_weights_into(costs: &[f64], lambda: f64, out: &mut [f64]) {
    assert_eq!(costs.len(), out.len());
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (w, s) in out.iter_mut().zip(costs) {
        let v = (-(s - min) / lambda).exp();
        *w = v;
        total += v;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// Allocating convenience wrapper around [`importance_weights_into`].
pub fn importance_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; costs.len()];
    importance_weights_into(costs, lambda, &mut out);
    out
}

/// Moves every planned control toward the reward-weighted average of
/// its sampled variations, one softmax per timestep over that step's
/// costs-to-go, then clamps to the control box.
pub fn update_controls(
    plan: &mut ControlSequence,
    batch: &RolloutBatch,
    lambda: f64,
    limits: &ControlLimits,
    weight_scratch: &mut Vec<f64>,
    column_scratch: &mut Vec<f64>,
) {
    let (kk, n, m) = (batch.rollouts, batch.horizon, batch.control_dim);
    weight_scratch.resize(kk, 0.0);
    column_scratch.resize(kk, 0.0);
    for i in 0..n {
        for k in 0..kk {
            column_scratch[k] = batch.costs_to_go[k * n + i];
        }
        importance_weights_into(column_scratch, lambda, weight_scratch);
        let u_i = plan.get_mut(i);
        for (k, w) in weight_scratch.iter().enumerate() {
            let du = &batch.perturbations[(k * n + i) * m..(k * n + i) * m + m];
            for j in 0..m {
                u_i[j] += w * du[j];
            }
        }
        for j in 0..m {
            u_i[j] = limits.clamp_component(j, u_i[j]);
        }
    }
}

/// The receding-horizon sampling controller.
pub struct MppiController<'a, M: DiffusionModel + ?Sized, C: StageCost + ?Sized> {
    model: &'a M,
    cost: &'a C,
    cfg: MppiConfig,
    plan: ControlSequence,
    stream: NoiseStream,
    pass_count: u64,
    batch: RolloutBatch,
    weight_scratch: Vec<f64>,
    column_scratch: Vec<f64>,
    /// Wall-clock time spent inside the latest `mpc_step`.
    pub last_step_seconds: f64,
}

impl<'a, M: DiffusionModel + ?Sized, C: StageCost + ?Sized> MppiController<'a, M, C> {
    /// Validates the configuration and initializes the plan to
    /// `u_init` everywhere.
    pub fn new(model: &'a M, cost: &'a C, cfg: MppiConfig) -> Result<Self> {
        cfg.validate(model)?;
        let m = model.dims().m;
        let plan = ControlSequence::new(
            vec![cfg.u_init.clone(); cfg.horizon],
            cfg.dt,
            0.0,
        );
        let stream = NoiseStream::new(cfg.master_seed);
        let batch = RolloutBatch::new(cfg.rollouts, cfg.horizon, m);
        Ok(Self {
            model,
            cost,
            cfg,
            plan,
            stream,
            pass_count: 0,
            batch,
            weight_scratch: Vec::new(),
            column_scratch: Vec::new(),
            last_step_seconds: 0.0,
        })
    }

    pub fn config(&self) -> &MppiConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &ControlSequence {
        &self.plan
    }

    /// Replaces the whole plan (e.g. to warm-start from elsewhere).
    pub fn set_plan(&mut self, plan: ControlSequence) {
        assert_eq!(plan.len(), self.cfg.horizon);
        assert_eq!(plan.control_dim(), self.model.dims().m);
        self.plan = plan;
    }

    /// Data from the latest optimization pass.
    pub fn last_batch(&self) -> &RolloutBatch {
        &self.batch
    }

    /// One optimization pass (sample, roll out, reweight) from the
    /// given state, without executing or shifting. Each pass uses a
    /// fresh fork of the seed stream, so repeated passes explore
    /// different variations while the whole controller stays a pure
    /// function of its seed.
    pub fn optimize(&mut self, x: &StateVector) {
        let pass_stream = self.stream.fork(self.pass_count);
        self.pass_count += 1;
        sample_perturbations(&self.cfg, self.model, &pass_stream, &mut self.batch);
        rollout_batch(self.model, self.cost, &self.cfg, x, &self.plan, &mut self.batch);
        update_controls(
            &mut self.plan,
            &self.batch,
            self.cfg.lambda,
            &self.cfg.limits,
            &mut self.weight_scratch,
            &mut self.column_scratch,
        );
    }

    /// One full control period: optimize from the measured state,
    /// return the first planned control for execution, and shift the
    /// plan forward one step (appending `u_init`).
    pub fn mpc_step(&mut self, x: &StateVector) -> DVector<f64> {
        let started = Instant::now();
        for _ in 0..self.cfg.iterations.max(1) {
            self.optimize(x);
        }
        let executed = self.plan.get(0).clone();
        self.plan.shift_left(&self.cfg.u_init);
        self.last_step_seconds = started.elapsed().as_secs_f64();
        executed
    }

    fn wall_seconds(&self) -> f64 {
        self.last_step_seconds
    }
}

impl<M: DiffusionModel + ?Sized, C: StageCost + ?Sized> crate::task::MpcController
    for MppiController<'_, M, C>
{
    fn mpc_step(&mut self, x: &StateVector) -> DVector<f64> {
        MppiController::mpc_step(self, x)
    }

    fn last_step_seconds(&self) -> f64 {
        self.wall_seconds()
    }
}
