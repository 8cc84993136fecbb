//! Offline optimal control: periodic hover-orbit search and a two-period
//! shooting MPC over the piecewise-linear control-deviation knots.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::datagen::perturb_state;
use crate::dynamics::{BodyState, FreeState, Model, Morphology};
use crate::error::{Error, Result};
use crate::integrate::{Controller, Method, Record, ScheduledDynamics, SimOptions, Trajectory, ZeroControl};
use crate::liegroup::{attitude_error_matrix, exp_matrix, Rotation};
use crate::optim::{fd_jacobian, levenberg_marquardt, LmOptions};
use crate::wingkin::{ControlDelta, ControlSchedule, WingPair, N_CHANNELS, N_KNOTS};

/// Knot instants in the two-period prediction horizon.
pub const N_P: usize = 2 * N_KNOTS;
/// Dimension of the error vector.
pub const N_ERR: usize = 12;

/// Weighted state error `W_x * dx` with `dx = [dx, dR, dx_dot, dOmega]`; its
/// Euclidean norm is the weighted norm of the raw error.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct StateError(pub [f64; N_ERR]);

impl StateError {
    pub fn zero() -> Self {
        Self([0.0; N_ERR])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn from_raw(raw: &[f64; N_ERR], w_x: &[f64; N_ERR]) -> Self {
        Self(std::array::from_fn(|i| raw[i] * w_x[i]))
    }

    pub fn raw(&self, w_x: &[f64; N_ERR]) -> [f64; N_ERR] {
        std::array::from_fn(|i| self.0[i] / w_x[i])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Per-component state weights and per-knot horizon weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub w_x: [f64; N_ERR],
    pub w_i: Vec<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        let mut w_x = [0.0; N_ERR];
        for (i, w) in w_x.iter_mut().enumerate() {
            *w = [50.0, 5.0, 5.0, 0.5][i / 3];
        }
        Self { w_x, w_i: geometric_weights(N_P, 1.2) }
    }
}

/// `W_i = r^i` for `i = 1..=n`, normalized to sum to one.
pub fn geometric_weights(n: usize, r: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|i| r.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_x.iter().any(|w| !(*w > 0.0)) || self.w_i.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Invalid("cost weights must be positive".into()));
        }
        if self.w_i.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::Invalid("horizon weights must be nondecreasing".into()));
        }
        Ok(())
    }
}

/// Weighted error of `s` relative to the reference state `d`.
pub fn state_error_between(s: &BodyState, d: &BodyState, w_x: &[f64; N_ERR]) -> StateError {
    let dx = s.x - d.x;
    let dr = attitude_error_matrix(&s.r, &d.r);
    let dv = s.v - d.v;
    let dw = s.w - s.r.transpose() * d.r * d.w;
    let mut raw = [0.0; N_ERR];
    for k in 0..3 {
        raw[k] = dx[k];
        raw[3 + k] = dr[k];
        raw[6 + k] = dv[k];
        raw[9 + k] = dw[k];
    }
    StateError::from_raw(&raw, w_x)
}

/// Periodic hover solution used as the tracking reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOrbit {
    pub model: Model,
    pub morphology_hash: String,
    pub initial: FreeState,
    /// States at every integration step over one period (`steps_per_period + 1`).
    pub samples: Vec<FreeState>,
    pub steps_per_period: usize,
    /// Weighted periodicity defect `|x(T) - x(0)|_{W_x}`.
    pub defect: f64,
    pub w_x: [f64; N_ERR],
    /// Mean aerodynamic power over the period (W).
    pub mean_power: f64,
}

impl ReferenceOrbit {
    pub fn period(&self) -> f64 {
        self.model.period()
    }

    pub fn frequency(&self) -> f64 {
        self.model.reference.right.f
    }

    /// Phase index of `t` on the sample grid.
    pub fn phase_index(&self, t: f64) -> usize {
        let h = self.period() / self.steps_per_period as f64;
        let k = (t.rem_euclid(self.period()) / h).round() as usize;
        k % self.steps_per_period
    }

    pub fn sample_at(&self, t: f64) -> &FreeState {
        &self.samples[self.phase_index(t)]
    }

    pub fn sim_options(&self, record: Record) -> SimOptions {
        SimOptions { steps_per_period: self.steps_per_period, method: Method::default(), record }
    }
}

/// Error vector and weighted norm of `state` against the orbit sample nearest
/// to the phase of `t`.
pub fn weighted_error(state: &FreeState, t: f64, orbit: &ReferenceOrbit, w_x: &[f64; N_ERR]) -> (StateError, f64) {
    let e = state_error_between(&state.raw(), &orbit.sample_at(t).raw(), w_x);
    let n = e.norm();
    (e, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitOptions {
    pub steps_per_period: usize,
    pub max_iter: usize,
    /// Required weighted periodicity defect.
    pub tol_orbit: f64,
    /// Defect the polishing phase aims for.
    pub target_defect: f64,
    /// Weight of the normalized mean aerodynamic power.
    pub lambda_e: f64,
    pub w_x: [f64; N_ERR],
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            steps_per_period: 100,
            max_iter: 60,
            tol_orbit: 1e-4,
            target_defect: 1e-11,
            lambda_e: 1e-2,
            w_x: CostWeights::default().w_x,
        }
    }
}

const N_ORBIT_VARS: usize = 13;

fn orbit_candidate(seed: &WingPair, z: &DVector<f64>) -> (FreeState, WingPair) {
    let mut pair = *seed;
    for p in [&mut pair.right, &mut pair.left] {
        p.phi_m = z[9];
        p.theta_0 = z[10];
        p.phi_0 = z[11];
        p.f = z[12];
    }
    let mut s = FreeState::at_rest();
    s.xi.v = Vector3::new(z[0], z[1], z[2]);
    s.xi.w = Vector3::new(z[3], z[4], z[5]);
    s.g.r = crate::liegroup::exp_so3(&Vector3::new(z[6], z[7], z[8]));
    (s, pair)
}

struct PeriodRun {
    end: BodyState,
    mean_power: f64,
    states: Vec<FreeState>,
}

fn run_one_period(model: &Model, start: &FreeState, spp: usize, keep: bool) -> Result<PeriodRun> {
    let period = model.period();
    let h = period / spp as f64;
    let schedule = ControlSchedule::zero(period);
    let field = ScheduledDynamics { model, schedule: &schedule };
    let method = Method::default();
    let mut s = start.raw();
    let mut power = 0.0;
    let mut states = if keep { vec![*start] } else { Vec::new() };
    for n in 0..spp {
        let t = n as f64 * h;
        power += model.aero_power(&s, &model.wings_at(t, &schedule));
        s = method.step(&s, t, h, &field)?;
        if keep {
            states.push(s.to_free()?);
        }
    }
    Ok(PeriodRun { end: s, mean_power: power / spp as f64, states })
}

/// Searches initial velocity, attitude perturbation, flap amplitude, pitch and
/// flap offsets and frequency so that one flapping period returns the thorax
/// to its initial state, with a small penalty on mean aerodynamic power.
pub fn find_periodic_orbit(morph: &Morphology, seed: &WingPair, opts: &OrbitOptions) -> Result<ReferenceOrbit> {
    morph.validate()?;
    seed.validate()?;
    let spp = opts.steps_per_period;
    let w_x = opts.w_x;
    let p = seed.right;
    let mut z0 = DVector::zeros(N_ORBIT_VARS);
    z0[9] = p.phi_m;
    z0[10] = p.theta_0;
    z0[11] = p.phi_0;
    z0[12] = p.f;

    let evaluate = |z: &DVector<f64>| -> Result<(DVector<f64>, f64)> {
        let (s0, pair) = orbit_candidate(seed, z);
        pair.validate()?;
        let model = Model::new(morph.clone(), pair);
        let run = run_one_period(&model, &s0, spp, false)?;
        let e = state_error_between(&run.end, &s0.raw(), &w_x);
        Ok((DVector::from_row_slice(&e.0), run.mean_power))
    };
    let (_, power_seed) = evaluate(&z0)?;
    let power_ref = power_seed.abs().max(1e-12);
    let sqrt_le = opts.lambda_e.sqrt();
    let with_energy = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let (d, pw) = evaluate(z)?;
        let mut r = DVector::zeros(N_ERR + 1);
        r.rows_mut(0, N_ERR).copy_from(&d);
        r[N_ERR] = sqrt_le * pw / power_ref;
        Ok(r)
    };
    let defect_only = |z: &DVector<f64>| -> Result<DVector<f64>> { Ok(evaluate(z)?.0) };

    let mut eps = vec![1e-7; N_ORBIT_VARS];
    for e in eps.iter_mut().take(6).skip(3) {
        *e = 1e-6;
    }
    eps[12] = 1e-6;
    let lo = DVector::from_fn(N_ORBIT_VARS, |i, _| match i {
        9 => 0.2,
        12 => 0.5 * p.f,
        _ => f64::NEG_INFINITY,
    });
    let hi = DVector::from_fn(N_ORBIT_VARS, |i, _| match i {
        9 => 1.5,
        12 => 2.0 * p.f,
        _ => f64::INFINITY,
    });
    let mut lm = LmOptions {
        max_iter: opts.max_iter,
        tol: 0.0,
        rel_decrease: 1e-6,
        lambda0: 1e-2,
        fd_eps: eps,
        lower: Some(lo),
        upper: Some(hi),
    };
    let phase1 = levenberg_marquardt(&with_energy, &z0, &lm)?;
    lm.tol = opts.target_defect;
    lm.rel_decrease = 1e-3;
    let phase2 = levenberg_marquardt(&defect_only, &phase1.x, &lm)?;
    let iterations = phase1.iterations + phase2.iterations;
    let defect = phase2.norm;
    log::info!("orbit search: defect {defect:.3e} after {iterations} iterations");
    if !(defect <= opts.tol_orbit) {
        return Err(Error::OrbitNonConvergence { best_defect: defect, iterations });
    }
    let (initial, pair) = orbit_candidate(seed, &phase2.x);
    let model = Model::new(morph.clone(), pair);
    let run = run_one_period(&model, &initial, spp, true)?;
    Ok(ReferenceOrbit {
        morphology_hash: crate::io::hash_json(morph),
        model,
        initial,
        samples: run.states,
        steps_per_period: spp,
        defect,
        w_x,
        mean_power: run.mean_power,
    })
}

/// `J = sum_i W_i |W_x (x(t_i) - x_d(t_i))|` over `t_i = i T / N_s`,
/// `i = 1..=W_i.len()`, for a trajectory recorded at every step from `t = 0`.
pub fn tracking_cost(traj: &Trajectory, orbit: &ReferenceOrbit, weights: &CostWeights) -> Result<f64> {
    let stride = orbit.steps_per_period / N_KNOTS;
    let needed = weights.w_i.len() * stride;
    if orbit.steps_per_period % N_KNOTS != 0 || traj.states.len() <= needed {
        return Err(Error::Dimension(format!(
            "trajectory with {} samples does not cover {} knots",
            traj.states.len(),
            weights.w_i.len()
        )));
    }
    let mut j = 0.0;
    for (i, w) in weights.w_i.iter().enumerate() {
        let k = (i + 1) * stride;
        let (_, n) = weighted_error(&traj.states[k], traj.times[k], orbit, &weights.w_x);
        j += w * n;
    }
    Ok(j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcOptions {
    pub delta_max: f64,
    pub fd_eps: f64,
    pub max_iter: usize,
    pub max_jacobians: usize,
    pub lambda0: f64,
    /// Stop after an accepted step improving J by less than this fraction.
    pub min_rel_improvement: f64,
    /// Reject initial errors with a larger weighted norm.
    pub max_error_norm: f64,
    /// Weight of `|u|^2 / |e_0|` added to the tracking cost during the
    /// search. It picks one solution out of the nearly flat valleys of the
    /// tracking cost so that labels depend smoothly on the initial error.
    pub control_penalty: f64,
}

impl Default for MpcOptions {
    fn default() -> Self {
        Self {
            delta_max: crate::wingkin::DEFAULT_DELTA_MAX,
            fd_eps: 1e-4,
            max_iter: 40,
            max_jacobians: 3,
            lambda0: 1e-2,
            min_rel_improvement: 1e-4,
            max_error_norm: 2.0,
            control_penalty: 1.0,
        }
    }
}

/// Free values per period: interior knots `1..N_s-1` times channels.
pub const FREE_PER_PERIOD: usize = (N_KNOTS - 1) * N_CHANNELS;
/// Decision dimension over the two-period horizon.
pub const N_DECISION: usize = 2 * FREE_PER_PERIOD;

fn schedule_from_decision(dec: &[f64], period_idx: usize, period: f64) -> ControlSchedule {
    let base = period_idx * FREE_PER_PERIOD;
    let interior: Vec<ControlDelta> = (0..N_KNOTS - 1)
        .map(|k| ControlDelta(std::array::from_fn(|c| dec[base + k * N_CHANNELS + c])))
        .collect();
    ControlSchedule::from_interior(period, &interior).expect("interior knot count")
}

/// Weighted errors at the horizon knots for the decision vector `dec`.
fn rollout_errors(orbit: &ReferenceOrbit, w_x: &[f64; N_ERR], start: &BodyState, dec: &[f64]) -> Result<DVector<f64>> {
    let spp = orbit.steps_per_period;
    let stride = spp / N_KNOTS;
    let period = orbit.period();
    let h = period / spp as f64;
    let method = Method::default();
    let n_periods = dec.len() / FREE_PER_PERIOD;
    let mut out = DVector::zeros(n_periods * N_KNOTS * N_ERR);
    let mut s = *start;
    for p in 0..n_periods {
        let schedule = schedule_from_decision(dec, p, period);
        let field = ScheduledDynamics { model: &orbit.model, schedule: &schedule };
        for n in 0..spp {
            let t = p as f64 * period + n as f64 * h;
            s = method.step(&s, t, h, &field)?;
            if (n + 1) % stride == 0 {
                let i = p * N_KNOTS + (n + 1) / stride - 1;
                let reference = orbit.samples[(n + 1) % spp].raw();
                let e = state_error_between(&s, &reference, w_x);
                out.rows_mut(i * N_ERR, N_ERR).copy_from_slice(&e.0);
            }
        }
    }
    Ok(out)
}

fn knot_norms(e: &DVector<f64>) -> Vec<f64> {
    e.as_slice().chunks(N_ERR).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

fn cost_of(e: &DVector<f64>, w_i: &[f64]) -> f64 {
    knot_norms(e).iter().zip(w_i).map(|(n, w)| n * w).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// First-period control in the 60-value layout.
    pub u: Vec<f64>,
    /// Full two-period decision vector.
    pub decision: Vec<f64>,
    pub cost: f64,
    /// Cost of the zero control from the same initial state.
    pub cost0: f64,
    pub iterations: usize,
    pub jacobians: usize,
}

impl MpcSolution {
    pub fn schedule(&self, period: f64) -> ControlSchedule {
        ControlSchedule::from_u(period, &self.u).expect("60-value layout")
    }

    /// Schedules of both horizon periods.
    pub fn horizon_schedules(&self, period: f64) -> [ControlSchedule; 2] {
        [0, 1].map(|i| schedule_from_decision(&self.decision, i, period))
    }
}

/// MPC from an explicit thorax state at orbit phase zero.
pub fn mpc_solve_state(
    start: &FreeState,
    orbit: &ReferenceOrbit,
    weights: &CostWeights,
    opts: &MpcOptions,
) -> Result<MpcSolution> {
    if orbit.steps_per_period % N_KNOTS != 0 {
        return Err(Error::Invalid("steps per period must be a multiple of the knot count".into()));
    }
    if weights.w_i.len() != N_P {
        return Err(Error::Dimension(format!("expected {N_P} horizon weights, got {}", weights.w_i.len())));
    }
    let start = start.raw();
    let w_x = &weights.w_x;
    let w_i = &weights.w_i;
    let eval = |u: &DVector<f64>| rollout_errors(orbit, w_x, &start, u.as_slice());
    let mut u = DVector::zeros(N_DECISION);
    let mut e = eval(&u)?;
    let cost0 = cost_of(&e, w_i);
    // scaled by the initial error so the objective stays positively
    // homogeneous in (error, u) like the tracking cost
    let e_start = state_error_between(&start, &orbit.sample_at(0.0).raw(), w_x).norm();
    let rho = if e_start > 0.0 { opts.control_penalty / e_start } else { 0.0 };
    let objective = |u: &DVector<f64>, e: &DVector<f64>| cost_of(e, w_i) + rho * u.norm_squared();
    let mut obj = cost0;
    let mut iterations = 0;
    let mut jacobians = 0;
    let finish = |u: &DVector<f64>, e: &DVector<f64>, iterations: usize, jacobians: usize| {
        let first = schedule_from_decision(u.as_slice(), 0, orbit.period());
        let cost = cost_of(e, w_i);
        MpcSolution { u: first.to_u().to_vec(), decision: u.as_slice().to_vec(), cost, cost0, iterations, jacobians }
    };
    if cost0 < 1e-12 {
        return Ok(finish(&u, &e, 0, 0));
    }
    let eps = vec![opts.fd_eps; N_DECISION];
    let mut jac: DMatrix<f64> = fd_jacobian(&eval, &u, &e, &eps)?;
    jacobians += 1;
    let mut lambda = opts.lambda0;
    let floor = 1e-9;
    while iterations < opts.max_iter {
        iterations += 1;
        // reweighted least squares for the sum of norms
        let norms = knot_norms(&e);
        let mut jw = jac.clone();
        let mut ew = e.clone();
        for (i, n) in norms.iter().enumerate() {
            let s = (w_i[i] / n.max(floor)).sqrt();
            jw.rows_mut(i * N_ERR, N_ERR).scale_mut(s);
            ew.rows_mut(i * N_ERR, N_ERR).scale_mut(s);
        }
        let mut hess = jw.transpose() * &jw;
        let mut grad = jw.transpose() * &ew;
        if rho > 0.0 {
            for k in 0..N_DECISION {
                hess[(k, k)] += 2.0 * rho;
            }
            grad += 2.0 * rho * &u;
        }
        let scale = hess.diagonal().max().max(1e-300);
        let mut accepted = None;
        for _ in 0..10 {
            let mut a = hess.clone();
            for k in 0..N_DECISION {
                a[(k, k)] += lambda * (hess[(k, k)] + 1e-9 * scale);
            }
            if let Some(chol) = a.cholesky() {
                let mut trial = &u - chol.solve(&grad);
                trial.apply(|v| *v = v.clamp(-opts.delta_max, opts.delta_max));
                if let Ok(et) = eval(&trial) {
                    let ot = objective(&trial, &et);
                    if ot < obj {
                        accepted = Some((trial, et, ot));
                        break;
                    }
                }
            }
            lambda *= 4.0;
        }
        match accepted {
            Some((un, en, on)) => {
                let rel = (obj - on) / obj;
                u = un;
                e = en;
                obj = on;
                lambda = (lambda / 3.0).max(1e-9);
                if rel < opts.min_rel_improvement {
                    if jacobians >= opts.max_jacobians {
                        break;
                    }
                    // slow progress on a stale Jacobian: relinearize first
                    jac = fd_jacobian(&eval, &u, &e, &eps)?;
                    jacobians += 1;
                    lambda = opts.lambda0;
                }
            }
            None if jacobians < opts.max_jacobians => {
                jac = fd_jacobian(&eval, &u, &e, &eps)?;
                jacobians += 1;
                lambda = opts.lambda0;
            }
            None => break,
        }
    }
    let cost = cost_of(&e, w_i);
    if !(cost <= cost0) {
        return Err(Error::Expert { reason: "cost increased".into(), best_cost: cost });
    }
    Ok(finish(&u, &e, iterations, jacobians))
}

/// MPC from a weighted initial error relative to the orbit start.
pub fn mpc_solve(
    error0: &StateError,
    orbit: &ReferenceOrbit,
    weights: &CostWeights,
    opts: &MpcOptions,
) -> Result<MpcSolution> {
    let n = error0.norm();
    if !(n <= opts.max_error_norm) {
        return Err(Error::Expert { reason: format!("initial error norm {n:.3} out of range"), best_cost: f64::NAN });
    }
    let start = perturb_state(orbit, error0, &weights.w_x)?;
    mpc_solve_state(&start, orbit, weights, opts)
}

/// Source of expert control labels.
pub trait Expert: Sync {
    fn label(&self, error: &StateError) -> Result<MpcSolution>;
    /// Number of labels requested so far.
    fn calls(&self) -> usize;
}

/// The MPC expert bound to an orbit.
pub struct MpcExpert<'a> {
    pub orbit: &'a ReferenceOrbit,
    pub weights: CostWeights,
    pub opts: MpcOptions,
    calls: AtomicUsize,
}

impl<'a> MpcExpert<'a> {
    pub fn new(orbit: &'a ReferenceOrbit, weights: CostWeights, opts: MpcOptions) -> Self {
        Self { orbit, weights, opts, calls: AtomicUsize::new(0) }
    }
}

impl Expert for MpcExpert<'_> {
    fn label(&self, error: &StateError) -> Result<MpcSolution> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        mpc_solve(error, self.orbit, &self.weights, &self.opts)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Closed-loop MPC: re-solves at every period boundary from the measured
/// state.
pub struct MpcController<'a> {
    pub orbit: &'a ReferenceOrbit,
    pub weights: CostWeights,
    pub opts: MpcOptions,
}

impl Controller for MpcController<'_> {
    fn schedule(&self, _: usize, _: f64, state: &FreeState) -> Result<ControlSchedule> {
        let sol = mpc_solve_state(state, self.orbit, &self.weights, &self.opts)?;
        Ok(sol.schedule(self.orbit.period()))
    }
}

/// Open-loop drift check used by tests and the CLI: period-boundary weighted
/// errors over `n_periods` from the orbit start.
pub fn open_loop_errors(orbit: &ReferenceOrbit, n_periods: usize) -> Result<Vec<f64>> {
    let res = crate::integrate::simulate(
        &orbit.initial,
        0.0,
        n_periods,
        &ZeroControl,
        &orbit.model,
        &orbit.sim_options(Record::PeriodBoundaries),
    );
    if let Some(e) = res.error {
        return Err(e);
    }
    Ok(res.trajectory.states.iter().map(|s| weighted_error(s, 0.0, orbit, &orbit.w_x).1).collect())
}

/// Rotation `R_d exp(eta)` whose attitude error relative to `R_d` is `dr`
/// (requires `|dr| < 1`).
pub(crate) fn attitude_from_error(r_d: &Rotation, dr: &Vector3<f64>) -> Result<Rotation> {
    let n = dr.norm();
    if n >= 1.0 {
        return Err(Error::Invalid(format!("attitude error norm {n} must be below 1")));
    }
    let eta = if n < 1e-12 { *dr } else { dr * (n.asin() / n) };
    Rotation::new(r_d.matrix() * exp_matrix(&eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::exp_so3;

    #[test]
    fn weights_are_normalized_and_increasing() {
        let w = CostWeights::default();
        w.validate().unwrap();
        assert_eq!(w.w_i.len(), N_P);
        assert!((w.w_i.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w.w_i[1] / w.w_i[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn error_of_reference_is_zero() {
        let w = CostWeights::default().w_x;
        let mut s = FreeState::at_rest();
        s.g.r = exp_so3(&Vector3::new(0.1, 0.2, 0.3));
        s.xi.w = Vector3::new(1.0, 2.0, 3.0);
        let e = state_error_between(&s.raw(), &s.raw(), &w);
        assert!(e.norm() < 1e-14);
        assert_eq!(e.0[..9], [0.0; 9]);
    }

    #[test]
    fn unit_weights_give_euclidean_norm() {
        let w = [1.0; N_ERR];
        let mut s = FreeState::at_rest();
        s.g.x = Vector3::new(0.1, -0.2, 0.3);
        s.xi.v = Vector3::new(1.0, 0.0, 0.0);
        let d = FreeState::at_rest();
        let e = state_error_between(&s.raw(), &d.raw(), &w);
        let expect = (0.01f64 + 0.04 + 0.09 + 1.0).sqrt();
        assert!((e.norm() - expect).abs() < 1e-15);
    }

    #[test]
    fn angular_velocity_error_uses_transported_rate() {
        let w = [1.0; N_ERR];
        let mut s = FreeState::at_rest();
        s.g.r = exp_so3(&Vector3::new(0.3, -0.1, 0.2));
        s.xi.w = Vector3::new(1.0, 2.0, 3.0);
        let mut d = s;
        d.xi.w = Vector3::new(0.5, -1.0, 2.0);
        let e = state_error_between(&s.raw(), &d.raw(), &w);
        let dw = s.xi.w - d.xi.w;
        for k in 0..3 {
            assert!((e.0[9 + k] - dw[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn attitude_inverse_recovers_error() {
        let r_d = exp_so3(&Vector3::new(0.4, 0.2, -0.7));
        let dr = Vector3::new(0.1, -0.2, 0.15);
        let r = attitude_from_error(&r_d, &dr).unwrap();
        let back = crate::liegroup::attitude_error(&r, &r_d);
        assert!((back - dr).norm() < 1e-14);
    }

    #[test]
    fn decision_layout_keeps_endpoints_zero() {
        let dec: Vec<f64> = (0..N_DECISION).map(|i| 1e-3 * i as f64).collect();
        let s = schedule_from_decision(&dec, 1, 0.1);
        assert_eq!(s.knots()[0], ControlDelta::zero());
        assert_eq!(s.knots()[N_KNOTS], ControlDelta::zero());
        assert_eq!(s.knots()[1].0[0], dec[FREE_PER_PERIOD]);
    }
}
