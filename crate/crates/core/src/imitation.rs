//! Imitation-learning pipelines (behavior cloning, DAgger, DART and
//! constrained imitation learning) and the Fisher-information machinery used
//! by the constrained projection.

use std::sync::Mutex;
use std::time::Instant;

use std::ops::SubAssign;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{label_errors, sample_initial_error, substream, Dataset, Provenance, DEFAULT_BLOCK_SCALES};
use crate::dynamics::FreeState;
use crate::error::{Error, Result};
use crate::expert::{weighted_error, Expert, ReferenceOrbit, StateError};
use crate::integrate::{simulate, Controller, Record};
use crate::policy::{train, NetArch, NeuralPolicy, TrainOptions, TrainReport};
use crate::wingkin::{ControlSchedule, DEFAULT_DELTA_MAX, U_LEN};

/// Feeds the (optionally noise-corrupted) weighted error at each period
/// boundary through the network; the noise only reaches the network input.
pub struct PolicyController<'a> {
    pub policy: &'a NeuralPolicy,
    pub orbit: &'a ReferenceOrbit,
    /// Standard deviation of Gaussian noise added to each weighted error
    /// component.
    pub input_noise: f64,
    pub noise_seed: u64,
    pub delta_max: f64,
}

impl<'a> PolicyController<'a> {
    pub fn new(policy: &'a NeuralPolicy, orbit: &'a ReferenceOrbit) -> Self {
        Self { policy, orbit, input_noise: 0.0, noise_seed: 0, delta_max: DEFAULT_DELTA_MAX }
    }
}

impl Controller for PolicyController<'_> {
    fn schedule(&self, period_index: usize, _: f64, state: &FreeState) -> Result<ControlSchedule> {
        let (mut e, _) = weighted_error(state, 0.0, self.orbit, &self.orbit.w_x);
        if self.input_noise > 0.0 {
            let mut rng = substream(self.noise_seed, period_index as u64);
            for v in e.0.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.input_noise * z;
            }
        }
        let u = self.policy.forward(&e.0)?;
        if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*bad));
        }
        Ok(ControlSchedule::from_u(self.orbit.period(), &u)?.clamped(self.delta_max))
    }
}

/// `F = ridge I + H H^T`; the estimate from data has `H = G / sqrt(N)` with
/// one score gradient per column of `G` and no ridge.
#[derive(Clone, Debug)]
pub struct FisherMatrix {
    pub h: DMatrix<f64>,
    pub ridge: f64,
}

impl FisherMatrix {
    pub fn identity(n: usize) -> Self {
        Self { h: DMatrix::zeros(n, 0), ridge: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.ridge * self.dim() as f64 + self.h.norm_squared()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.h * (self.h.transpose() * v) + v * self.ridge
    }

    /// `1/2 d^T F d`.
    pub fn quad(&self, d: &DVector<f64>) -> f64 {
        0.5 * ((self.h.transpose() * d).norm_squared() + self.ridge * d.norm_squared())
    }

    pub fn dense(&self) -> DMatrix<f64> {
        &self.h * self.h.transpose() + DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }
}

/// Score gradients `g_k = (df/dtheta)^T (Y_k - f(X_k))` (unit covariance),
/// `F = (1/N) sum_k g_k g_k^T`, kept factored.
pub fn fim_estimate(net: &NeuralPolicy, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<FisherMatrix> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Dimension("FIM needs matching non-empty data".into()));
    }
    let cols: Vec<Vec<f64>> = x
        .par_iter()
        .zip(y)
        .map(|(xk, yk)| {
            let r: Vec<f64> = net.forward(xk)?.iter().zip(yk).map(|(p, t)| t - p).collect();
            net.grad_theta(xk, &r)
        })
        .collect::<Result<_>>()?;
    let n = x.len();
    let mut h = DMatrix::zeros(net.theta.len(), n);
    let s = 1.0 / (n as f64).sqrt();
    for (k, c) in cols.iter().enumerate() {
        h.set_column(k, &(DVector::from_column_slice(c) * s));
    }
    Ok(FisherMatrix { h, ridge: 0.0 })
}

/// Quadratic KL approximation `1/2 (theta_a - theta_b)^T F (theta_a - theta_b)`.
pub fn kl_gaussian(a: &NeuralPolicy, b: &NeuralPolicy, f: &FisherMatrix) -> f64 {
    let d = DVector::from_iterator(a.theta.len(), a.theta.iter().zip(&b.theta).map(|(p, q)| p - q));
    f.quad(&d)
}

/// Output constraint `c(theta) = f(0, theta) = W_o act(b_h) + b_o` and its
/// Jacobian.
fn zero_constraint(net: &NeuralPolicy) -> (DVector<f64>, DMatrix<f64>) {
    let a = &net.arch;
    let n = net.theta.len();
    let bh0 = a.n_hidden * a.n_in;
    let wo0 = bh0 + a.n_hidden;
    let bo0 = n - a.n_out;
    let c = DVector::from_vec(net.output_at_zero());
    let mut jac = DMatrix::zeros(a.n_out, n);
    for u in 0..a.n_hidden {
        let z = net.theta[bh0 + u];
        let (h, dh) = if z >= 0.0 { (z, 1.0) } else { (a.leak * z, a.leak) };
        for j in 0..a.n_out {
            jac[(j, bh0 + u)] = net.theta[wo0 + j * a.n_hidden + u] * dh;
            jac[(j, wo0 + j * a.n_hidden + u)] = h;
        }
    }
    for j in 0..a.n_out {
        jac[(j, bo0 + j)] = 1.0;
    }
    (c, jac)
}

/// `(F + eps I)^{-1}` through the thin SVD of `H`.
struct FisherInverse {
    u: DMatrix<f64>,
    inv_s: DVector<f64>,
    eps: f64,
}

impl FisherInverse {
    fn new(f: &FisherMatrix, eps: f64) -> Self {
        let shift = f.ridge + eps;
        if f.h.ncols() == 0 {
            return Self { u: DMatrix::zeros(f.dim(), 0), inv_s: DVector::zeros(0), eps: shift };
        }
        let svd = f.h.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let inv_s = svd.singular_values.map(|s| 1.0 / (s * s + shift));
        Self { u, inv_s, eps: shift }
    }

    fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.u.transpose() * v;
        let in_range = &self.u * DMatrix::from_diagonal(&self.inv_s) * &c;
        let rest = (v - &self.u * c) / self.eps;
        in_range + rest
    }
}

fn policy_at(template: &NeuralPolicy, theta: &DVector<f64>) -> NeuralPolicy {
    NeuralPolicy { arch: template.arch, theta: theta.as_slice().to_vec() }
}

/// `F^{-1} J^T mu` with `J F^{-1} J^T mu = b`, multipliers by least squares.
fn kkt_direction(finv: &FisherInverse, jac: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let fa = finv.apply(&jac.transpose());
    let m = jac * &fa;
    let tol = 1e-14 * m.norm().max(1e-300);
    let mu = m.svd(true, true).solve(b, tol).map_err(|e| Error::Invalid(e.into()))?;
    Ok(fa * mu)
}

/// Gauss–Newton feasibility restoration with minimum-F-norm steps and
/// backtracking on `|c|`.
fn restore(template: &NeuralPolicy, finv: &FisherInverse, mut theta: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (mut c, mut jac) = zero_constraint(&policy_at(template, &theta));
    let mut cn = c.norm();
    for _ in 0..40 {
        if cn <= 0.1 * PROJECTION_TOL {
            break;
        }
        let d = kkt_direction(finv, &jac, &(-&c))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = &theta + &d * t;
            let (tc, tj) = zero_constraint(&policy_at(template, &trial));
            if tc.norm() < cn {
                theta = trial;
                c = tc;
                jac = tj;
                cn = c.norm();
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((theta, cn))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub constraint_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const PROJECTION_TOL: f64 = 1e-8;

/// `argmin 1/2 |theta - theta0|_F^2` subject to `f(0, theta) = 0`, by
/// linearized KKT steps on `F + eps I`, `eps = 1e-8 tr(F) / N_theta`.
pub fn constrained_project(theta0: &NeuralPolicy, f: &FisherMatrix) -> Result<(NeuralPolicy, ProjectionReport)> {
    let n = theta0.theta.len();
    if f.dim() != n {
        return Err(Error::Dimension(format!("FIM of size {} for {n} parameters", f.dim())));
    }
    let tr = f.trace();
    let eps = if tr > 0.0 { 1e-8 * tr / n as f64 } else { 1.0 };
    let finv = FisherInverse::new(f, eps);
    let base = DVector::from_column_slice(&theta0.theta);
    let objective = |t: &DVector<f64>| f.quad(&(t - &base));
    let (c0, _) = zero_constraint(theta0);
    if c0.norm() <= PROJECTION_TOL {
        return Ok((theta0.clone(), ProjectionReport { constraint_norm: c0.norm(), iterations: 0, converged: true }));
    }
    let sqp_target = |cur: &DVector<f64>| -> Result<DVector<f64>> {
        // minimizer of the F-distance to theta0 under the constraint
        // linearized at `cur`
        let (c, jac) = zero_constraint(&policy_at(theta0, cur));
        let b = &jac * (cur - &base) - &c;
        Ok(&base + kkt_direction(&finv, &jac, &b)?)
    };
    let (mut cur, mut cn) = restore(theta0, &finv, sqp_target(&base)?)?;
    let mut obj = objective(&cur);
    let mut it = 1;
    // descent on the objective over restored (feasible) points
    while cn <= PROJECTION_TOL && it < 60 {
        it += 1;
        let d = sqp_target(&cur)? - &cur;
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-6 {
            let (trial, tn) = restore(theta0, &finv, &cur + &d * t)?;
            let tobj = objective(&trial);
            if tn <= PROJECTION_TOL && tobj < obj {
                accepted = (obj - tobj) > 1e-14 * obj;
                cur = trial;
                cn = tn;
                obj = tobj;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if cn <= PROJECTION_TOL {
        // with the hidden biases frozen the constraint is linear in the
        // remaining parameters, so one KKT step is exact; this settles the
        // output layer when a hidden bias sits at the activation kink
        let (c, jac) = zero_constraint(&policy_at(theta0, &cur));
        let a = &theta0.arch;
        let bh0 = a.n_hidden * a.n_in;
        let mut ext = DMatrix::zeros(a.n_out + a.n_hidden, n);
        ext.rows_mut(0, a.n_out).copy_from(&jac);
        ext.columns_mut(bh0, a.n_hidden).fill(0.0);
        for u in 0..a.n_hidden {
            ext[(a.n_out + u, bh0 + u)] = 1.0;
        }
        let mut b = &ext * (&cur - &base);
        b.rows_mut(0, a.n_out).sub_assign(&c);
        let polished = &base + kkt_direction(&finv, &ext, &b)?;
        let pn = zero_constraint(&policy_at(theta0, &polished)).0.norm();
        if pn <= PROJECTION_TOL && objective(&polished) < obj {
            cur = polished;
            cn = pn;
        }
    }
    let best = (policy_at(theta0, &cur), cn);
    let converged = best.1 <= PROJECTION_TOL;
    if !converged {
        log::warn!("constrained projection stalled at |f(0)| = {:.3e}", best.1);
    }
    Ok((best.0, ProjectionReport { constraint_norm: best.1, iterations: it, converged }))
}

/// Noise scaling for the noise-injected expert.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DartScale {
    /// `Sigma = factor * Sigma_hat`, i.e. `alpha_d / (N tr Sigma_hat) = factor`.
    Factor(f64),
    /// `Sigma = alpha_d / (N tr Sigma_hat) * Sigma_hat`.
    AlphaD(f64),
}

/// Gaussian covariance `Sigma = scale * R R^T / N` from residual columns `R`.
#[derive(Clone, Debug)]
pub struct NoiseCovariance {
    pub residuals: DMatrix<f64>,
    pub scale: f64,
}

impl NoiseCovariance {
    pub fn dim(&self) -> usize {
        self.residuals.nrows()
    }

    fn n(&self) -> f64 {
        self.residuals.ncols().max(1) as f64
    }

    pub fn sigma_hat(&self) -> DMatrix<f64> {
        &self.residuals * self.residuals.transpose() / self.n()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.sigma_hat() * self.scale
    }

    pub fn trace(&self) -> f64 {
        self.scale * self.residuals.norm_squared() / self.n()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.residuals.ncols(), (0..self.residuals.ncols()).map(|_| StandardNormal.sample(rng)));
        &self.residuals * z * (self.scale / self.n()).sqrt()
    }
}

/// Residual covariance of the policy against the stored expert labels and
/// its scaled version.
pub fn dart_covariance(net: &NeuralPolicy, ds: &Dataset, scale: DartScale) -> Result<NoiseCovariance> {
    let n = ds.len();
    let mut r = DMatrix::zeros(U_LEN, n);
    for k in 0..n {
        let p = net.forward(&ds.x[k])?;
        for j in 0..U_LEN {
            r[(j, k)] = p[j] - ds.y[k][j];
        }
    }
    let tr_hat = r.norm_squared() / n.max(1) as f64;
    let s = match scale {
        DartScale::Factor(f) => f,
        DartScale::AlphaD(a) if tr_hat > 0.0 => a / (n as f64 * tr_hat),
        DartScale::AlphaD(_) => 0.0,
    };
    Ok(NoiseCovariance { residuals: r, scale: s })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlConfig {
    pub n_iter: usize,
    /// Blend between expert labels and current predictions.
    pub alpha: f64,
    pub dart_scale: DartScale,
    pub rollout_periods: usize,
    pub rollouts_per_iter: usize,
    /// Start each retraining from the previous parameters.
    pub warm_start: bool,
    pub train: TrainOptions,
    /// Iteration cap for warm-started retraining.
    pub retrain_max_iter: usize,
    pub block_scales: [f64; 4],
    pub init_seed: u64,
    pub seed: u64,
    /// States farther than this from the orbit are not sent to the expert.
    pub max_label_error: f64,
}

impl Default for IlConfig {
    fn default() -> Self {
        Self {
            n_iter: 5,
            alpha: 0.75,
            dart_scale: DartScale::Factor(1e-4),
            rollout_periods: 5,
            rollouts_per_iter: 30,
            warm_start: true,
            train: TrainOptions::default(),
            retrain_max_iter: 60,
            block_scales: DEFAULT_BLOCK_SCALES,
            init_seed: 1,
            seed: 2,
            max_label_error: 2.0,
        }
    }
}

impl IlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || self.n_iter == 0 {
            return Err(Error::Invalid("need 0 <= alpha <= 1 and at least one iteration".into()));
        }
        Ok(())
    }

    fn retrain_opts(&self) -> TrainOptions {
        let mut o = self.train.clone();
        if self.warm_start {
            o.max_iter = self.retrain_max_iter;
        }
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub dataset_size: usize,
    pub mse: f64,
    pub zero_output_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlReport {
    pub algorithm: String,
    pub log: Vec<IterationLog>,
    pub expert_calls: usize,
    pub wall_time_s: f64,
    /// Constraint norm of each projected iterate (constrained learning only).
    pub projected_zero_norms: Vec<f64>,
    pub final_mse: f64,
    pub dataset_size: usize,
}

impl IlReport {
    /// Per-iteration log without timings, so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,dataset_size,mse,zero_output_norm\n");
        for l in &self.log {
            s.push_str(&format!("{},{},{},{}\n", l.iteration, l.dataset_size, l.mse, l.zero_output_norm));
        }
        s
    }
}

fn columns(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    (ds.x.iter().map(|x| x.to_vec()).collect(), ds.y.clone())
}

fn zero_norm(p: &NeuralPolicy) -> f64 {
    p.output_at_zero().iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Tracker {
    start: Instant,
    log: Vec<IterationLog>,
}

impl Tracker {
    fn new() -> Self {
        Self { start: Instant::now(), log: vec![] }
    }

    fn record(&mut self, iteration: usize, size: usize, rep: &TrainReport, p: &NeuralPolicy) {
        let l = IterationLog {
            iteration,
            dataset_size: size,
            mse: rep.mse,
            zero_output_norm: zero_norm(p),
            wall_time_s: self.start.elapsed().as_secs_f64(),
        };
        log::info!("iteration {iteration}: N = {size}, mse = {:.3e}, |f(0)| = {:.3e}", l.mse, l.zero_output_norm);
        self.log.push(l);
    }

    fn finish(self, algorithm: &str, expert_calls: usize, projected: Vec<f64>, mse: f64, size: usize) -> IlReport {
        IlReport {
            algorithm: algorithm.into(),
            expert_calls,
            wall_time_s: self.start.elapsed().as_secs_f64(),
            log: self.log,
            projected_zero_norms: projected,
            final_mse: mse,
            dataset_size: size,
        }
    }
}

pub fn behavior_cloning(ds: &Dataset, arch: NetArch, cfg: &IlConfig) -> Result<(NeuralPolicy, IlReport)> {
    let mut tr = Tracker::new();
    let (x, y) = columns(ds);
    let (p, rep) = train(&NeuralPolicy::init(arch, cfg.init_seed), &x, &y, &cfg.train)?;
    tr.record(0, ds.len(), &rep, &p);
    Ok((p.clone(), tr.finish("bc", 0, vec![], rep.mse, ds.len())))
}

/// Initial errors for rollouts of iteration `iter`.
fn rollout_starts(cfg: &IlConfig, iter: usize) -> Vec<StateError> {
    let seed = cfg.seed.wrapping_add(0x9e37_79b9 * (iter as u64 + 1));
    (0..cfg.rollouts_per_iter).map(|j| sample_initial_error(&mut substream(seed, j as u64), &cfg.block_scales)).collect()
}

/// Period-boundary errors visited by the policy from the given starts.
fn on_policy_states(policy: &NeuralPolicy, orbit: &ReferenceOrbit, starts: &[StateError], cfg: &IlConfig) -> Vec<StateError> {
    let per_traj: Vec<Vec<StateError>> = starts
        .par_iter()
        .map(|e0| {
            let Ok(s0) = crate::datagen::perturb_state(orbit, e0, &orbit.w_x) else { return vec![] };
            let ctl = PolicyController::new(policy, orbit);
            let res = simulate(&s0, 0.0, cfg.rollout_periods, &ctl, &orbit.model, &orbit.sim_options(Record::PeriodBoundaries));
            res.trajectory.states[1..]
                .iter()
                .map(|s| weighted_error(s, 0.0, orbit, &orbit.w_x).0)
                .filter(|e| e.is_finite() && e.norm() <= cfg.max_label_error)
                .collect()
        })
        .collect();
    per_traj.into_iter().flatten().collect()
}

/// Dataset aggregation: train, roll the policy out, label the visited states
/// with the expert, aggregate. A final retrain on the full aggregate follows
/// the loop.
pub fn dagger(
    ds0: &Dataset,
    arch: NetArch,
    cfg: &IlConfig,
    expert: &dyn Expert,
    orbit: &ReferenceOrbit,
) -> Result<(NeuralPolicy, IlReport)> {
    cfg.validate()?;
    let mut tr = Tracker::new();
    let calls0 = expert.calls();
    let mut ds = ds0.clone();
    let mut p = NeuralPolicy::init(arch, cfg.init_seed);
    let mut last = None;
    for i in 0..cfg.n_iter {
        let (x, y) = columns(&ds);
        let opts = if i > 0 { cfg.retrain_opts() } else { cfg.train.clone() };
        let init = if i > 0 && cfg.warm_start { p.clone() } else { NeuralPolicy::init(arch, cfg.init_seed) };
        let (np, rep) = train(&init, &x, &y, &opts)?;
        p = np;
        tr.record(i, ds.len(), &rep, &p);
        let states = on_policy_states(&p, orbit, &rollout_starts(cfg, i), cfg);
        let (new, failed) = label_errors(&states, expert, Provenance::Aggregated, ds.seed, &ds.orbit_hash);
        if failed > 0 {
            log::warn!("dagger iteration {i}: {failed} expert labels failed");
        }
        last = Some(rep);
        if new.is_empty() {
            continue;
        }
        ds.extend(&new);
        last = None;
    }
    // the aggregate from the final iteration is used once more
    let rep = match last {
        Some(rep) => rep,
        None => {
            let (x, y) = columns(&ds);
            let init = if cfg.warm_start { p.clone() } else { NeuralPolicy::init(arch, cfg.init_seed) };
            let (np, rep) = train(&init, &x, &y, &cfg.retrain_opts())?;
            p = np;
            tr.record(cfg.n_iter, ds.len(), &rep, &p);
            rep
        }
    };
    let size = ds.len();
    Ok((p, tr.finish("dagger", expert.calls() - calls0, vec![], rep.mse, size)))
}

/// Expert whose applied controls are perturbed by Gaussian noise; the clean
/// labels are recorded with the states at which they were computed.
struct NoisyExpertController<'a> {
    expert: &'a dyn Expert,
    orbit: &'a ReferenceOrbit,
    noise: &'a NoiseCovariance,
    seed: u64,
    records: Mutex<Vec<(StateError, Vec<f64>, (f64, f64))>>,
}

impl Controller for NoisyExpertController<'_> {
    fn schedule(&self, period_index: usize, _: f64, state: &FreeState) -> Result<ControlSchedule> {
        let (e, n) = weighted_error(state, 0.0, self.orbit, &self.orbit.w_x);
        if !(n <= 2.0) {
            return Err(Error::Expert { reason: "state left the labelling region".into(), best_cost: f64::NAN });
        }
        let sol = self.expert.label(&e)?;
        let mut rng = substream(self.seed, period_index as u64);
        let eta = self.noise.sample(&mut rng);
        let u: Vec<f64> = sol.u.iter().zip(eta.iter()).map(|(a, b)| a + b).collect();
        self.records.lock().expect("record lock").push((e, sol.u.clone(), (sol.cost, sol.cost0)));
        Ok(ControlSchedule::from_u(self.orbit.period(), &u)?.clamped(DEFAULT_DELTA_MAX))
    }
}

/// Noise-injected supervisor: the residual covariance of the current policy,
/// scaled, perturbs the expert during data collection.
pub fn dart(
    ds0: &Dataset,
    arch: NetArch,
    cfg: &IlConfig,
    expert: &dyn Expert,
    orbit: &ReferenceOrbit,
) -> Result<(NeuralPolicy, IlReport)> {
    cfg.validate()?;
    let mut tr = Tracker::new();
    let calls0 = expert.calls();
    let mut ds = ds0.clone();
    let (x, y) = columns(&ds);
    let (mut p, mut rep) = train(&NeuralPolicy::init(arch, cfg.init_seed), &x, &y, &cfg.train)?;
    tr.record(0, ds.len(), &rep, &p);
    for i in 0..cfg.n_iter {
        let noise = dart_covariance(&p, &ds, cfg.dart_scale)?;
        log::info!("dart iteration {}: noise trace {:.3e}", i + 1, noise.trace());
        let starts = rollout_starts(cfg, i);
        let collected: Vec<Vec<_>> = starts
            .par_iter()
            .enumerate()
            .map(|(j, e0)| {
                let Ok(s0) = crate::datagen::perturb_state(orbit, e0, &orbit.w_x) else { return vec![] };
                let ctl = NoisyExpertController {
                    expert,
                    orbit,
                    noise: &noise,
                    seed: cfg.seed.wrapping_add(0x51_7cc1 * (i as u64 + 1)).wrapping_add(j as u64 * 7919),
                    records: Mutex::new(vec![]),
                };
                let res = simulate(&s0, 0.0, cfg.rollout_periods, &ctl, &orbit.model, &orbit.sim_options(Record::PeriodBoundaries));
                if let Some(err) = res.error {
                    log::warn!("dart rollout {j} stopped early: {err}");
                }
                ctl.records.into_inner().expect("record lock")
            })
            .collect();
        for (e, u, c) in collected.into_iter().flatten() {
            ds.push(e.0, u, Provenance::NoisyExpert, c);
        }
        let (x, y) = columns(&ds);
        let init = if cfg.warm_start { p.clone() } else { NeuralPolicy::init(arch, cfg.init_seed) };
        let (np, r) = train(&init, &x, &y, &cfg.retrain_opts())?;
        p = np;
        rep = r;
        tr.record(i + 1, ds.len(), &rep, &p);
    }
    let size = ds.len();
    Ok((p, tr.finish("dart", expert.calls() - calls0, vec![], rep.mse, size)))
}

/// Constrained imitation learning by target adjustment: blended training, a
/// Fisher-metric projection onto `f(0, theta) = 0`, then unconstrained
/// retraining on the adjusted targets. Uses only the given dataset.
pub fn coil(ds: &Dataset, arch: NetArch, cfg: &IlConfig) -> Result<(NeuralPolicy, IlReport)> {
    cfg.validate()?;
    let mut tr = Tracker::new();
    let (x, y) = columns(ds);
    let (mut p, mut rep) = train(&NeuralPolicy::init(arch, cfg.init_seed), &x, &y, &cfg.train)?;
    tr.record(0, ds.len(), &rep, &p);
    let mut projected = vec![];
    let retrain = cfg.retrain_opts();
    for i in 1..=cfg.n_iter {
        let y_hat = p.forward_batch(&x)?;
        let blended: Vec<Vec<f64>> = y
            .iter()
            .zip(&y_hat)
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (1.0 - cfg.alpha) * u + cfg.alpha * v).collect())
            .collect();
        let init = if cfg.warm_start { p.clone() } else { NeuralPolicy::init(arch, cfg.init_seed) };
        let (theta_z0, _) = train(&init, &x, &blended, &retrain)?;
        let fim = fim_estimate(&theta_z0, &x, &y)?;
        let (theta_z, pr) = constrained_project(&theta_z0, &fim)?;
        projected.push(pr.constraint_norm);
        let z = theta_z.forward_batch(&x)?;
        // continue from the network that produced the adjusted targets
        let init = if cfg.warm_start { theta_z.clone() } else { NeuralPolicy::init(arch, cfg.init_seed) };
        let (np, r) = train(&init, &x, &z, &retrain)?;
        p = np;
        rep = r;
        // report the error against the original labels
        rep.mse = crate::policy::mse(&p, &x, &y)?;
        tr.record(i, ds.len(), &rep, &p);
    }
    Ok((p, tr.finish("coil", 0, projected, rep.mse, ds.len())))
}
