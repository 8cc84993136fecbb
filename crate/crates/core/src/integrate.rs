//! Crouch–Grossman integration on R^3 x SO(3) and a classical RK4 baseline
//! acting on the flattened state.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{BodyState, FreeState, Model};
use crate::error::{Error, Result};
use crate::liegroup::{exp_matrix, log_so3, orthogonality_error, Rotation};
use crate::wingkin::ControlSchedule;

/// Default integration steps per flapping period.
pub const DEFAULT_STEPS_PER_PERIOD: usize = 500;

/// SHA-256 of the 5-stage tableau coefficients (little-endian f64 bytes of the
/// strictly lower part of `a` row by row, then `b`, then `c`).
pub const CG4_CHECKSUM: &str = "2b2c518c9bab3ba3215034f6021e9b0b707d6ebfa277a6e470e3db2a46e63d1f";

/// Explicit Runge–Kutta coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub name: String,
    /// Row `i` holds `a_ij` for `j < i`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub order: u32,
}

impl ButcherTableau {
    /// Five-stage, order-four Crouch–Grossman method of Owren and Marthinsen.
    pub fn cg4() -> Self {
        Self {
            name: "cg4".into(),
            a: vec![
                vec![],
                vec![0.8177227988124852],
                vec![0.3199876375476427, 0.0659864263556022],
                vec![0.9214417194464946, 0.4997857776773573, -1.0969984448371582],
                vec![0.3552358559023322, 0.2390958372307326, 1.3918565724203246, -1.1092979392113465],
            ],
            b: vec![
                0.1370831520630755,
                -0.0183698531564020,
                0.7397813985370780,
                -0.1907142565505889,
                0.3322195591068374,
            ],
            c: vec![0.0, 0.8177227988124852, 0.3859740639032449, 0.3242290522866937, 0.8768903263420429],
            order: 4,
        }
    }

    /// Lie–Euler: one stage, `b = [1]`.
    pub fn lie_euler() -> Self {
        Self { name: "lie-euler".into(), a: vec![vec![]], b: vec![1.0], c: vec![0.0], order: 1 }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.b.len();
        if self.a.len() != s || self.c.len() != s {
            return Err(Error::Dimension(format!("tableau '{}' has inconsistent stage counts", self.name)));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != i {
                return Err(Error::Invalid(format!("tableau '{}' is not strictly lower triangular", self.name)));
            }
            let sum: f64 = row.iter().sum();
            if (sum - self.c[i]).abs() > 1e-12 {
                return Err(Error::Invalid(format!("tableau '{}': c[{i}] != row sum of a", self.name)));
            }
        }
        let bsum: f64 = self.b.iter().sum();
        if (bsum - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("tableau '{}': weights sum to {bsum}", self.name)));
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.a.iter().flatten().chain(self.b.iter()).chain(self.c.iter()) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

/// Thorax acceleration field `(x_ddot, Omega_dot) = F(t, state)`.
pub trait VectorField {
    fn accel(&self, t: f64, s: &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)>;
}

impl<F> VectorField for F
where
    F: Fn(f64, &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)>,
{
    fn accel(&self, t: f64, s: &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)> {
        self(t, s)
    }
}

/// The vehicle dynamics under a fixed control schedule.
pub struct ScheduledDynamics<'a> {
    pub model: &'a Model,
    pub schedule: &'a ControlSchedule,
}

impl VectorField for ScheduledDynamics<'_> {
    fn accel(&self, t: f64, s: &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let wings = self.model.wings_at(t, self.schedule);
        self.model.accel(t, s, &wings)
    }
}

fn stage_error(stage: usize, t: f64, e: Error) -> Error {
    Error::Stage { stage, t, source: Box::new(e) }
}

/// One Crouch–Grossman step. The attitude is only ever multiplied by exact
/// exponentials; the position is the abelian factor and accumulates sums.
pub fn cg_step_raw<F: VectorField + ?Sized>(
    s0: &BodyState,
    t: f64,
    h: f64,
    f: &F,
    tab: &ButcherTableau,
) -> Result<BodyState> {
    let n = tab.stages();
    let mut vel = Vec::with_capacity(n);
    let mut omg = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    let mut alp = Vec::with_capacity(n);
    for i in 0..n {
        let mut st = *s0;
        for (j, &a) in tab.a[i].iter().enumerate() {
            st.x += vel[j] * (h * a);
            st.r *= exp_matrix(&(omg[j] * (h * a)));
            st.v += acc[j] * (h * a);
            st.w += alp[j] * (h * a);
        }
        let ti = t + tab.c[i] * h;
        let (a_i, al_i) = f.accel(ti, &st).map_err(|e| stage_error(i, ti, e))?;
        vel.push(st.v);
        omg.push(st.w);
        acc.push(a_i);
        alp.push(al_i);
    }
    let mut out = *s0;
    for i in 0..n {
        let hb = h * tab.b[i];
        out.x += vel[i] * hb;
        out.r *= exp_matrix(&(omg[i] * hb));
        out.v += acc[i] * hb;
        out.w += alp[i] * hb;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite(t + h));
    }
    Ok(out)
}

pub fn cg_step<F: VectorField + ?Sized>(
    state: &FreeState,
    t: f64,
    h: f64,
    f: &F,
    tab: &ButcherTableau,
) -> Result<FreeState> {
    cg_step_raw(&state.raw(), t, h, f, tab)?.to_free()
}

/// Classical RK4 on `(x, R, x_dot, Omega)` with `R_dot = R hat(Omega)`
/// integrated additively and never re-projected.
pub fn rk4_step<F: VectorField + ?Sized>(s0: &BodyState, t: f64, h: f64, f: &F) -> Result<BodyState> {
    let deriv = |s: &BodyState, tt: f64, stage: usize| -> Result<BodyState> {
        let (a, al) = f.accel(tt, s).map_err(|e| stage_error(stage, tt, e))?;
        Ok(BodyState { x: s.v, r: s.r * crate::liegroup::hat(&s.w), v: a, w: al })
    };
    let axpy = |s: &BodyState, k: &BodyState, c: f64| BodyState {
        x: s.x + k.x * c,
        r: s.r + k.r * c,
        v: s.v + k.v * c,
        w: s.w + k.w * c,
    };
    let k1 = deriv(s0, t, 0)?;
    let k2 = deriv(&axpy(s0, &k1, 0.5 * h), t + 0.5 * h, 1)?;
    let k3 = deriv(&axpy(s0, &k2, 0.5 * h), t + 0.5 * h, 2)?;
    let k4 = deriv(&axpy(s0, &k3, h), t + h, 3)?;
    let mut out = *s0;
    for (k, c) in [(&k1, h / 6.0), (&k2, h / 3.0), (&k3, h / 3.0), (&k4, h / 6.0)] {
        out = axpy(&out, k, c);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite(t + h));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    CrouchGrossman(ButcherTableau),
    Rk4,
}

impl Method {
    pub fn step<F: VectorField + ?Sized>(&self, s: &BodyState, t: f64, h: f64, f: &F) -> Result<BodyState> {
        match self {
            Method::CrouchGrossman(tab) => cg_step_raw(s, t, h, f, tab),
            Method::Rk4 => rk4_step(s, t, h, f),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Method::CrouchGrossman(tab) => &tab.name,
            Method::Rk4 => "rk4",
        }
    }
}

impl Default for Method {
    fn default() -> Self {
        Method::CrouchGrossman(ButcherTableau::cg4())
    }
}

/// Source of the control schedule applied over each flapping period.
pub trait Controller: Sync {
    fn schedule(&self, period_index: usize, t: f64, state: &FreeState) -> Result<ControlSchedule>;
}

/// Always applies the reference kinematics.
pub struct ZeroControl;

impl Controller for ZeroControl {
    fn schedule(&self, _: usize, _: f64, _: &FreeState) -> Result<ControlSchedule> {
        Ok(ControlSchedule::zero(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    EveryStep,
    PeriodBoundaries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub steps_per_period: usize,
    pub method: Method,
    pub record: Record,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { steps_per_period: DEFAULT_STEPS_PER_PERIOD, method: Method::default(), record: Record::EveryStep }
    }
}

/// Integrated thorax trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FreeState>,
    /// Schedule applied during each simulated period.
    pub schedules: Vec<ControlSchedule>,
    pub h: f64,
    pub method: String,
    pub morphology_hash: String,
}

impl Trajectory {
    /// States at the start of each period (and the final state).
    pub fn period_boundaries(&self, steps_per_period: usize, record: Record) -> Vec<FreeState> {
        match record {
            Record::PeriodBoundaries => self.states.clone(),
            Record::EveryStep => self.states.iter().step_by(steps_per_period).copied().collect(),
        }
    }

    /// CSV with columns `t, x(3), R(9, row-major), x_dot(3), Omega(3)` plus
    /// an optional weighted-error column.
    pub fn to_csv(&self, weighted_error: Option<&[f64]>) -> String {
        let mut out = String::from("t,x1,x2,x3,r11,r12,r13,r21,r22,r23,r31,r32,r33,v1,v2,v3,w1,w2,w3");
        if weighted_error.is_some() {
            out.push_str(",weighted_error");
        }
        out.push('\n');
        for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let r = s.g.r.matrix();
            let mut row = vec![*t];
            row.extend(s.g.x.iter());
            for i in 0..3 {
                for j in 0..3 {
                    row.push(r[(i, j)]);
                }
            }
            row.extend(s.xi.v.iter());
            row.extend(s.xi.w.iter());
            if let Some(e) = weighted_error {
                row.push(e.get(k).copied().unwrap_or(f64::NAN));
            }
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Outcome of [`simulate`]; on failure the trajectory holds every state
/// reached before the error.
#[derive(Debug)]
pub struct SimResult {
    pub trajectory: Trajectory,
    pub error: Option<Error>,
}

/// Closed-loop simulation: the controller is queried at every period
/// boundary and its schedule is applied over the following period.
pub fn simulate<C: Controller + ?Sized>(
    initial: &FreeState,
    t0: f64,
    n_periods: usize,
    controller: &C,
    model: &Model,
    opts: &SimOptions,
) -> SimResult {
    let period = model.period();
    let h = period / opts.steps_per_period as f64;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![*initial],
        schedules: Vec::with_capacity(n_periods),
        h,
        method: opts.method.name().to_string(),
        morphology_hash: crate::io::hash_json(&model.morph),
    };
    let mut state = initial.raw();
    let mut current = *initial;
    for k in 0..n_periods {
        let tk = t0 + k as f64 * period;
        let schedule = match controller.schedule(k, tk, &current) {
            Ok(s) => rescale_period(s, period),
            Err(e) => return SimResult { trajectory: traj, error: Some(e) },
        };
        let field = ScheduledDynamics { model, schedule: &schedule };
        traj.schedules.push(schedule.clone());
        for n in 0..opts.steps_per_period {
            let t = tk + n as f64 * h;
            state = match opts.method.step(&state, t, h, &field) {
                Ok(s) => s,
                Err(e) => return SimResult { trajectory: traj, error: Some(e) },
            };
            let last = n + 1 == opts.steps_per_period;
            if opts.record == Record::EveryStep || last {
                let free = match free_state_lenient(&state, &opts.method) {
                    Ok(f) => f,
                    Err(e) => return SimResult { trajectory: traj, error: Some(e) },
                };
                traj.times.push(if last { tk + period } else { t + h });
                traj.states.push(free);
                if last {
                    current = free;
                }
            }
        }
    }
    SimResult { trajectory: traj, error: None }
}

fn rescale_period(s: ControlSchedule, period: f64) -> ControlSchedule {
    if s.period() == period {
        return s;
    }
    let interior = &s.knots()[1..s.knots().len() - 1];
    ControlSchedule::from_interior(period, interior).unwrap_or_else(|_| ControlSchedule::zero(period))
}

/// RK4 attitudes drift off SO(3) by design; they are stored with their drift
/// so it can be measured.
fn free_state_lenient(s: &BodyState, method: &Method) -> Result<FreeState> {
    match method {
        Method::Rk4 => Ok(FreeState {
            g: crate::liegroup::GroupElement { x: s.x, r: Rotation::from_raw_unchecked(s.r) },
            xi: crate::liegroup::Twist::new(s.v, s.w),
        }),
        _ => s.to_free(),
    }
}

/// Orthogonality error of the attitude after each step of an open-loop run.
pub fn orthogonality_history(
    initial: &FreeState,
    n_periods: usize,
    steps_per_period: usize,
    model: &Model,
    method: &Method,
) -> Result<Vec<(f64, f64)>> {
    let period = model.period();
    let h = period / steps_per_period as f64;
    let schedule = ControlSchedule::zero(period);
    let field = ScheduledDynamics { model, schedule: &schedule };
    let mut s = initial.raw();
    let mut out = vec![(0.0, orthogonality_error(&s.r))];
    for n in 0..n_periods * steps_per_period {
        let t = n as f64 * h;
        s = method.step(&s, t, h, &field)?;
        out.push((t + h, orthogonality_error(&s.r)));
    }
    Ok(out)
}

/// Smooth nonlinear rigid-body test system: a damped spring on the position
/// and an asymmetric heavy top on the attitude.
pub fn order_test_field(t: f64, s: &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let inertia = Vector3::new(1.0, 2.0, 3.0);
    let iw = s.w.component_mul(&inertia);
    let gravity_dir = s.r.transpose() * Vector3::z();
    let torque = Vector3::new(0.3, -0.2, 0.5).cross(&gravity_dir) + Vector3::new(0.1 * t.cos(), 0.0, 0.0);
    let alpha = (iw.cross(&s.w) + torque).component_div(&inertia);
    let acc = -s.x - 0.1 * s.v * s.v.norm() + s.r * Vector3::new(0.0, 0.0, 0.2);
    Ok((acc, alpha))
}

fn order_test_initial() -> BodyState {
    BodyState {
        x: Vector3::new(0.3, -0.2, 0.1),
        r: exp_matrix(&Vector3::new(0.4, -0.3, 0.8)),
        v: Vector3::new(0.1, 0.5, -0.2),
        w: Vector3::new(1.2, -0.7, 0.9),
    }
}

/// Position norm plus rotation log-map norm of the discrepancy.
pub fn group_error(a: &BodyState, b: &BodyState) -> f64 {
    (a.x - b.x).norm() + log_so3(&(b.r.transpose() * a.r)).norm()
}

fn integrate_fixed(method: &Method, s0: &BodyState, t_end: f64, n: usize) -> Result<BodyState> {
    let h = t_end / n as f64;
    let mut s = *s0;
    for k in 0..n {
        s = method.step(&s, k as f64 * h, h, &order_test_field)?;
    }
    Ok(s)
}

/// Observed convergence order under step halving, measured against a
/// reference computed with the same method at a 64x finer step.
pub fn order_test(method: &Method) -> Result<f64> {
    let s0 = order_test_initial();
    let t_end = 2.0;
    let (n1, n2) = match method {
        Method::CrouchGrossman(tab) if tab.order <= 1 => (200, 400),
        _ => (20, 40),
    };
    let reference = integrate_fixed(method, &s0, t_end, n2 * 64)?;
    let e1 = group_error(&integrate_fixed(method, &s0, t_end, n1)?, &reference);
    let e2 = group_error(&integrate_fixed(method, &s0, t_end, n2)?, &reference);
    Ok((e1 / e2).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Morphology;
    use crate::liegroup::exp_so3;
    use nalgebra::Matrix3;
    use crate::wingkin::{default_reference, WingPair};
    use approx::assert_relative_eq;

    fn zero_field(_: f64, _: &BodyState) -> Result<(Vector3<f64>, Vector3<f64>)> {
        Ok((Vector3::zeros(), Vector3::zeros()))
    }

    #[test]
    fn tableaus_are_consistent() {
        ButcherTableau::cg4().validate().unwrap();
        ButcherTableau::lie_euler().validate().unwrap();
        assert_eq!(ButcherTableau::cg4().checksum(), CG4_CHECKSUM);
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let s = FreeState::at_rest();
        let out = cg_step(&s, 0.0, 0.1, &zero_field, &ButcherTableau::cg4()).unwrap();
        assert_eq!(out, s);
        let raw = s.raw();
        assert_eq!(rk4_step(&raw, 0.0, 0.1, &zero_field).unwrap(), raw);
    }

    #[test]
    fn constant_rate_is_exact() {
        let mut s = FreeState::at_rest();
        s.g.r = exp_so3(&Vector3::new(0.2, -0.1, 0.4));
        s.xi.w = Vector3::new(3.0, -1.0, 2.0);
        s.xi.v = Vector3::new(1.0, 2.0, 3.0);
        let h = 0.37;
        let out = cg_step(&s, 0.0, h, &zero_field, &ButcherTableau::cg4()).unwrap();
        let expect = s.g.r.matrix() * exp_matrix(&(s.xi.w * h));
        assert!((out.g.r.matrix() - expect).norm() < 1e-14);
        assert_relative_eq!(out.g.x, s.xi.v * h, epsilon = 1e-14);
        assert!(out.g.r.orthogonality_error() <= 1e-13);
    }

    #[test]
    fn rk4_scalar_order() {
        // x_ddot = -x along one axis has exact solution cos(t)
        let field = |_: f64, s: &BodyState| Ok((-s.x, Vector3::zeros()));
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut s = BodyState { x: Vector3::x(), r: Matrix3::identity(), v: Vector3::zeros(), w: Vector3::zeros() };
            for k in 0..n {
                s = rk4_step(&s, k as f64 * h, h, &field).unwrap();
            }
            (s.x.x - 1f64.cos()).abs()
        };
        let ratio = run(10) / run(20);
        assert!((ratio.log2() - 4.0).abs() < 0.3);
    }

    #[test]
    fn measured_orders() {
        let cg = order_test(&Method::CrouchGrossman(ButcherTableau::cg4())).unwrap();
        assert!((3.7..=4.3).contains(&cg), "cg order {cg}");
        let le = order_test(&Method::CrouchGrossman(ButcherTableau::lie_euler())).unwrap();
        assert!((0.8..=1.2).contains(&le), "lie-euler order {le}");
        let rk = order_test(&Method::Rk4).unwrap();
        assert!((3.7..=4.3).contains(&rk), "rk4 order {rk}");
    }

    #[test]
    fn cg_stays_on_the_group_for_any_step() {
        let s0 = order_test_initial();
        for &h in &[1e-3, 0.05, 0.3, 1.0] {
            let mut s = s0;
            for k in 0..20 {
                s = cg_step_raw(&s, k as f64 * h, h, &order_test_field, &ButcherTableau::cg4()).unwrap();
            }
            assert!(orthogonality_error(&s.r) <= 1e-12, "h = {h}: {}", orthogonality_error(&s.r));
        }
    }

    #[test]
    fn trajectory_length() {
        let model = Model::new(Morphology::default(), WingPair::symmetric(default_reference()));
        let opts = SimOptions { steps_per_period: 20, ..SimOptions::default() };
        let res = simulate(&FreeState::at_rest(), 0.0, 3, &ZeroControl, &model, &opts);
        assert!(res.error.is_none());
        assert_eq!(res.trajectory.states.len(), 3 * 20 + 1);
        let t = &res.trajectory.times;
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(*t.last().unwrap(), 3.0 * model.period(), epsilon = 1e-15);
    }
}
