//! Three-body (thorax plus two wings) Euler–Lagrange dynamics with prescribed
//! wing motion, blade-element aerodynamics and gravity.
//!
//! Velocities are `xi = (x_dot, Omega, Omega_R, Omega_L)`: body translational
//! velocity in the inertial frame, body angular velocity in the body frame
//! and the wing angular velocities relative to the body, each resolved in its
//! own wing frame (`Q_dot = Q hat(Omega_w)`). Joints are spherical at the
//! wing roots `mu_R`, `mu_L`.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{hat, GroupElement, Rotation, Twist};
use crate::wingkin::{apply_delta_unchecked, wing_velocity_accel, ControlSchedule, Side, WingPair};

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;
type Mat3x12 = SMatrix<f64, 3, 12>;

/// Largest condition number of the reduced mass matrix accepted by [`eom_rhs`].
pub const MAX_MASS_CONDITION: f64 = 1e12;

const MIRROR: Matrix3<f64> = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);

/// Mass properties, geometry and aerodynamic constants of the vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    /// Thorax mass (kg).
    pub m_b: f64,
    /// Mass of one wing (kg).
    pub m_w: f64,
    /// Thorax inertia about its center of mass, body frame (kg m^2).
    pub i_b: Matrix3<f64>,
    /// Right-wing inertia about its center of mass, wing frame (kg m^2).
    pub i_w: Matrix3<f64>,
    /// Right-wing root in the body frame (m).
    pub mu_r: Vector3<f64>,
    /// Right-wing center of mass relative to its root, wing frame (m).
    pub nu_r: Vector3<f64>,
    /// Root-to-tip length of one wing (m).
    pub span: f64,
    /// Mean chord (m).
    pub chord: f64,
    /// Aerodynamic-center offset behind the pitch axis, fraction of chord.
    pub x_ac: f64,
    pub n_strip: usize,
    pub cl_max: f64,
    pub cd0: f64,
    pub cdk: f64,
    /// Air density (kg/m^3).
    pub rho: f64,
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
}

impl Default for Morphology {
    fn default() -> Self {
        let (m_w, span, chord) = (5e-5, 0.05, 0.03);
        Self {
            m_b: 4e-4,
            m_w,
            i_b: Matrix3::from_diagonal(&Vector3::new(3e-8, 3e-8, 3e-8)),
            i_w: Matrix3::from_diagonal(&Vector3::new(
                m_w * span * span / 12.0,
                m_w * chord * chord / 12.0,
                m_w * (span * span + chord * chord) / 12.0,
            )),
            mu_r: Vector3::new(0.0, -0.003, 0.003),
            nu_r: Vector3::new(0.0, -0.5 * span, 0.0),
            span,
            chord,
            x_ac: 0.05,
            n_strip: 10,
            cl_max: 1.8,
            cd0: 0.2,
            cdk: 1.5,
            rho: 1.2,
            g: 9.81,
        }
    }
}

impl Morphology {
    /// Massless, inertia-free wings; the thorax keeps its properties.
    pub fn with_massless_wings(mut self) -> Self {
        self.m_w = 0.0;
        self.i_w = Matrix3::zeros();
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.m_b + 2.0 * self.m_w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("morphology: {m}")));
        if !(self.m_b > 0.0) || !(self.m_w >= 0.0) {
            return bad("thorax mass must be positive and wing mass non-negative");
        }
        if (self.i_b - self.i_b.transpose()).norm() > 1e-15 * self.i_b.norm()
            || self.i_b.symmetric_eigenvalues().min() <= 0.0
        {
            return bad("thorax inertia must be symmetric positive definite");
        }
        if (self.i_w - self.i_w.transpose()).norm() > 1e-15 * self.i_w.norm().max(1e-300)
            || self.i_w.symmetric_eigenvalues().min() < 0.0
        {
            return bad("wing inertia must be symmetric positive semidefinite");
        }
        if !(self.span > 0.0 && self.chord > 0.0 && self.n_strip > 0 && self.rho >= 0.0) {
            return bad("wing geometry and density must be positive");
        }
        Ok(())
    }

    fn wing(&self, side: Side) -> WingGeometry {
        match side {
            Side::Right => WingGeometry {
                mu: self.mu_r,
                nu: self.nu_r,
                j_w: self.i_w,
                span_dir: -Vector3::y(),
            },
            Side::Left => WingGeometry {
                mu: MIRROR * self.mu_r,
                nu: MIRROR * self.nu_r,
                j_w: MIRROR * self.i_w * MIRROR,
                span_dir: Vector3::y(),
            },
        }
    }
}

struct WingGeometry {
    mu: Vector3<f64>,
    nu: Vector3<f64>,
    j_w: Matrix3<f64>,
    span_dir: Vector3<f64>,
}

const SIDES: [Side; 2] = [Side::Right, Side::Left];

/// Position, attitude and velocity of the thorax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeState {
    pub g: GroupElement,
    pub xi: Twist,
}

impl FreeState {
    pub fn at_rest() -> Self {
        Self { g: GroupElement::identity(), xi: Twist::default() }
    }

    pub fn is_finite(&self) -> bool {
        self.g.x.iter().all(|v| v.is_finite()) && self.xi.is_finite()
    }

    pub fn raw(&self) -> BodyState {
        BodyState { x: self.g.x, r: *self.g.r.matrix(), v: self.xi.v, w: self.xi.w }
    }
}

/// Unvalidated counterpart of [`FreeState`] used inside integrators; `r` may
/// drift off SO(3) under non-geometric schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyState {
    pub x: Vector3<f64>,
    pub r: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl BodyState {
    pub fn to_free(&self) -> Result<FreeState> {
        Ok(FreeState { g: GroupElement { x: self.x, r: Rotation::new(self.r)? }, xi: Twist::new(self.v, self.w) })
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.r.iter()).chain(self.v.iter()).chain(self.w.iter()).all(|c| c.is_finite())
    }
}

/// Prescribed wing configuration: attitudes relative to the body, relative
/// angular velocities and accelerations (right, left).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WingState {
    pub q: [Rotation; 2],
    pub omega: [Vector3<f64>; 2],
    pub omega_dot: [Vector3<f64>; 2],
}

impl WingState {
    pub fn from_params(t: f64, pair: &WingPair) -> Self {
        let r = wing_velocity_accel(t, &pair.right, Side::Right);
        let l = wing_velocity_accel(t, &pair.left, Side::Left);
        Self { q: [r.q, l.q], omega: [r.omega, l.omega], omega_dot: [r.omega_dot, l.omega_dot] }
    }

    pub fn frozen(q_r: Rotation, q_l: Rotation) -> Self {
        Self { q: [q_r, q_l], omega: [Vector3::zeros(); 2], omega_dot: [Vector3::zeros(); 2] }
    }

    pub fn xi2(&self) -> Vector6<f64> {
        Vector6::new(
            self.omega[0].x,
            self.omega[0].y,
            self.omega[0].z,
            self.omega[1].x,
            self.omega[1].y,
            self.omega[1].z,
        )
    }

    fn xi2_dot(&self) -> Vector6<f64> {
        let (r, l) = (self.omega_dot[0], self.omega_dot[1]);
        Vector6::new(r.x, r.y, r.z, l.x, l.y, l.z)
    }
}

/// Full inertia matrix `J` and its time derivative `L` along the motion.
#[derive(Clone, Debug)]
pub struct InertiaBlocks {
    pub j: Mat12,
    pub l: Mat12,
}

impl InertiaBlocks {
    pub fn j11(&self) -> Matrix6<f64> {
        self.j.fixed_view::<6, 6>(0, 0).into_owned()
    }
    pub fn j12(&self) -> Matrix6<f64> {
        self.j.fixed_view::<6, 6>(0, 6).into_owned()
    }
    pub fn j21(&self) -> Matrix6<f64> {
        self.j.fixed_view::<6, 6>(6, 0).into_owned()
    }
    pub fn j22(&self) -> Matrix6<f64> {
        self.j.fixed_view::<6, 6>(6, 6).into_owned()
    }
    pub fn l11(&self) -> Matrix6<f64> {
        self.l.fixed_view::<6, 6>(0, 0).into_owned()
    }
    pub fn l12(&self) -> Matrix6<f64> {
        self.l.fixed_view::<6, 6>(0, 6).into_owned()
    }
    pub fn l21(&self) -> Matrix6<f64> {
        self.l.fixed_view::<6, 6>(6, 0).into_owned()
    }
    pub fn l22(&self) -> Matrix6<f64> {
        self.l.fixed_view::<6, 6>(6, 6).into_owned()
    }
}

/// Velocity maps of one wing: `v_i = A xi` (center-of-mass velocity,
/// inertial) and `omega_i = B xi` (angular velocity, wing frame).
struct WingMaps {
    a: Mat3x12,
    b: Mat3x12,
    a_dot: Mat3x12,
    b_dot: Mat3x12,
}

fn wing_maps(r: &Matrix3<f64>, omega: &Vector3<f64>, wings: &WingState, m: &Morphology, i: usize) -> WingMaps {
    let geo = m.wing(SIDES[i]);
    let q = wings.q[i].matrix();
    let om_w = wings.omega[i];
    let ri = geo.mu + q * geo.nu;
    let ri_dot = q * om_w.cross(&geo.nu);
    let (nu_hat, om_hat, omw_hat) = (hat(&geo.nu), hat(omega), hat(&om_w));
    let col = 6 + 3 * i;

    let mut a = Mat3x12::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * hat(&ri)));
    a.fixed_view_mut::<3, 3>(0, col).copy_from(&(-r * q * nu_hat));

    let mut b = Mat3x12::zeros();
    b.fixed_view_mut::<3, 3>(0, 3).copy_from(&q.transpose());
    b.fixed_view_mut::<3, 3>(0, col).copy_from(&Matrix3::identity());

    let r_dot = r * om_hat;
    let q_dot = q * omw_hat;
    let mut a_dot = Mat3x12::zeros();
    a_dot.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-(r_dot * hat(&ri) + r * hat(&ri_dot))));
    a_dot.fixed_view_mut::<3, 3>(0, col).copy_from(&(-(r_dot * q + r * q_dot) * nu_hat));

    let mut b_dot = Mat3x12::zeros();
    b_dot.fixed_view_mut::<3, 3>(0, 3).copy_from(&q_dot.transpose());

    WingMaps { a, b, a_dot, b_dot }
}

fn wing_inertia(m: &Morphology, i: usize) -> Matrix3<f64> {
    m.wing(SIDES[i]).j_w
}

fn body_inertia(m: &Morphology) -> Mat12 {
    let mut j = Mat12::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * m.m_b));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&m.i_b);
    j
}

/// Inertia matrix and its time derivative for the given thorax attitude and
/// angular velocity and wing state.
pub fn inertia_blocks(state: &FreeState, wings: &WingState, m: &Morphology) -> InertiaBlocks {
    inertia_blocks_raw(state.g.r.matrix(), &state.xi.w, wings, m)
}

pub(crate) fn inertia_blocks_raw(
    r: &Matrix3<f64>,
    omega: &Vector3<f64>,
    wings: &WingState,
    m: &Morphology,
) -> InertiaBlocks {
    let mut j = body_inertia(m);
    let mut l = Mat12::zeros();
    for i in 0..2 {
        let w = wing_maps(r, omega, wings, m, i);
        let jw = wing_inertia(m, i);
        let jb = jw * w.b;
        j += w.a.transpose() * w.a * m.m_w + w.b.transpose() * jb;
        let cross = w.a_dot.transpose() * w.a * m.m_w + w.b_dot.transpose() * jb;
        l += cross + cross.transpose();
    }
    InertiaBlocks { j, l }
}

/// `C = [[0, 0], [-Q_R, -Q_L]]`, mapping wing-frame joint moments into the
/// thorax rows of the reduced equation.
pub fn coupling_matrix(q_r: &Rotation, q_l: &Rotation) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-q_r.matrix()));
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-q_l.matrix()));
    c
}

/// External loads split per body: total force (inertial frame), moment on the
/// thorax about its center of mass from forces transmitted through the wing
/// roots (body frame), and moments about each wing root (wing frames).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub wing: [Vector3<f64>; 2],
}

impl Wrench {
    /// Thorax block `f_1`.
    pub fn f1(&self) -> Vector6<f64> {
        Vector6::new(self.force.x, self.force.y, self.force.z, self.moment.x, self.moment.y, self.moment.z)
    }

    /// Wing block `f_2`.
    pub fn f2(&self) -> Vector6<f64> {
        let (r, l) = (self.wing[0], self.wing[1]);
        Vector6::new(r.x, r.y, r.z, l.x, l.y, l.z)
    }

    /// Generalized force on the thorax coordinates, `f_1 - C f_2`.
    pub fn generalized_body(&self, wings: &WingState) -> Vector6<f64> {
        self.f1() - coupling_matrix(&wings.q[0], &wings.q[1]) * self.f2()
    }

    fn add(&self, o: &Wrench) -> Wrench {
        Wrench {
            force: self.force + o.force,
            moment: self.moment + o.moment,
            wing: [self.wing[0] + o.wing[0], self.wing[1] + o.wing[1]],
        }
    }
}

/// Aerodynamic loads and the power the wings deliver to the air.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AeroLoads {
    pub wrench: Wrench,
    pub power: f64,
}

pub fn aero_wrench(state: &FreeState, wings: &WingState, m: &Morphology) -> Wrench {
    aero_loads_raw(&state.raw(), wings, m).wrench
}

pub(crate) fn aero_loads_raw(s: &BodyState, wings: &WingState, m: &Morphology) -> AeroLoads {
    let mut out = AeroLoads::default();
    if m.rho == 0.0 {
        return out;
    }
    let dr = m.span / m.n_strip as f64;
    let half_rho_da = 0.5 * m.rho * m.chord * dr;
    let v_body = s.r.transpose() * s.v;
    let ac = -m.x_ac * m.chord * Vector3::x();
    for i in 0..2 {
        let geo = m.wing(SIDES[i]);
        let q = wings.q[i].matrix();
        let om_w = wings.omega[i];
        let mut f_body = Vector3::zeros();
        for k in 0..m.n_strip {
            let p = geo.span_dir * ((k as f64 + 0.5) * dr) + ac;
            let pb = geo.mu + q * p;
            let vel = q.transpose() * (v_body + s.w.cross(&pb)) + om_w.cross(&p);
            let mut u = -vel;
            u -= geo.span_dir * u.dot(&geo.span_dir);
            let speed = u.norm();
            if speed < 1e-12 {
                continue;
            }
            let un = u.z;
            let drag = (m.cd0 * speed + 2.0 * m.cdk * un * un / speed) * u;
            let lift = (2.0 * m.cl_max * un / speed) * (speed * speed * Vector3::z() - un * u);
            let f = half_rho_da * (drag + lift);
            out.power -= f.dot(&vel);
            let fb = q * f;
            f_body += fb;
            out.wrench.wing[i] += p.cross(&f);
        }
        out.wrench.force += s.r * f_body;
        out.wrench.moment += geo.mu.cross(&f_body);
    }
    out
}

pub fn gravity_wrench(state: &FreeState, wings: &WingState, m: &Morphology) -> Wrench {
    gravity_raw(&state.raw().r, wings, m)
}

fn gravity_raw(r: &Matrix3<f64>, wings: &WingState, m: &Morphology) -> Wrench {
    let down = -Vector3::z() * m.g;
    let w_b = r.transpose() * down * m.m_w;
    let mut out = Wrench { force: down * m.total_mass(), ..Wrench::default() };
    for i in 0..2 {
        let geo = m.wing(SIDES[i]);
        let q = wings.q[i].matrix();
        out.moment += geo.mu.cross(&w_b);
        out.wing[i] = geo.nu.cross(&(q.transpose() * w_b));
    }
    out
}

/// Which external loads act on the vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForceSwitches {
    pub aero: bool,
    pub gravity: bool,
}

impl Default for ForceSwitches {
    fn default() -> Self {
        Self { aero: true, gravity: true }
    }
}

/// Vehicle model: morphology, reference wing kinematics and active loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub morph: Morphology,
    pub reference: WingPair,
    pub forces: ForceSwitches,
}

impl Model {
    pub fn new(morph: Morphology, reference: WingPair) -> Self {
        Self { morph, reference, forces: ForceSwitches::default() }
    }

    pub fn period(&self) -> f64 {
        self.reference.period()
    }

    /// Wing state at time `t` under `schedule`, evaluated at `t mod T`.
    pub fn wings_at(&self, t: f64, schedule: &ControlSchedule) -> WingState {
        let period = self.period();
        let tau = t.rem_euclid(period);
        let delta = schedule.eval_clamped(tau);
        WingState::from_params(tau, &apply_delta_unchecked(&self.reference, &delta))
    }

    pub fn external_wrench(&self, s: &BodyState, wings: &WingState) -> Wrench {
        let mut w = Wrench::default();
        if self.forces.aero {
            w = w.add(&aero_loads_raw(s, wings, &self.morph).wrench);
        }
        if self.forces.gravity {
            w = w.add(&gravity_raw(&s.r, wings, &self.morph));
        }
        w
    }

    /// Thorax accelerations `(x_ddot, Omega_dot)` for a given wing state.
    pub fn accel(&self, t: f64, s: &BodyState, wings: &WingState) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let terms = LagrangeTerms::new(s, wings, &self.morph);
        let f = self.external_wrench(s, wings).generalized_body(wings);
        let rhs = f + terms.kappa.fixed_rows::<6>(0) - terms.bias.fixed_rows::<6>(0)
            - terms.blocks.j12() * wings.xi2_dot();
        let j11 = terms.blocks.j11();
        let chol = match j11.cholesky() {
            Some(c) => c,
            None => return Err(Error::SingularMass { t, cond: f64::INFINITY }),
        };
        let diag = chol.l_dirty().diagonal();
        let estimate = (diag.max() / diag.min()).powi(2);
        if !(estimate <= 1e-2 * MAX_MASS_CONDITION) {
            let ev = j11.symmetric_eigenvalues();
            let cond = ev.max() / ev.min();
            if !(cond <= MAX_MASS_CONDITION) {
                return Err(Error::SingularMass { t, cond });
            }
        }
        let acc = chol.solve(&rhs);
        if !acc.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(t));
        }
        Ok((acc.fixed_rows::<3>(0).into_owned(), acc.fixed_rows::<3>(3).into_owned()))
    }

    /// Joint torques (wing frames) needed to enforce the prescribed wing
    /// motion, given the thorax accelerations.
    pub fn joint_torque(&self, s: &BodyState, wings: &WingState, acc: &Vector6<f64>) -> Vector6<f64> {
        let terms = LagrangeTerms::new(s, wings, &self.morph);
        let f2 = self.external_wrench(s, wings).f2();
        terms.blocks.j21() * acc + terms.blocks.j22() * wings.xi2_dot() + terms.bias.fixed_rows::<6>(6)
            - terms.kappa.fixed_rows::<6>(6)
            - f2
    }

    /// Kinetic energy of the three bodies.
    pub fn kinetic_energy(&self, s: &BodyState, wings: &WingState) -> f64 {
        let xi = full_velocity(s, wings);
        let blocks = inertia_blocks_raw(&s.r, &s.w, wings, &self.morph);
        0.5 * xi.dot(&(blocks.j * xi))
    }

    /// Gravitational potential energy (zero at altitude zero).
    pub fn potential_energy(&self, s: &BodyState, wings: &WingState) -> f64 {
        let m = &self.morph;
        let mut e = m.m_b * m.g * s.x.z;
        for i in 0..2 {
            let geo = m.wing(SIDES[i]);
            let ri = geo.mu + wings.q[i].matrix() * geo.nu;
            e += m.m_w * m.g * (s.x + s.r * ri).z;
        }
        e
    }

    /// Mean-free aerodynamic power at one instant.
    pub fn aero_power(&self, s: &BodyState, wings: &WingState) -> f64 {
        aero_loads_raw(s, wings, &self.morph).power
    }

    /// Inertial-frame linear momentum of the system.
    pub fn linear_momentum(&self, s: &BodyState, wings: &WingState) -> Vector3<f64> {
        let xi = full_velocity(s, wings);
        let mut p = s.v * self.morph.m_b;
        for i in 0..2 {
            p += wing_maps(&s.r, &s.w, wings, &self.morph, i).a * xi * self.morph.m_w;
        }
        p
    }

    /// Inertial-frame angular momentum about the thorax center of mass.
    pub fn angular_momentum(&self, s: &BodyState, wings: &WingState) -> Vector3<f64> {
        let m = &self.morph;
        let xi = full_velocity(s, wings);
        let mut h = s.r * (m.i_b * s.w);
        for i in 0..2 {
            let geo = m.wing(SIDES[i]);
            let q = wings.q[i].matrix();
            let maps = wing_maps(&s.r, &s.w, wings, m, i);
            let ri = s.r * (geo.mu + q * geo.nu);
            h += ri.cross(&(maps.a * xi * m.m_w)) + s.r * q * (geo.j_w * (maps.b * xi));
        }
        h
    }

    /// Total external force and moment about the thorax center of mass, in
    /// the inertial frame.
    pub fn external_force_moment(&self, s: &BodyState, wings: &WingState) -> (Vector3<f64>, Vector3<f64>) {
        let w = self.external_wrench(s, wings);
        let moment_body = w.generalized_body(wings).fixed_rows::<3>(3).into_owned();
        (w.force, s.r * moment_body)
    }
}

fn full_velocity(s: &BodyState, wings: &WingState) -> Vec12 {
    let mut xi = Vec12::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&s.v);
    xi.fixed_rows_mut::<3>(3).copy_from(&s.w);
    xi.fixed_rows_mut::<3>(6).copy_from(&wings.omega[0]);
    xi.fixed_rows_mut::<3>(9).copy_from(&wings.omega[1]);
    xi
}

/// Velocity-dependent terms of `J xi_dot + L xi - ad*_xi (J xi) - kappa = f`.
struct LagrangeTerms {
    blocks: InertiaBlocks,
    /// `L xi - ad*_xi (J xi)`.
    bias: Vec12,
    /// Left-trivialized configuration derivative of the kinetic energy.
    kappa: Vec12,
}

impl LagrangeTerms {
    fn new(s: &BodyState, wings: &WingState, m: &Morphology) -> Self {
        let blocks = inertia_blocks_raw(&s.r, &s.w, wings, m);
        let xi = full_velocity(s, wings);
        let p = blocks.j * xi;
        let mut bias = blocks.l * xi;
        let rot = [(3, s.w), (6, wings.omega[0]), (9, wings.omega[1])];
        for (row, w) in rot {
            let pk: Vector3<f64> = p.fixed_rows::<3>(row).into_owned();
            let ad = w.cross(&pk);
            let mut seg = bias.fixed_rows_mut::<3>(row);
            seg += ad;
        }
        Self { blocks, bias, kappa: kappa(s, wings, m) }
    }
}

fn kappa(s: &BodyState, wings: &WingState, m: &Morphology) -> Vec12 {
    let mut out = Vec12::zeros();
    let rt = s.r.transpose();
    for i in 0..2 {
        let geo = m.wing(SIDES[i]);
        let q = wings.q[i].matrix();
        let om_w = wings.omega[i];
        let ri = geo.mu + q * geo.nu;
        let w_i = ri.cross(&s.w) + q * geo.nu.cross(&om_w);
        let vb = rt * s.v - w_i;
        let qt_om = q.transpose() * s.w;
        let omega_i = qt_om + om_w;
        let k_i = hat(&s.w) * q * hat(&geo.nu) - q * hat(&geo.nu.cross(&om_w));
        let mut seg = out.fixed_rows_mut::<3>(3);
        seg += vb.cross(&w_i) * m.m_w;
        let kq = -(k_i.transpose() * vb) * m.m_w + (geo.j_w * omega_i).cross(&qt_om);
        let mut seg = out.fixed_rows_mut::<3>(6 + 3 * i);
        seg += kq;
    }
    out
}

/// Thorax accelerations `xi_1_dot = (x_ddot, Omega_dot)` at time `t`.
pub fn eom_rhs(t: f64, state: &FreeState, schedule: &ControlSchedule, model: &Model) -> Result<Vector6<f64>> {
    let wings = model.wings_at(t, schedule);
    let (a, w) = model.accel(t, &state.raw(), &wings)?;
    Ok(Vector6::new(a.x, a.y, a.z, w.x, w.y, w.z))
}
