//! Wing kinematics: flapping, pitch and deviation waveforms, the resulting
//! wing attitudes and angular rates, and the six-channel control deviation
//! layered on a reference parameter set.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{exp_matrix, exp_so3, hat, Rotation};

/// Number of control channels in a [`ControlDelta`].
pub const N_CHANNELS: usize = 6;
/// Knot intervals per flapping period.
pub const N_KNOTS: usize = 10;
/// Length of the flat control vector `u` (channel-major, knots 1..=10).
pub const U_LEN: usize = N_CHANNELS * N_KNOTS;
/// Version tag of the `u` layout, stamped into every data/policy file.
pub const U_LAYOUT_VERSION: u32 = 1;
/// Default clamp on each control channel (rad).
pub const DEFAULT_DELTA_MAX: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

/// Waveform parameters of one wing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WingParams {
    /// Flapping frequency (Hz).
    pub f: f64,
    pub phi_m: f64,
    pub phi_0: f64,
    /// Flap waveform shape in (0, 1]; 1 gives a triangle wave.
    pub phi_k: f64,
    pub theta_m: f64,
    pub theta_0: f64,
    /// Pitch waveform sharpness in (0, inf).
    pub theta_c: f64,
    pub theta_a: f64,
    pub psi_m: f64,
    pub psi_0: f64,
    /// Deviation frequency multiple.
    pub psi_n: u32,
    pub psi_a: f64,
    /// Stroke-plane angle (rad).
    pub beta: f64,
}

impl WingParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidWingParams(msg.to_string()));
        if !(self.f > 0.0) {
            return bad("f must be positive");
        }
        if !(self.phi_k > 0.0 && self.phi_k <= 1.0) {
            return bad("phi_k must lie in (0, 1]");
        }
        if !(self.theta_c > 0.0) {
            return bad("theta_c must be positive");
        }
        if !(self.theta_a > -PI && self.theta_a < PI) || !(self.psi_a > -PI && self.psi_a < PI) {
            return bad("phase offsets must lie in (-pi, pi)");
        }
        if self.psi_n == 0 {
            return bad("psi_n must be a positive integer");
        }
        let all = [
            self.phi_m, self.phi_0, self.theta_m, self.theta_0, self.psi_m, self.psi_0, self.beta,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite waveform parameter");
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f
    }
}

/// Right/left wing parameters sharing one flapping frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WingPair {
    pub right: WingParams,
    pub left: WingParams,
}

impl WingPair {
    pub fn symmetric(p: WingParams) -> Self {
        Self { right: p, left: p }
    }

    pub fn validate(&self) -> Result<()> {
        self.right.validate()?;
        self.left.validate()?;
        if self.right.f != self.left.f {
            return Err(Error::InvalidWingParams("wings must share the flapping frequency".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.right.period()
    }

    pub fn get(&self, side: Side) -> &WingParams {
        match side {
            Side::Right => &self.right,
            Side::Left => &self.left,
        }
    }
}

/// Angle with its first two time derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AngleRates {
    pub value: f64,
    pub rate: f64,
    pub accel: f64,
}

pub fn flap_angle(t: f64, p: &WingParams) -> AngleRates {
    let w = 2.0 * PI * p.f;
    let (s, c) = (w * t).sin_cos();
    let k = p.phi_k;
    let scale = p.phi_m / k.asin();
    let u = k * c;
    let du = -k * w * s;
    let ddu = -k * w * w * c;
    let one_minus = (1.0 - u * u).max(0.0);
    let root = one_minus.sqrt();
    let (d1, d2) = if root > 1e-12 {
        (du / root, ddu / root + u * du * du / (one_minus * root))
    } else {
        // triangle-wave corner (phi_k = 1 at reversal): one-sided slope, no curvature
        (-w * s.signum() * k, 0.0)
    };
    AngleRates { value: scale * u.asin() + p.phi_0, rate: scale * d1, accel: scale * d2 }
}

pub fn pitch_angle(t: f64, p: &WingParams) -> AngleRates {
    let w = 2.0 * PI * p.f;
    let (s, c) = (w * t + p.theta_a).sin_cos();
    let scale = p.theta_m / p.theta_c.tanh();
    let z = p.theta_c * s;
    let dz = p.theta_c * w * c;
    let ddz = -p.theta_c * w * w * s;
    let th = z.tanh();
    let sech2 = 1.0 - th * th;
    AngleRates {
        value: scale * th + p.theta_0,
        rate: scale * sech2 * dz,
        accel: scale * (sech2 * ddz - 2.0 * th * sech2 * dz * dz),
    }
}

pub fn deviation_angle(t: f64, p: &WingParams) -> AngleRates {
    let w = 2.0 * PI * f64::from(p.psi_n) * p.f;
    let (s, c) = (w * t + p.psi_a).sin_cos();
    AngleRates {
        value: p.psi_m * c + p.psi_0,
        rate: -p.psi_m * w * s,
        accel: -p.psi_m * w * w * c,
    }
}

/// Signed rotation angles and axes of the three time-varying factors of the
/// wing attitude, after the fixed stroke-plane factor.
fn euler_factors(side: Side) -> [(f64, Vector3<f64>); 3] {
    match side {
        Side::Right => [(1.0, Vector3::x()), (-1.0, Vector3::z()), (1.0, Vector3::y())],
        Side::Left => [(-1.0, Vector3::x()), (1.0, Vector3::z()), (1.0, Vector3::y())],
    }
}

/// Wing attitude relative to the body from 1-3-2 Euler angles.
pub fn wing_attitude(phi: f64, psi: f64, theta: f64, beta: f64, side: Side) -> Rotation {
    let [(s1, a1), (s2, a2), (s3, a3)] = euler_factors(side);
    exp_so3(&(Vector3::y() * beta))
        * exp_so3(&(a1 * (s1 * phi)))
        * exp_so3(&(a2 * (s2 * psi)))
        * exp_so3(&(a3 * (s3 * theta)))
}

/// Attitude, angular velocity and angular acceleration of one wing (body-relative,
/// resolved in the wing frame).
#[derive(Clone, Copy, Debug)]
pub struct WingMotion {
    pub q: Rotation,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

pub fn wing_velocity_accel(t: f64, p: &WingParams, side: Side) -> WingMotion {
    let angles = [flap_angle(t, p), deviation_angle(t, p), pitch_angle(t, p)];
    let factors = euler_factors(side);
    let mut q = exp_matrix(&(Vector3::y() * p.beta));
    let mut omega = Vector3::zeros();
    let mut omega_dot = Vector3::zeros();
    // angular velocity of the partial product A_1 ... A_k, resolved in frame k
    for ((sign, axis), ang) in factors.iter().zip(angles.iter()) {
        let a = exp_matrix(&(axis * (sign * ang.value)));
        let at = a.transpose();
        let rate = sign * ang.rate;
        let accel = sign * ang.accel;
        omega_dot = at * omega_dot - hat(axis) * at * omega * rate + axis * accel;
        omega = at * omega + axis * rate;
        q *= a;
    }
    WingMotion { q: Rotation::new(q).unwrap_or_else(|_| reorthonormal_fallback(q)), omega, omega_dot }
}

// Products of four exact exponentials are orthogonal to rounding; this path
// only exists so the function stays infallible.
fn reorthonormal_fallback(q: Matrix3<f64>) -> Rotation {
    let svd = q.svd(true, true);
    let m = svd.u.unwrap() * svd.v_t.unwrap();
    Rotation::new(m).expect("polar factor is a rotation")
}

/// Six-channel deviation
/// `[dphi_m_s, dtheta_0_s, dphi_m_a, dphi_0_s, dtheta_0_a, dpsi_0_a]` (rad).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlDelta(pub [f64; N_CHANNELS]);

impl ControlDelta {
    pub fn zero() -> Self {
        Self([0.0; N_CHANNELS])
    }

    pub fn check(&self, delta_max: f64) -> Result<()> {
        for (channel, &value) in self.0.iter().enumerate() {
            if !value.is_finite() || value.abs() > delta_max + 1e-12 {
                return Err(Error::DeltaClamp { channel, value, limit: delta_max });
            }
        }
        Ok(())
    }

    pub fn clamped(&self, delta_max: f64) -> Self {
        Self(self.0.map(|v| if v.is_finite() { v.clamp(-delta_max, delta_max) } else { 0.0 }))
    }
}

/// Shift the reference pair by a control deviation.
pub fn apply_delta(reference: &WingPair, delta: &ControlDelta, delta_max: f64) -> Result<WingPair> {
    delta.check(delta_max)?;
    Ok(apply_delta_unchecked(reference, delta))
}

pub(crate) fn apply_delta_unchecked(reference: &WingPair, delta: &ControlDelta) -> WingPair {
    let [phi_m_s, theta_0_s, phi_m_a, phi_0_s, theta_0_a, psi_0_a] = delta.0;
    let mut out = *reference;
    out.right.phi_m += phi_m_s + phi_m_a;
    out.left.phi_m += phi_m_s - phi_m_a;
    out.right.theta_0 += theta_0_s + theta_0_a;
    out.left.theta_0 += theta_0_s - theta_0_a;
    out.right.phi_0 += phi_0_s;
    out.left.phi_0 += phi_0_s;
    out.right.psi_0 += psi_0_a;
    out.left.psi_0 -= psi_0_a;
    out
}

/// Symmetric/asymmetric averaging of the per-wing changes; left inverse of
/// [`apply_delta`].
pub fn delta_between(reference: &WingPair, shifted: &WingPair) -> ControlDelta {
    let d = |r: f64, l: f64, r0: f64, l0: f64| ((r - r0 + l - l0) * 0.5, (r - r0 - (l - l0)) * 0.5);
    let (phi_m_s, phi_m_a) =
        d(shifted.right.phi_m, shifted.left.phi_m, reference.right.phi_m, reference.left.phi_m);
    let (theta_0_s, theta_0_a) =
        d(shifted.right.theta_0, shifted.left.theta_0, reference.right.theta_0, reference.left.theta_0);
    let (phi_0_s, _) = d(shifted.right.phi_0, shifted.left.phi_0, reference.right.phi_0, reference.left.phi_0);
    let (_, psi_0_a) = d(shifted.right.psi_0, shifted.left.psi_0, reference.right.psi_0, reference.left.psi_0);
    ControlDelta([phi_m_s, theta_0_s, phi_m_a, phi_0_s, theta_0_a, psi_0_a])
}

/// Piecewise-linear control schedule over one flapping period with
/// `N_KNOTS + 1` knots; the first and last knots are zero by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    period: f64,
    knots: Vec<ControlDelta>,
}

impl ControlSchedule {
    pub fn zero(period: f64) -> Self {
        Self { period, knots: vec![ControlDelta::zero(); N_KNOTS + 1] }
    }

    /// Build from interior knots `1..N_KNOTS-1`; endpoints are set to zero.
    pub fn from_interior(period: f64, interior: &[ControlDelta]) -> Result<Self> {
        if interior.len() != N_KNOTS - 1 {
            return Err(Error::Dimension(format!("expected {} interior knots, got {}", N_KNOTS - 1, interior.len())));
        }
        let mut knots = Vec::with_capacity(N_KNOTS + 1);
        knots.push(ControlDelta::zero());
        knots.extend_from_slice(interior);
        knots.push(ControlDelta::zero());
        Ok(Self { period, knots })
    }

    /// Decode the 60-value layout: channel-major, knots 1..=10. The value for
    /// knot 10 (the period endpoint) is ignored and reconstructed as zero.
    pub fn from_u(period: f64, u: &[f64]) -> Result<Self> {
        if u.len() != U_LEN {
            return Err(Error::Dimension(format!("u has length {}, expected {U_LEN}", u.len())));
        }
        let interior: Vec<ControlDelta> = (1..N_KNOTS)
            .map(|k| ControlDelta(std::array::from_fn(|ch| u[ch * N_KNOTS + (k - 1)])))
            .collect();
        Self::from_interior(period, &interior)
    }

    pub fn to_u(&self) -> [f64; U_LEN] {
        let mut u = [0.0; U_LEN];
        for ch in 0..N_CHANNELS {
            for k in 1..=N_KNOTS {
                u[ch * N_KNOTS + (k - 1)] = self.knots[k].0[ch];
            }
        }
        u
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn knots(&self) -> &[ControlDelta] {
        &self.knots
    }

    pub fn clamped(&self, delta_max: f64) -> Self {
        Self { period: self.period, knots: self.knots.iter().map(|k| k.clamped(delta_max)).collect() }
    }

    pub fn eval(&self, t: f64) -> Result<ControlDelta> {
        let tol = 1e-12 * self.period;
        if !(t >= -tol && t <= self.period + tol) {
            return Err(Error::ScheduleRange { t, period: self.period });
        }
        Ok(self.eval_clamped(t))
    }

    pub(crate) fn eval_clamped(&self, t: f64) -> ControlDelta {
        let n = self.knots.len() - 1;
        let s = (t / self.period * n as f64).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let w = s - i as f64;
        let (a, b) = (&self.knots[i].0, &self.knots[i + 1].0);
        ControlDelta(std::array::from_fn(|c| a[c] + w * (b[c] - a[c])))
    }
}

/// Reference hover waveform used as the default orbit-search seed.
pub fn default_reference() -> WingParams {
    WingParams {
        f: 11.75,
        phi_m: 0.9,
        phi_0: 0.0,
        phi_k: 0.8,
        theta_m: 0.7,
        theta_0: 0.0,
        theta_c: 2.0,
        theta_a: 0.0,
        psi_m: 0.0,
        psi_0: 0.0,
        psi_n: 2,
        psi_a: 0.0,
        beta: std::f64::consts::FRAC_PI_2,
    }
}
