//! Coil voltages, the hardware safety envelope, field/torque mapping and gait
//! drive signals.

use nalgebra::{Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute per-axis voltage cap of the coil rig, in volts.
pub const DEFAULT_V_MAX: f64 = 2.5;
/// Per-step increment cap, in volts.
pub const DEFAULT_DV_MAX: f64 = 0.5;
/// Field produced by one volt on a coil axis of the nominal rig, in tesla.
pub const DEFAULT_FIELD_PER_VOLT: f64 = 1.0e-3;
/// Resolution of the signal generator. Applied voltages are snapped to it.
pub const VOLTAGE_RESOLUTION: f64 = 1.0e-4;
const STEPS_PER_VOLT: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActuationError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid safety envelope: v_max={v_max}, dv_max={dv_max}")]
    InvalidEnvelope { v_max: f64, dv_max: f64 },
    #[error("coil matrix is singular or non-finite")]
    SingularCoilMatrix,
    #[error("randomization scale must lie in [0, 1), got {0}")]
    InvalidScale(f64),
    #[error("invalid gait signal: {0}")]
    InvalidGait(&'static str),
}

/// Voltage on the x, y and z coil pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoltageTriple {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl VoltageTriple {
    pub const ZERO: Self = Self { vx: 0.0, vy: 0.0, vz: 0.0 };

    pub const fn new(vx: f64, vy: f64, vz: f64) -> Self {
        Self { vx, vy, vz }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.vz]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.vz.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.vz == 0.0
    }

    /// Infinity norm.
    pub fn max_abs(&self) -> f64 {
        self.vx.abs().max(self.vy.abs()).max(self.vz.abs())
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.vx), f(self.vy), f(self.vz))
    }

    pub fn zip(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(f(self.vx, other.vx), f(self.vy, other.vy), f(self.vz, other.vz))
    }

    pub fn scale(self, k: f64) -> Self {
        self.map(|c| c * k)
    }

    /// Snap each component to the signal generator resolution so values
    /// survive a fixed four-decimal text encoding unchanged.
    pub fn snapped(self) -> Self {
        self.map(snap_to_resolution)
    }
}

impl std::ops::Add for VoltageTriple {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }
}

impl std::ops::Sub for VoltageTriple {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }
}

/// Rounds to the nearest multiple of [`VOLTAGE_RESOLUTION`]. The result is
/// the double nearest to a four-decimal number, which is exactly what
/// parsing that number back from text produces.
pub fn snap_to_resolution(v: f64) -> f64 {
    let snapped = (v * STEPS_PER_VOLT).round() / STEPS_PER_VOLT;
    // keep -0.0 out of stored tables
    if snapped == 0.0 {
        0.0
    } else {
        snapped
    }
}

/// The constraint set guarding the coil voltages: a per-axis magnitude cap
/// and a per-axis per-step increment cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEnvelope {
    pub v_max: f64,
    pub dv_max: f64,
}

impl Default for SafetyEnvelope {
    fn default() -> Self {
        Self { v_max: DEFAULT_V_MAX, dv_max: DEFAULT_DV_MAX }
    }
}

impl SafetyEnvelope {
    pub fn new(v_max: f64, dv_max: f64) -> Result<Self, ActuationError> {
        let env = Self { v_max, dv_max };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), ActuationError> {
        let ok = self.v_max.is_finite() && self.dv_max.is_finite() && self.v_max > 0.0 && self.dv_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ActuationError::InvalidEnvelope { v_max: self.v_max, dv_max: self.dv_max })
        }
    }

    pub fn contains(&self, v: &VoltageTriple) -> bool {
        v.max_abs() <= self.v_max
    }
}

/// Projects a requested increment onto the safety envelope: each axis of
/// `dv` is clamped to `±dv_max`, then the sum is clamped to `±v_max`.
///
/// For box constraints the sequential per-axis clamp coincides with the
/// joint infinity-norm projection. The realized increment never exceeds
/// `dv_max` provided `prev` is itself feasible.
pub fn project_voltage(prev: VoltageTriple, dv: VoltageTriple, env: &SafetyEnvelope) -> Result<VoltageTriple, ActuationError> {
    env.validate()?;
    if !prev.is_finite() {
        return Err(ActuationError::NonFinite("previous voltage"));
    }
    if !dv.is_finite() {
        return Err(ActuationError::NonFinite("voltage increment"));
    }
    let rate_limited = dv.map(|d| d.clamp(-env.dv_max, env.dv_max));
    Ok((prev + rate_limited).map(|v| v.clamp(-env.v_max, env.v_max)))
}

/// Projects `dv` and snaps the result to the generator resolution. Returns
/// the applied voltage and the increment actually realized.
pub fn apply_increment(
    prev: VoltageTriple,
    dv: VoltageTriple,
    env: &SafetyEnvelope,
) -> Result<(VoltageTriple, VoltageTriple), ActuationError> {
    let applied = project_voltage(prev, dv, env)?.snapped();
    Ok((applied, (applied - prev).snapped()))
}

/// Calibrated linear map from coil voltages to field components, tesla per volt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct CoilMatrix(Matrix3<f64>);

impl CoilMatrix {
    pub fn new(k: Matrix3<f64>) -> Result<Self, ActuationError> {
        if k.iter().any(|e| !e.is_finite()) || !is_invertible(&k) {
            return Err(ActuationError::SingularCoilMatrix);
        }
        Ok(Self(k))
    }

    /// `gain` tesla per volt on each axis, no cross-coupling.
    pub fn diagonal(gain: f64) -> Result<Self, ActuationError> {
        Self::new(Matrix3::identity() * gain)
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, ActuationError> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let k = &self.0;
        [[k[(0, 0)], k[(0, 1)], k[(0, 2)]], [k[(1, 0)], k[(1, 1)], k[(1, 2)]], [k[(2, 0)], k[(2, 1)], k[(2, 2)]]]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

impl Default for CoilMatrix {
    fn default() -> Self {
        Self(Matrix3::identity() * DEFAULT_FIELD_PER_VOLT)
    }
}

impl TryFrom<[[f64; 3]; 3]> for CoilMatrix {
    type Error = ActuationError;
    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<CoilMatrix> for [[f64; 3]; 3] {
    fn from(k: CoilMatrix) -> Self {
        k.rows()
    }
}

fn is_invertible(k: &Matrix3<f64>) -> bool {
    let scale = k.norm();
    let det = k.determinant();
    scale > 0.0 && det.is_finite() && det.abs() > 1e-12 * scale.powi(3)
}

/// Field components in tesla.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldTriple {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldTriple {
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn from_vector(b: Vector3<f64>) -> Self {
        Self { bx: b.x, by: b.y, bz: b.z }
    }
}

/// A leg magnet's moment in the world frame, A·m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetMoment(Vector3<f64>);

impl MagnetMoment {
    pub fn new(m: Vector3<f64>) -> Result<Self, ActuationError> {
        if m.iter().any(|c| !c.is_finite()) {
            return Err(ActuationError::NonFinite("magnetic moment"));
        }
        if m.norm() == 0.0 {
            return Err(ActuationError::NonFinite("zero magnetic moment"));
        }
        Ok(Self(m))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// B = K·V.
pub fn voltage_to_field(v: VoltageTriple, k: &CoilMatrix) -> Result<FieldTriple, ActuationError> {
    if !v.is_finite() {
        return Err(ActuationError::NonFinite("voltage"));
    }
    Ok(FieldTriple::from_vector(k.matrix() * v.to_vector()))
}

/// τ = m × B, in N·m.
pub fn torque(m: &MagnetMoment, b: FieldTriple) -> Vector3<f64> {
    m.vector().cross(&b.to_vector())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Sinusoidal coil drive `amplitude·sin(2π·frequency·t + phase)` on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitSignal {
    pub amplitude: f64,
    pub frequency: f64,
    pub axis: Axis,
    #[serde(default)]
    pub phase: f64,
}

impl GaitSignal {
    pub fn new(amplitude: f64, frequency: f64, axis: Axis) -> Result<Self, ActuationError> {
        let sig = Self { amplitude, frequency, axis, phase: 0.0 };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<(), ActuationError> {
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(ActuationError::InvalidGait("frequency must be positive"));
        }
        if !self.amplitude.is_finite() || !self.phase.is_finite() {
            return Err(ActuationError::InvalidGait("non-finite amplitude or phase"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Signed drive direction: the sign of the opening half-wave.
    pub fn direction(&self) -> f64 {
        if self.amplitude < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

pub fn gait_sample(sig: &GaitSignal, t: f64) -> f64 {
    sig.amplitude * (std::f64::consts::TAU * sig.frequency * t + sig.phase).sin()
}

/// Multiplies every entry of `k` by an independent factor drawn uniformly
/// from `[1 - scale, 1 + scale]`. Degenerate draws are resampled.
pub fn randomize_coil_matrix(k: &CoilMatrix, scale: f64, seed: u64) -> Result<CoilMatrix, ActuationError> {
    if !(scale.is_finite() && (0.0..1.0).contains(&scale)) {
        return Err(ActuationError::InvalidScale(scale));
    }
    if scale == 0.0 {
        return Ok(*k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let perturbed = k.matrix().map(|e| e * rng.random_range(1.0 - scale..=1.0 + scale));
        if let Ok(out) = CoilMatrix::new(perturbed) {
            return Ok(out);
        }
    }
}
