//! Quasi-static simulator of the tri-leg robot.
//!
//! Each call to [`step`] advances one control period. Morphology tracks the
//! calibrated response curves with first-order relaxation; locomotion only
//! happens once an alternating horizontal drive clears the stiction deadband.

mod curves;
mod geometry;
mod stride;

pub use curves::{eval_curve, ResponseCurve, ResponseCurves};
pub use geometry::{LegGeometry, LEG_COUNT};
pub use stride::{AxisStride, StrideState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{gait_sample, voltage_to_field, ActuationError, CoilMatrix, GaitSignal, VoltageTriple};

/// Side length of the square workspace, mm.
pub const WORKSPACE_MM: f64 = 50.0;
/// Control rate, Hz.
pub const CONTROL_RATE_HZ: f64 = 10.0;

const RANDOM_POSE_MARGIN_MM: f64 = 10.0;
const LEG_HEIGHT_FLOOR_MM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid response curve: {0}")]
    InvalidCurve(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid robot state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
}

/// Morphology constants of the robot and its response to the coil field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotCalibration {
    /// Rest body height, mm.
    pub z0: f64,
    /// A leg at or below this height counts as in contact, mm.
    pub contact_eps: f64,
    /// Fraction of the remaining gap to the curve value closed per step.
    pub relaxation: f64,
    /// Field per volt used to express fields as equivalent drive volts, T/V.
    pub field_per_volt: f64,
    /// Sub-threshold steps tolerated between half-waves of one gait bout.
    pub bout_gap_steps: u32,
    pub curves: ResponseCurves,
    pub geometry: LegGeometry,
}

impl Default for RobotCalibration {
    fn default() -> Self {
        Self {
            z0: 10.0,
            contact_eps: 0.1,
            relaxation: 0.5,
            field_per_volt: crate::actuation::DEFAULT_FIELD_PER_VOLT,
            bout_gap_steps: 10,
            curves: ResponseCurves::default(),
            geometry: LegGeometry::default(),
        }
    }
}

impl RobotCalibration {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(self.z0.is_finite() && self.z0 > 5.0) {
            return Err(SimError::InvalidConfig("z0 must exceed the 5 mm squat range".into()));
        }
        if !positive(self.contact_eps) {
            return Err(SimError::InvalidConfig("contact_eps must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(SimError::InvalidConfig("relaxation must lie in (0, 1]".into()));
        }
        if !positive(self.field_per_volt) {
            return Err(SimError::InvalidConfig("field_per_volt must be positive".into()));
        }
        self.curves.validate()?;
        self.geometry.validate()
    }

    pub fn z_min(&self) -> f64 {
        self.z0 - 5.0
    }

    pub fn z_max(&self) -> f64 {
        self.z0 + 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Control period, s.
    pub dt: f64,
    /// Multiplier on the stiction deadband, models ground friction.
    pub friction_scale: f64,
    /// Standard deviation of Gaussian noise on each stride credit, mm.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1.0 / CONTROL_RATE_HZ, friction_scale: 1.0, noise_std: 0.0, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig("dt must be positive".into()));
        }
        if !(self.friction_scale.is_finite() && self.friction_scale > 0.0) {
            return Err(SimError::InvalidConfig("friction_scale must be positive".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(SimError::InvalidConfig("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Calibration plus the coil matrix: everything [`step`] needs besides the
/// state and run configuration.
#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub calibration: RobotCalibration,
    pub coil: CoilMatrix,
}

/// Pose and morphology of the robot at one control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Centroid in the workspace plane, mm.
    pub p: [f64; 2],
    /// Heading, radians in `[0, 2π)`.
    pub psi: f64,
    /// Body height, mm.
    pub z: f64,
    /// Per-leg height, mm.
    pub h: [f64; LEG_COUNT],
    /// Voltage currently applied.
    pub v: VoltageTriple,
    pub t: u64,
    /// Gait detection state carried between steps.
    #[serde(default)]
    pub stride: StrideState,
}

impl RobotState {
    pub fn rest(calibration: &RobotCalibration) -> Self {
        Self {
            p: [WORKSPACE_MM / 2.0, WORKSPACE_MM / 2.0],
            psi: 0.0,
            z: calibration.z0,
            h: [0.0; LEG_COUNT],
            v: VoltageTriple::ZERO,
            t: 0,
            stride: StrideState::default(),
        }
    }

    pub fn validate(&self, calibration: &RobotCalibration) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidState(msg));
        let finite =
            self.p.iter().chain(self.h.iter()).all(|x| x.is_finite()) && self.psi.is_finite() && self.z.is_finite() && self.v.is_finite();
        if !finite {
            return bad("non-finite field".into());
        }
        if self.p.iter().any(|c| !(0.0..=WORKSPACE_MM).contains(c)) {
            return bad(format!("centroid {:?} outside workspace", self.p));
        }
        if self.z < calibration.z_min() - 1e-9 || self.z > calibration.z_max() + 1e-9 {
            return bad(format!("body height {} outside [{}, {}]", self.z, calibration.z_min(), calibration.z_max()));
        }
        if self.h.iter().any(|&h| h < 0.0) {
            return bad("negative leg height".into());
        }
        if !self.h.iter().any(|&h| h <= calibration.contact_eps) {
            return bad("no leg in contact".into());
        }
        Ok(())
    }

    /// Index of the legs currently off the ground.
    pub fn lifted_legs(&self, contact_eps: f64) -> impl Iterator<Item = usize> + '_ {
        (0..LEG_COUNT).filter(move |&l| self.h[l] > contact_eps)
    }
}

/// Canonical rest state, or a seeded random pose with the centroid in the
/// central 30×30 mm region and a uniform heading.
pub fn reset(seed: u64, randomize_pose: bool, calibration: &RobotCalibration) -> RobotState {
    let mut state = RobotState::rest(calibration);
    if randomize_pose {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = RANDOM_POSE_MARGIN_MM;
        let hi = WORKSPACE_MM - RANDOM_POSE_MARGIN_MM;
        state.p = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        state.psi = rng.random_range(0.0..std::f64::consts::TAU);
    }
    state
}

fn wrap_heading(psi: f64) -> f64 {
    let w = psi.rem_euclid(std::f64::consts::TAU);
    // rem_euclid can round up to exactly TAU
    if w >= std::f64::consts::TAU {
        0.0
    } else {
        w
    }
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn stride_noise(cfg: &SimConfig, t: u64) -> [f64; 2] {
    if cfg.noise_std == 0.0 {
        return [0.0; 2];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
    [normal.sample(&mut rng), normal.sample(&mut rng)]
}

/// Advances the robot by one control step under `v_applied`, which must
/// already be safety-projected.
pub fn step(state: &RobotState, v_applied: VoltageTriple, cfg: &SimConfig, model: &RobotModel) -> Result<RobotState, SimError> {
    let cal = &model.calibration;
    let curves = &cal.curves;
    let geom = &cal.geometry;
    cfg.validate()?;
    state.validate(cal)?;
    if !v_applied.is_finite() {
        return Err(ActuationError::NonFinite("applied voltage").into());
    }

    let b = voltage_to_field(v_applied, &model.coil)?;
    let to_volts = 1.0 / cal.field_per_volt;
    let threshold = curves.stiction_v * cfg.friction_scale;
    let mut next = state.clone();

    // body height relaxes toward the squat curve
    let z_target = cal.z0 + curves.squat_curve.eval(b.bz * to_volts);
    next.z = (state.z + cal.relaxation * (z_target - state.z)).clamp(cal.z_min(), cal.z_max());

    // the leg with the largest hinge torque above threshold lifts; lowest index wins ties
    let hinge = geom.hinge_torques(state.psi, b);
    let mut lifted: Option<usize> = None;
    for (leg, &tau) in hinge.iter().enumerate() {
        if tau > geom.lift_threshold && lifted.is_none_or(|best| tau > hinge[best]) {
            lifted = Some(leg);
        }
    }
    for (leg, &tau) in hinge.iter().enumerate() {
        let target = match lifted {
            Some(l) if l == leg => curves.lift_curve.eval(tau / geom.moment * to_volts).max(0.0),
            _ => 0.0,
        };
        let mut h = state.h[leg] + cal.relaxation * (target - state.h[leg]);
        if target == 0.0 && h < LEG_HEIGHT_FLOOR_MM {
            h = 0.0;
        }
        next.h[leg] = h.max(0.0);
    }
    if next.h.iter().all(|&h| h > cal.contact_eps) {
        let drop = (0..LEG_COUNT)
            .filter(|&l| Some(l) != lifted)
            .min_by(|&a, &c| next.h[a].total_cmp(&next.h[c]))
            .expect("at least two non-lifted legs");
        next.h[drop] = 0.0;
    }

    // heading turns about the lifted leg under a tangential field
    if let Some(leg) = lifted {
        let [tx, ty] = geom.tangential(leg, state.psi);
        let yaw_drive = (b.bx * tx + b.by * ty) * to_volts;
        if yaw_drive.abs() > threshold {
            let dpsi = (curves.rot_rate * (yaw_drive.abs() - threshold)).to_radians();
            next.psi = wrap_heading(state.psi + dpsi.copysign(yaw_drive));
        }
    }

    // alternating drive resolved in the body frame moves the centroid
    let drive_body = rotate([b.bx * to_volts, b.by * to_volts], -state.psi);
    let mut advance_body = [0.0; 2];
    let mut credited = false;
    for (axis, tracker) in next.stride.axes.iter_mut().enumerate() {
        for amplitude in tracker.update(drive_body[axis], threshold, cal.bout_gap_steps) {
            advance_body[axis] += curves.step_curve.eval(amplitude) / 2.0;
            credited = true;
        }
    }
    if credited {
        let advance = rotate(advance_body, state.psi);
        let noise = stride_noise(cfg, state.t);
        for i in 0..2 {
            next.p[i] = (state.p[i] + advance[i] + noise[i]).clamp(0.0, WORKSPACE_MM);
        }
    }

    next.v = v_applied;
    next.t = state.t + 1;
    Ok(next)
}

/// Steps the simulator through one period of `sig`, sampled at `cfg.dt`,
/// on a drive axis resolved in the robot's body frame. Returns the final
/// state and the signed centroid displacement along that axis.
pub fn run_gait_cycle(state: &RobotState, sig: &GaitSignal, cfg: &SimConfig, model: &RobotModel) -> Result<(RobotState, f64), SimError> {
    sig.validate()?;
    let steps = (sig.period() / cfg.dt).round().max(1.0) as usize;
    let psi0 = state.psi;
    let mut current = state.clone();
    for k in 0..steps {
        let drive = gait_sample(sig, k as f64 * cfg.dt);
        let v = match sig.axis {
            crate::actuation::Axis::X => {
                let [x, y] = rotate([drive, 0.0], psi0);
                VoltageTriple::new(x, y, state.v.vz)
            }
            crate::actuation::Axis::Y => {
                let [x, y] = rotate([0.0, drive], psi0);
                VoltageTriple::new(x, y, state.v.vz)
            }
            crate::actuation::Axis::Z => VoltageTriple::new(state.v.vx, state.v.vy, drive),
        };
        current = step(&current, v, cfg, model)?;
    }
    let direction = match sig.axis {
        crate::actuation::Axis::X => rotate([1.0, 0.0], psi0),
        crate::actuation::Axis::Y => rotate([0.0, 1.0], psi0),
        crate::actuation::Axis::Z => [0.0, 0.0],
    };
    let displacement = (current.p[0] - state.p[0]) * direction[0] + (current.p[1] - state.p[1]) * direction[1];
    Ok((current, displacement))
}

/// A single-owner simulator instance.
#[derive(Debug, Clone)]
pub struct Simulator {
    state: RobotState,
    model: RobotModel,
    cfg: SimConfig,
}

impl Simulator {
    pub fn new(state: RobotState, model: RobotModel, cfg: SimConfig) -> Result<Self, SimError> {
        model.calibration.validate()?;
        cfg.validate()?;
        state.validate(&model.calibration)?;
        Ok(Self { state, model, cfg })
    }

    /// Simulator at [`reset`] with the configured seed.
    pub fn from_reset(model: RobotModel, cfg: SimConfig, randomize_pose: bool) -> Result<Self, SimError> {
        let state = reset(cfg.seed, randomize_pose, &model.calibration);
        Self::new(state, model, cfg)
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn step(&mut self, v_applied: VoltageTriple) -> Result<&RobotState, SimError> {
        self.state = step(&self.state, v_applied, &self.cfg, &self.model)?;
        Ok(&self.state)
    }

    pub fn set_state(&mut self, state: RobotState) -> Result<(), SimError> {
        state.validate(&self.model.calibration)?;
        self.state = state;
        Ok(())
    }
}
