//! Scripted expert: an instruction grammar and a phase machine that turns
//! one instruction into a stream of safe voltage increments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{snap_to_resolution, SafetyEnvelope, VoltageTriple, VOLTAGE_RESOLUTION};
use crate::primitive::{wrap_deg, PrimitiveKind, PrimitiveSpec, Thresholds};
use crate::robot::{RobotCalibration, RobotState, LEG_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("instruction parse error at token {position} (`{token}`): {message}")]
pub struct ParseError {
    /// 1-based token index; 0 for an empty instruction.
    pub position: usize,
    pub token: String,
    pub message: String,
}

/// A parsed motion instruction. Leg indices are 0-based here and 1-based in text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstructionSpec {
    Squat,
    /// Return to rest; `leg` names the leg expected to come down.
    Recover {
        leg: Option<usize>,
    },
    LiftLeg {
        leg: usize,
    },
    /// Signed heading change in degrees, positive to the left.
    Rotate {
        degrees: f64,
    },
    /// Travel along the body x axis; `reverse` walks toward −x.
    Forward {
        distance: f64,
        reverse: bool,
    },
}

/// Leg lifted by `LIFT_BACK_LEG`.
pub const BACK_LEG: usize = 2;

impl InstructionSpec {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            InstructionSpec::Squat => PrimitiveKind::Squat,
            InstructionSpec::Recover { .. } => PrimitiveKind::Recovery,
            InstructionSpec::LiftLeg { .. } => PrimitiveKind::LiftLeg,
            InstructionSpec::Rotate { degrees } if *degrees < 0.0 => PrimitiveKind::RotateRight,
            InstructionSpec::Rotate { .. } => PrimitiveKind::RotateLeft,
            InstructionSpec::Forward { .. } => PrimitiveKind::Forward,
        }
    }

    /// Success criterion for this instruction issued at `state0`.
    pub fn primitive_spec(&self, state0: &RobotState, thresholds: &Thresholds, cal: &RobotCalibration) -> PrimitiveSpec {
        let spec = PrimitiveSpec::new(self.kind(), thresholds.clone(), cal);
        match *self {
            InstructionSpec::Squat => spec,
            InstructionSpec::Recover { leg } => {
                let leg = leg.unwrap_or_else(|| highest_leg(state0));
                spec.with_leg(leg)
            }
            InstructionSpec::LiftLeg { leg } => spec.with_leg(leg),
            InstructionSpec::Rotate { degrees } => spec.with_psi_star(degrees),
            InstructionSpec::Forward { reverse, .. } => spec.with_axis(state0.psi + if reverse { std::f64::consts::PI } else { 0.0 }),
        }
    }
}

fn highest_leg(state: &RobotState) -> usize {
    (0..LEG_COUNT).fold(0, |best, l| if state.h[l] > state.h[best] { l } else { best })
}

impl fmt::Display for InstructionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstructionSpec::Squat => write!(f, "SQUAT"),
            InstructionSpec::Recover { leg: None } => write!(f, "STAND_UP"),
            InstructionSpec::Recover { leg: Some(l) } => write!(f, "RECOVER {}", l + 1),
            InstructionSpec::LiftLeg { leg } => write!(f, "LIFT_LEG {}", leg + 1),
            InstructionSpec::Rotate { degrees } if *degrees < 0.0 => write!(f, "ROTATE_RIGHT {}", -degrees),
            InstructionSpec::Rotate { degrees } => write!(f, "ROTATE_LEFT {degrees}"),
            InstructionSpec::Forward { distance, reverse: false } => write!(f, "FORWARD {distance}"),
            InstructionSpec::Forward { distance, reverse: true } => write!(f, "BACKWARD {distance}"),
        }
    }
}

impl std::str::FromStr for InstructionSpec {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_instruction(s)
    }
}

/// Parses the keyword grammar:
///
/// ```text
/// SQUAT
/// STAND_UP | RECOVER [leg]
/// LIFT_LEG leg | LIFT_BACK_LEG
/// ROTATE_LEFT deg | ROTATE_RIGHT deg
/// FORWARD mm | BACKWARD mm
/// ```
///
/// Keywords are case-insensitive; legs are numbered 1 to 3.
pub fn parse_instruction(text: &str) -> Result<InstructionSpec, ParseError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let err = |position: usize, message: &str| ParseError {
        position,
        token: tokens.get(position.wrapping_sub(1)).unwrap_or(&"").to_string(),
        message: message.to_string(),
    };
    let Some(first) = tokens.first() else {
        return Err(err(0, "empty instruction"));
    };
    let keyword = first.to_ascii_uppercase();

    let number = |i: usize, what: &str| -> Result<f64, ParseError> {
        let tok = tokens.get(i - 1).ok_or_else(|| err(i, &format!("missing {what}")))?;
        tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(i, &format!("expected a number for {what}")))
    };
    let leg = |i: usize| -> Result<usize, ParseError> {
        let v = number(i, "leg")?;
        if v.fract() != 0.0 || !(1.0..=LEG_COUNT as f64).contains(&v) {
            return Err(err(i, "leg must be 1, 2 or 3"));
        }
        Ok(v as usize - 1)
    };
    let positive = |i: usize, what: &str| -> Result<f64, ParseError> {
        let v = number(i, what)?;
        if v <= 0.0 {
            return Err(err(i, &format!("{what} must be positive")));
        }
        Ok(v)
    };

    let (spec, arity) = match keyword.as_str() {
        "SQUAT" => (InstructionSpec::Squat, 1),
        "STAND_UP" | "RECOVER" if tokens.len() == 1 => (InstructionSpec::Recover { leg: None }, 1),
        "STAND_UP" | "RECOVER" => (InstructionSpec::Recover { leg: Some(leg(2)?) }, 2),
        "LIFT_LEG" => (InstructionSpec::LiftLeg { leg: leg(2)? }, 2),
        "LIFT_BACK_LEG" => (InstructionSpec::LiftLeg { leg: BACK_LEG }, 1),
        "ROTATE_LEFT" => (InstructionSpec::Rotate { degrees: positive(2, "angle")? }, 2),
        "ROTATE_RIGHT" => (InstructionSpec::Rotate { degrees: -positive(2, "angle")? }, 2),
        "FORWARD" => (InstructionSpec::Forward { distance: positive(2, "distance")?, reverse: false }, 2),
        "BACKWARD" => (InstructionSpec::Forward { distance: positive(2, "distance")?, reverse: true }, 2),
        _ => return Err(err(1, "unknown keyword")),
    };
    if tokens.len() > arity {
        return Err(err(arity + 1, "unexpected trailing token"));
    }
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Crouch,
    LiftA,
    SwingA,
    LiftB,
    SwingB,
    Recover,
}

impl Phase {
    /// Whether `self → next` is an edge of the phase graph. Self-loops are allowed.
    pub fn can_follow(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (Idle, Crouch)
                    | (Idle, Recover)
                    | (Crouch, LiftA)
                    | (LiftA, SwingA)
                    | (SwingA, LiftB)
                    | (LiftB, SwingB)
                    | (SwingB, LiftA)
                    | (Recover, Idle)
            )
            || (next == Recover && self != Idle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitPhase {
    pub phase: Phase,
    pub steps_in_phase: u32,
}

impl Default for GaitPhase {
    fn default() -> Self {
        Self { phase: Phase::Idle, steps_in_phase: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Vertical drive held while walking, turning or lifting, volts.
    pub crouch_v: f64,
    pub squat_v: f64,
    pub lift_v: f64,
    /// Radial drive on the pivot leg while turning.
    pub pivot_v: f64,
    /// Commanded turn rate per degree of heading error, 1/step.
    pub yaw_gain: f64,
    /// Turn rate cap, degrees per step.
    pub yaw_rate_max: f64,
    /// Extra distance planned beyond the instruction, mm.
    pub forward_margin: f64,
    pub max_replans: u32,
    /// Steps to hold a reached target before the next phase.
    pub hold_steps: u32,
    /// A target counts as reached within this many volts.
    pub reach_tol: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            crouch_v: 1.0,
            squat_v: 2.0,
            lift_v: 2.0,
            pivot_v: 1.5,
            yaw_gain: 0.5,
            yaw_rate_max: 2.4,
            forward_margin: 1.0,
            max_replans: 3,
            hold_steps: 1,
            reach_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Origin {
    p: [f64; 2],
    psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct StridePlan {
    amplitude: f64,
    half_waves: u32,
    done: u32,
}

/// One expert bound to one instruction. Call [`ExpertPolicy::next_action`]
/// once per control step with the latest state.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    instruction: InstructionSpec,
    cfg: ExpertConfig,
    env: SafetyEnvelope,
    cal: RobotCalibration,
    tolerance_deg: f64,
    gait: GaitPhase,
    origin: Option<Origin>,
    plan: Option<StridePlan>,
    attempts: u32,
    trace: Vec<Phase>,
}

impl ExpertPolicy {
    pub fn new(
        instruction: InstructionSpec,
        cfg: ExpertConfig,
        env: SafetyEnvelope,
        cal: RobotCalibration,
        thresholds: &Thresholds,
    ) -> Self {
        Self {
            instruction,
            cfg,
            env,
            cal,
            tolerance_deg: thresholds.eps_psi,
            gait: GaitPhase::default(),
            origin: None,
            plan: None,
            attempts: 0,
            trace: vec![Phase::Idle],
        }
    }

    pub fn instruction(&self) -> &InstructionSpec {
        &self.instruction
    }

    pub fn phase(&self) -> GaitPhase {
        self.gait
    }

    /// Phases visited so far, consecutive duplicates collapsed.
    pub fn trace(&self) -> &[Phase] {
        &self.trace
    }

    fn enter(&mut self, phase: Phase) {
        debug_assert!(self.gait.phase.can_follow(phase), "{:?} -> {phase:?}", self.gait.phase);
        if phase != self.gait.phase {
            self.gait = GaitPhase { phase, steps_in_phase: 0 };
            self.trace.push(phase);
        }
    }

    /// Body-frame (x, y) drive plus vz, rotated to world axes.
    fn world_target(psi: f64, body: [f64; 2], vz: f64) -> VoltageTriple {
        let (s, c) = psi.sin_cos();
        VoltageTriple::new(c * body[0] - s * body[1], s * body[0] + c * body[1], vz).snapped()
    }

    fn radial_body(&self, leg: usize, u: f64) -> [f64; 2] {
        let a = self.cal.geometry.leg_angles_deg[leg].to_radians();
        [u * a.cos(), u * a.sin()]
    }

    /// Increment toward `target`, scaled uniformly to respect `dv_max`.
    fn approach(&self, v: VoltageTriple, target: VoltageTriple) -> VoltageTriple {
        let delta = target - v;
        let m = delta.max_abs();
        let dv = if m > self.env.dv_max { delta.scale(self.env.dv_max / m) } else { delta };
        dv.map(|d| {
            let s = snap_to_resolution(d);
            if s.abs() > self.env.dv_max {
                s - VOLTAGE_RESOLUTION.copysign(s)
            } else {
                s
            }
        })
    }

    fn reached(&self, v: VoltageTriple, target: VoltageTriple) -> bool {
        (target - v).max_abs() <= self.cfg.reach_tol
    }

    /// Heading error to the rotation goal, degrees.
    fn heading_error(&self, state: &RobotState, degrees: f64) -> f64 {
        let origin = self.origin.expect("origin set on first step");
        wrap_deg(degrees - (state.psi - origin.psi).to_degrees())
    }

    fn forward_progress(&self, state: &RobotState, reverse: bool) -> f64 {
        let origin = self.origin.expect("origin set on first step");
        let axis = origin.psi + if reverse { std::f64::consts::PI } else { 0.0 };
        (state.p[0] - origin.p[0]) * axis.cos() + (state.p[1] - origin.p[1]) * axis.sin()
    }

    /// Amplitude and half-wave count covering `distance` mm.
    fn plan_strides(&self, distance: f64, sign: f64) -> StridePlan {
        let curve = &self.cal.curves.step_curve;
        let v_cap = self.cfg.lift_v;
        let max_stride = curve.eval(sign * v_cap).abs();
        let half_waves = ((2.0 * distance / max_stride).ceil() as u32).max(2);
        // each half-wave credits half the per-cycle stride
        let per_wave = distance / f64::from(half_waves);
        let edge = self.cal.curves.stiction_v;
        let (mut lo, mut hi) = (edge, v_cap);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if curve.eval(sign * mid).abs() / 2.0 < per_wave {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // round up so snapping never shortens the stride
        let amplitude = ((hi / VOLTAGE_RESOLUTION).ceil() * VOLTAGE_RESOLUTION).min(v_cap);
        StridePlan { amplitude, half_waves, done: 0 }
    }

    /// Next voltage increment for `state`.
    pub fn next_action(&mut self, state: &RobotState) -> VoltageTriple {
        let origin = *self.origin.get_or_insert(Origin { p: state.p, psi: state.psi });
        let v = state.v;
        let crouch = self.cfg.crouch_v;
        let psi = state.psi;
        let zero = VoltageTriple::ZERO;

        let target = match (self.instruction, self.gait.phase) {
            (_, Phase::Recover) => {
                if self.reached(v, zero) {
                    self.enter(Phase::Idle);
                }
                zero
            }

            (InstructionSpec::Squat, Phase::Idle) => {
                self.enter(Phase::Crouch);
                VoltageTriple::new(0.0, 0.0, self.cfg.squat_v)
            }
            (InstructionSpec::Squat, _) => VoltageTriple::new(0.0, 0.0, self.cfg.squat_v),

            (InstructionSpec::Recover { .. }, _) => {
                self.enter(Phase::Recover);
                zero
            }

            (InstructionSpec::LiftLeg { leg }, Phase::Idle | Phase::Crouch) => {
                let t = VoltageTriple::new(0.0, 0.0, crouch);
                self.enter(Phase::Crouch);
                if self.reached(v, t) {
                    self.enter(Phase::LiftA);
                    Self::world_target(psi, self.radial_body(leg, self.cfg.lift_v), crouch)
                } else {
                    t
                }
            }
            (InstructionSpec::LiftLeg { leg }, _) => Self::world_target(psi, self.radial_body(leg, self.cfg.lift_v), crouch),

            (InstructionSpec::Rotate { degrees }, phase) => {
                let err = self.heading_error(state, degrees);
                let pivot = self.radial_body(0, self.cfg.pivot_v);
                match phase {
                    Phase::Idle if err.abs() <= self.tolerance_deg || self.attempts > self.cfg.max_replans => {
                        self.enter(Phase::Recover);
                        zero
                    }
                    Phase::Idle | Phase::Crouch => {
                        if phase == Phase::Idle {
                            self.attempts += 1;
                        }
                        self.enter(Phase::Crouch);
                        let t = VoltageTriple::new(v.vx, v.vy, crouch);
                        if self.reached(v, t) {
                            self.enter(Phase::LiftA);
                            Self::world_target(psi, pivot, crouch)
                        } else {
                            t
                        }
                    }
                    Phase::LiftA => {
                        let t = Self::world_target(psi, pivot, crouch);
                        if self.reached(v, t) {
                            self.enter(Phase::SwingA);
                        }
                        t
                    }
                    _ if err.abs() <= self.tolerance_deg / 2.0 => {
                        self.enter(Phase::Recover);
                        zero
                    }
                    _ => {
                        let rate = (err.abs() * self.cfg.yaw_gain).min(self.cfg.yaw_rate_max);
                        let u_t = (self.cal.curves.stiction_v + rate / self.cal.curves.rot_rate).copysign(err);
                        Self::world_target(psi, [pivot[0], pivot[1] + u_t], crouch)
                    }
                }
            }

            (InstructionSpec::Forward { distance, reverse }, phase) => {
                let sign = if reverse { -1.0 } else { 1.0 };
                match phase {
                    Phase::Idle => {
                        let remaining = distance - self.forward_progress(state, reverse);
                        if remaining <= 0.0 || self.attempts > self.cfg.max_replans {
                            self.enter(Phase::Recover);
                            zero
                        } else {
                            self.attempts += 1;
                            self.plan = Some(self.plan_strides(remaining + self.cfg.forward_margin, sign));
                            self.enter(Phase::Crouch);
                            VoltageTriple::new(0.0, 0.0, crouch)
                        }
                    }
                    Phase::Crouch => {
                        let t = VoltageTriple::new(0.0, 0.0, crouch);
                        if self.reached(v, t) {
                            self.enter(Phase::LiftA);
                        }
                        t
                    }
                    _ => {
                        let mut plan = self.plan.expect("planned at Idle");
                        // LiftA and LiftB drive with the walking sign, swings against it
                        let along = match phase {
                            Phase::LiftA | Phase::LiftB => sign,
                            _ => -sign,
                        };
                        let t = Self::world_target(origin.psi, [along * plan.amplitude, 0.0], crouch);
                        if self.reached(v, t) && self.gait.steps_in_phase >= self.cfg.hold_steps {
                            plan.done += 1;
                            self.plan = Some(plan);
                            if plan.done >= plan.half_waves {
                                self.enter(Phase::Recover);
                                zero
                            } else {
                                let next = match phase {
                                    Phase::LiftA => Phase::SwingA,
                                    Phase::SwingA => Phase::LiftB,
                                    Phase::LiftB => Phase::SwingB,
                                    _ => Phase::LiftA,
                                };
                                self.enter(next);
                                Self::world_target(origin.psi, [-along * plan.amplitude, 0.0], crouch)
                            }
                        } else {
                            t
                        }
                    }
                }
            }
        };
        self.gait.steps_in_phase += 1;
        self.approach(v, target)
    }
}
