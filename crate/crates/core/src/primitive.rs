//! Success criteria for the five motion primitives and trial judging.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{VoltageTriple, DEFAULT_V_MAX};
use crate::render::Renderer;
use crate::robot::{RobotCalibration, RobotState, LEG_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid primitive spec: {0}")]
    InvalidSpec(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("expected {expected} voltage samples for {frames} frames, got {got}")]
    Misaligned { frames: usize, expected: usize, got: usize },
    #[error("no trial results")]
    NoResults,
    #[error("unknown primitive `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Squat,
    LiftLeg,
    RotateLeft,
    RotateRight,
    Forward,
    Recovery,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 6] = [
        PrimitiveKind::Squat,
        PrimitiveKind::LiftLeg,
        PrimitiveKind::RotateLeft,
        PrimitiveKind::RotateRight,
        PrimitiveKind::Forward,
        PrimitiveKind::Recovery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::Squat => "squat",
            PrimitiveKind::LiftLeg => "lift_leg",
            PrimitiveKind::RotateLeft => "rotate_left",
            PrimitiveKind::RotateRight => "rotate_right",
            PrimitiveKind::Forward => "forward",
            PrimitiveKind::Recovery => "recovery",
        }
    }

    pub fn needs_leg(self) -> bool {
        matches!(self, PrimitiveKind::LiftLeg | PrimitiveKind::Recovery)
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimitiveKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .or(match norm.as_str() {
                "lift" => Some(PrimitiveKind::LiftLeg),
                "recover" => Some(PrimitiveKind::Recovery),
                _ => None,
            })
            .ok_or_else(|| EvalError::UnknownKind(s.to_string()))
    }
}

/// Thresholds shared by all primitives. Lengths in mm, angles in degrees,
/// durations in control steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub h_min: f64,
    /// Relative silhouette growth accepted as a squat when `squat_area` is on.
    pub a_min: f64,
    pub squat_area: bool,
    pub h_lift: f64,
    pub eps_psi: f64,
    pub d_r: f64,
    pub d_fwd: f64,
    pub d_perp: f64,
    pub h_drop: f64,
    pub d_s: f64,
    pub t_max: usize,
    pub t_s: usize,
    /// Absolute voltage above which a trial is aborted.
    pub guard_v: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            h_min: 2.0,
            a_min: 0.10,
            squat_area: false,
            h_lift: 2.0,
            eps_psi: 5.0,
            d_r: 3.0,
            d_fwd: 10.0,
            d_perp: 5.0,
            h_drop: 0.5,
            d_s: 3.0,
            t_max: 300,
            t_s: 10,
            guard_v: DEFAULT_V_MAX,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), EvalError> {
        let lengths = [
            ("h_min", self.h_min),
            ("a_min", self.a_min),
            ("h_lift", self.h_lift),
            ("eps_psi", self.eps_psi),
            ("d_r", self.d_r),
            ("d_fwd", self.d_fwd),
            ("d_perp", self.d_perp),
            ("h_drop", self.h_drop),
            ("d_s", self.d_s),
            ("guard_v", self.guard_v),
        ];
        if let Some((name, _)) = lengths.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(EvalError::InvalidSpec(format!("{name} must be positive")));
        }
        if self.eps_psi >= 90.0 {
            return Err(EvalError::InvalidSpec("eps_psi must be below 90 degrees".into()));
        }
        if self.t_s == 0 || self.t_s > self.t_max {
            return Err(EvalError::InvalidSpec("need 0 < t_s <= t_max".into()));
        }
        Ok(())
    }
}

/// One primitive's success criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub thresholds: Thresholds,
    /// Signed heading change target, degrees (positive = left).
    pub psi_star: f64,
    pub target_leg: Option<usize>,
    /// Commanded world direction for Forward, radians.
    pub axis: Option<f64>,
    pub contact_eps: f64,
    renderer: Renderer,
}

impl PrimitiveSpec {
    pub fn new(kind: PrimitiveKind, thresholds: Thresholds, calibration: &RobotCalibration) -> Self {
        Self {
            kind,
            thresholds,
            psi_star: 0.0,
            target_leg: None,
            axis: None,
            contact_eps: calibration.contact_eps,
            renderer: Renderer::new(calibration),
        }
    }

    pub fn with_psi_star(mut self, deg: f64) -> Self {
        self.psi_star = deg;
        self
    }

    pub fn with_leg(mut self, leg: usize) -> Self {
        self.target_leg = Some(leg);
        self
    }

    pub fn with_axis(mut self, radians: f64) -> Self {
        self.axis = Some(radians);
        self
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.thresholds.validate()?;
        let bad = |m: &str| Err(EvalError::InvalidSpec(m.to_string()));
        match (self.kind.needs_leg(), self.target_leg) {
            (true, None) => return bad("target_leg required"),
            (_, Some(l)) if l >= LEG_COUNT => return bad("target_leg out of range"),
            (false, Some(_)) => return bad("target_leg only applies to lift_leg and recovery"),
            _ => {}
        }
        match self.kind {
            PrimitiveKind::RotateLeft if self.psi_star < 0.0 => return bad("rotate_left needs psi_star >= 0"),
            PrimitiveKind::RotateRight if self.psi_star > 0.0 => return bad("rotate_right needs psi_star <= 0"),
            PrimitiveKind::Forward if !self.axis.is_some_and(f64::is_finite) => return bad("forward needs an axis"),
            _ => {}
        }
        if !self.psi_star.is_finite() {
            return bad("psi_star must be finite");
        }
        Ok(())
    }
}

/// Wraps an angle in degrees to (−180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w <= -180.0 {
        w + 360.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// Body height change, mm.
    pub dz: f64,
    /// Wrapped heading change, degrees.
    pub dpsi: f64,
    /// Centroid drift magnitude, mm.
    pub drift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub along: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lateral: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCheck {
    pub satisfied: bool,
    pub metrics: FrameMetrics,
}

pub fn check_frame(spec: &PrimitiveSpec, state0: &RobotState, state_t: &RobotState) -> Result<FrameCheck, EvalError> {
    spec.validate()?;
    Ok(check_validated(spec, state0, state_t))
}

fn check_validated(spec: &PrimitiveSpec, s0: &RobotState, st: &RobotState) -> FrameCheck {
    let th = &spec.thresholds;
    let d = [st.p[0] - s0.p[0], st.p[1] - s0.p[1]];
    let mut m =
        FrameMetrics { dz: st.z - s0.z, dpsi: wrap_deg((st.psi - s0.psi).to_degrees()), drift: d[0].hypot(d[1]), ..Default::default() };
    let heading_held = m.dpsi.abs() <= th.eps_psi;
    let satisfied = match spec.kind {
        PrimitiveKind::Squat => {
            let by_height = m.dz <= -th.h_min;
            let by_area = th.squat_area && {
                let ratio = spec.renderer.silhouette_area(st) as f64 / spec.renderer.silhouette_area(s0).max(1) as f64;
                m.area_ratio = Some(ratio);
                ratio - 1.0 >= th.a_min
            };
            by_height || by_area
        }
        PrimitiveKind::LiftLeg => {
            let leg = spec.target_leg.expect("validated");
            m.h_target = Some(st.h[leg]);
            st.h[leg] >= th.h_lift && (0..LEG_COUNT).filter(|&l| l != leg).all(|l| st.h[l] <= spec.contact_eps)
        }
        PrimitiveKind::RotateLeft | PrimitiveKind::RotateRight => {
            let err = wrap_deg((st.psi - s0.psi).to_degrees() - spec.psi_star);
            err.abs() <= th.eps_psi && m.drift < th.d_r
        }
        PrimitiveKind::Forward => {
            let (s, c) = spec.axis.expect("validated").sin_cos();
            let along = d[0] * c + d[1] * s;
            let lateral = -d[0] * s + d[1] * c;
            m.along = Some(along);
            m.lateral = Some(lateral);
            along >= th.d_fwd && lateral.abs() <= th.d_perp && heading_held
        }
        PrimitiveKind::Recovery => {
            let leg = spec.target_leg.expect("validated");
            m.h_target = Some(st.h[leg]);
            st.h[leg] <= th.h_drop && m.drift < th.d_s && heading_held
        }
    };
    FrameCheck { satisfied, metrics: m }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    None,
    SafetyGuard,
    Timeout,
    /// The controlling policy failed or disconnected mid-trial.
    PolicyFault,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::None => "none",
            Violation::SafetyGuard => "safety_guard",
            Violation::Timeout => "timeout",
            Violation::PolicyFault => "policy_fault",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub steps_used: usize,
    pub violation: Violation,
    pub final_metrics: FrameMetrics,
}

impl TrialResult {
    pub fn policy_fault(steps_used: usize) -> Self {
        Self { success: false, steps_used, violation: Violation::PolicyFault, final_metrics: FrameMetrics::default() }
    }
}

/// Judges a trajectory whose frame 0 is the initial state. `voltages[i]` is
/// the command issued between frames `i` and `i + 1`.
pub fn judge_trial(spec: &PrimitiveSpec, trajectory: &[RobotState], voltages: &[VoltageTriple]) -> Result<TrialResult, EvalError> {
    spec.validate()?;
    let (s0, _) = trajectory.split_first().ok_or(EvalError::EmptyTrajectory)?;
    let expected = trajectory.len() - 1;
    if voltages.len() != expected {
        return Err(EvalError::Misaligned { frames: trajectory.len(), expected, got: voltages.len() });
    }
    let th = &spec.thresholds;
    if let Some(i) = voltages.iter().position(|v| !v.is_finite() || v.max_abs() > th.guard_v) {
        let metrics = check_validated(spec, s0, &trajectory[i + 1]).metrics;
        return Ok(TrialResult { success: false, steps_used: i + 1, violation: Violation::SafetyGuard, final_metrics: metrics });
    }

    let horizon = trajectory.len().min(th.t_max + 1);
    let mut run = 0;
    let mut last = FrameMetrics::default();
    for (i, st) in trajectory[..horizon].iter().enumerate() {
        let check = check_validated(spec, s0, st);
        run = if check.satisfied { run + 1 } else { 0 };
        last = check.metrics;
        if run >= th.t_s {
            return Ok(TrialResult { success: true, steps_used: i, violation: Violation::None, final_metrics: last });
        }
    }
    Ok(TrialResult { success: false, steps_used: horizon - 1, violation: Violation::Timeout, final_metrics: last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub total: usize,
    pub successes: usize,
    pub rate: f64,
    pub violations: BTreeMap<Violation, usize>,
}

pub fn success_rate(results: &[TrialResult]) -> Result<RateSummary, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let successes = results.iter().filter(|r| r.success).count();
    let mut violations = BTreeMap::new();
    for r in results.iter().filter(|r| r.violation != Violation::None) {
        *violations.entry(r.violation).or_default() += 1;
    }
    Ok(RateSummary { total: results.len(), successes, rate: successes as f64 / results.len() as f64, violations })
}

/// Unweighted mean of per-primitive success rates.
pub fn macro_average(rates: &[f64]) -> Result<f64, EvalError> {
    if rates.is_empty() {
        return Err(EvalError::NoResults);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: PrimitiveKind) -> PrimitiveSpec {
        PrimitiveSpec::new(kind, Thresholds::default(), &RobotCalibration::default())
    }

    fn rest() -> RobotState {
        RobotState::rest(&RobotCalibration::default())
    }

    #[test]
    fn squat_three_mm_drop() {
        let mut st = rest();
        st.z -= 3.0;
        assert!(check_frame(&spec(PrimitiveKind::Squat), &rest(), &st).unwrap().satisfied);
        st.z = rest().z - 1.0;
        assert!(!check_frame(&spec(PrimitiveKind::Squat), &rest(), &st).unwrap().satisfied);
    }

    #[test]
    fn squat_area_alternative() {
        let mut sp = spec(PrimitiveKind::Squat);
        sp.thresholds.squat_area = true;
        sp.thresholds.h_min = 4.0;
        let mut st = rest();
        st.z -= 3.0;
        // 0.6 mm spread on a 6 mm body is about 21 % more area
        let c = check_frame(&sp, &rest(), &st).unwrap();
        assert!(c.satisfied);
        assert!(c.metrics.area_ratio.unwrap() > 1.1);
    }

    #[test]
    fn zero_rotation_target_met_by_noop() {
        let sp = spec(PrimitiveKind::RotateLeft).with_psi_star(0.0);
        assert!(check_frame(&sp, &rest(), &rest()).unwrap().satisfied);
    }

    #[test]
    fn forward_lateral_bound() {
        let sp = spec(PrimitiveKind::Forward).with_axis(0.0);
        let mut st = rest();
        st.p = [st.p[0] + 11.0, st.p[1] + 6.0];
        let c = check_frame(&sp, &rest(), &st).unwrap();
        assert!(!c.satisfied);
        assert_eq!(c.metrics.along, Some(11.0));
        st.p[1] = rest().p[1] + 4.0;
        assert!(check_frame(&sp, &rest(), &st).unwrap().satisfied);
    }

    #[test]
    fn lift_leg_requires_others_grounded() {
        let sp = spec(PrimitiveKind::LiftLeg).with_leg(1);
        let mut st = rest();
        st.h = [0.0, 2.5, 0.0];
        assert!(check_frame(&sp, &rest(), &st).unwrap().satisfied);
        st.h[2] = 0.5;
        assert!(!check_frame(&sp, &rest(), &st).unwrap().satisfied);
    }

    #[test]
    fn mismatched_leg_rejected() {
        assert!(check_frame(&spec(PrimitiveKind::LiftLeg), &rest(), &rest()).is_err());
        assert!(check_frame(&spec(PrimitiveKind::LiftLeg).with_leg(3), &rest(), &rest()).is_err());
        assert!(check_frame(&spec(PrimitiveKind::Squat).with_leg(0), &rest(), &rest()).is_err());
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_deg(180.0), 180.0);
        assert_eq!(wrap_deg(-180.0), 180.0);
        assert_eq!(wrap_deg(190.0), -170.0);
        assert_eq!(wrap_deg(-370.0), -10.0);
    }

    fn squat_traj(holds: impl Fn(usize) -> bool, n: usize) -> Vec<RobotState> {
        (0..n)
            .map(|i| {
                let mut s = rest();
                if holds(i) {
                    s.z -= 3.0;
                }
                s
            })
            .collect()
    }

    #[test]
    fn judge_first_sustained_window() {
        let traj = squat_traj(|i| (10..=30).contains(&i), 40);
        let volts = vec![VoltageTriple::ZERO; 39];
        let r = judge_trial(&spec(PrimitiveKind::Squat), &traj, &volts).unwrap();
        assert!(r.success);
        assert_eq!(r.steps_used, 19);
        assert_eq!(r.violation, Violation::None);
    }

    #[test]
    fn judge_guard_and_timeout() {
        let traj = squat_traj(|_| true, 30);
        let mut volts = vec![VoltageTriple::ZERO; 29];
        volts[4] = VoltageTriple::new(2.6, 0.0, 0.0);
        let r = judge_trial(&spec(PrimitiveKind::Squat), &traj, &volts).unwrap();
        assert!(!r.success);
        assert_eq!(r.violation, Violation::SafetyGuard);

        let traj = squat_traj(|_| false, 30);
        let r = judge_trial(&spec(PrimitiveKind::Squat), &traj, &vec![VoltageTriple::ZERO; 29]).unwrap();
        assert_eq!(r.violation, Violation::Timeout);
        assert!(judge_trial(&spec(PrimitiveKind::Squat), &[], &[]).is_err());
        assert!(judge_trial(&spec(PrimitiveKind::Squat), &traj, &[]).is_err());
    }

    #[test]
    fn rates() {
        let ok = TrialResult { success: true, steps_used: 1, violation: Violation::None, final_metrics: Default::default() };
        let bad = TrialResult { success: false, violation: Violation::Timeout, ..ok.clone() };
        let mut v = vec![ok.clone(); 7];
        v.extend(vec![bad.clone(); 3]);
        let s = success_rate(&v).unwrap();
        assert_eq!(s.rate, 0.7);
        assert_eq!(s.violations[&Violation::Timeout], 3);
        assert_eq!(success_rate(&[bad.clone(), bad]).unwrap().rate, 0.0);
        assert_eq!(macro_average(&[1.0, 0.5, 0.0]).unwrap(), 0.5);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("lift-leg".parse::<PrimitiveKind>().unwrap(), PrimitiveKind::LiftLeg);
        assert_eq!("Forward".parse::<PrimitiveKind>().unwrap(), PrimitiveKind::Forward);
        assert!("fly".parse::<PrimitiveKind>().is_err());
    }

    proptest! {
        #[test]
        fn rotation_mirror_symmetry(theta in 0.0f64..90.0, headings in prop::collection::vec(-4.0f64..4.0, 1..60)) {
            let cal = RobotCalibration::default();
            let left = PrimitiveSpec::new(PrimitiveKind::RotateLeft, Thresholds { t_s: 3, ..Default::default() }, &cal).with_psi_star(theta);
            let right = PrimitiveSpec::new(PrimitiveKind::RotateRight, Thresholds { t_s: 3, ..Default::default() }, &cal).with_psi_star(-theta);
            let traj: Vec<_> = headings.iter().map(|&psi| RobotState { psi, ..rest() }).collect();
            let mirrored: Vec<_> = headings.iter().map(|&psi| RobotState { psi: -psi, ..rest() }).collect();
            let volts = vec![VoltageTriple::ZERO; traj.len() - 1];
            let a = judge_trial(&left, &traj, &volts).unwrap();
            let b = judge_trial(&right, &mirrored, &volts).unwrap();
            prop_assert_eq!(a.success, b.success);
            prop_assert_eq!(a.steps_used, b.steps_used);
        }

        #[test]
        fn guard_is_monotone(extra in 0usize..50, at in 0usize..20) {
            let traj = squat_traj(|_| true, 21 + extra);
            let mut volts = vec![VoltageTriple::ZERO; 20 + extra];
            volts[at] = VoltageTriple::new(0.0, -2.51, 0.0);
            let r = judge_trial(&spec(PrimitiveKind::Squat), &traj, &volts).unwrap();
            prop_assert_eq!(r.violation, Violation::SafetyGuard);
            prop_assert!(!r.success);
        }
    }
}
