//! Closed-loop rollouts of a policy against the simulator.

use thiserror::Error;

use crate::actuation::{apply_increment, ActuationError, SafetyEnvelope, VoltageTriple};
use crate::episode::{EpisodeError, EpisodeWriter};
use crate::expert::ExpertPolicy;
use crate::primitive::{check_frame, judge_trial, EvalError, PrimitiveSpec, TrialResult};
use crate::render::{RenderError, Renderer, SceneSpec};
use crate::robot::{RobotState, SimError, Simulator};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Actuation(#[from] ActuationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("policy failure: {0}")]
pub struct PolicyError(pub String);

/// Anything that maps the latest state to a voltage increment.
pub trait Policy {
    fn act(&mut self, state: &RobotState) -> Result<VoltageTriple, PolicyError>;
}

impl Policy for ExpertPolicy {
    fn act(&mut self, state: &RobotState) -> Result<VoltageTriple, PolicyError> {
        Ok(self.next_action(state))
    }
}

/// Emits zero increments forever.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _state: &RobotState) -> Result<VoltageTriple, PolicyError> {
        Ok(VoltageTriple::ZERO)
    }
}

/// Frames and sink for recording a rollout as an episode.
pub struct Recording<'a> {
    pub writer: &'a mut EpisodeWriter,
    pub renderer: &'a Renderer,
    pub scene: &'a SceneSpec,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// Frame 0 is the state the rollout started from.
    pub trajectory: Vec<RobotState>,
    /// Commanded voltages `V_{t-1} + dv` before projection.
    pub commanded: Vec<VoltageTriple>,
    /// Increments actually realized after projection.
    pub realized: Vec<VoltageTriple>,
    pub result: TrialResult,
}

/// Steps `sim` under `policy` until `spec` is met for its sustain window, a
/// commanded voltage trips the guard, or `max_steps` elapse.
pub fn rollout(
    policy: &mut dyn Policy,
    sim: &mut Simulator,
    env: &SafetyEnvelope,
    spec: &PrimitiveSpec,
    max_steps: usize,
    mut recording: Option<Recording<'_>>,
) -> Result<Rollout, RolloutError> {
    let s0 = sim.state().clone();
    let mut trajectory = vec![s0.clone()];
    let mut commanded = Vec::new();
    let mut realized = Vec::new();
    if let Some(rec) = recording.as_mut() {
        rec.writer.append(&s0, VoltageTriple::ZERO, &rec.renderer.render(&s0, rec.scene).to_png()?)?;
    }

    let mut run = usize::from(check_frame(spec, &s0, &s0)?.satisfied);
    let limit = max_steps.min(spec.thresholds.t_max);
    for _ in 0..limit {
        let state = sim.state().clone();
        let dv = match policy.act(&state) {
            Ok(dv) => dv,
            Err(e) => {
                log::warn!("{e}");
                return Ok(Rollout { result: TrialResult::policy_fault(trajectory.len() - 1), trajectory, commanded, realized });
            }
        };
        let cmd = state.v + dv;
        commanded.push(cmd);
        if !cmd.is_finite() || cmd.max_abs() > spec.thresholds.guard_v {
            // the guard refuses to actuate; the frame repeats
            trajectory.push(state);
            break;
        }
        let (applied, real) = apply_increment(state.v, dv, env)?;
        let next = sim.step(applied)?.clone();
        if let Some(rec) = recording.as_mut() {
            rec.writer.append(&next, real, &rec.renderer.render(&next, rec.scene).to_png()?)?;
        }
        realized.push(real);
        run = if check_frame(spec, &s0, &next)?.satisfied { run + 1 } else { 0 };
        trajectory.push(next);
        if run >= spec.thresholds.t_s {
            break;
        }
    }
    let result = judge_trial(spec, &trajectory, &commanded)?;
    Ok(Rollout { trajectory, commanded, realized, result })
}
