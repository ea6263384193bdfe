//! Seeded multi-trial evaluation of a policy on one primitive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actuation::randomize_coil_matrix;
use crate::config::Config;
use crate::expert::{ExpertPolicy, InstructionSpec};
use crate::primitive::{success_rate, PrimitiveKind, TrialResult, Violation};
use crate::robot::{RobotState, Simulator, WORKSPACE_MM};
use crate::rollout::{rollout, Policy, PolicyError, RolloutError};

pub const DEFAULT_TRIALS: usize = 10;
/// Heading change commanded in rotation trials, degrees.
pub const ROTATE_TRIAL_DEG: f64 = 30.0;
/// Distance commanded in forward trials, mm.
pub const FORWARD_TRIAL_MM: f64 = 10.0;
const PRELUDE_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub trials: usize,
    pub base_seed: u64,
    pub randomize_pose: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { trials: DEFAULT_TRIALS, base_seed: 0, randomize_pose: true }
    }
}

/// Instruction issued in trial `trial` of `kind` from `state0`.
pub fn trial_instruction(kind: PrimitiveKind, trial: usize, state0: &RobotState) -> InstructionSpec {
    let leg = trial % 3;
    match kind {
        PrimitiveKind::Squat => InstructionSpec::Squat,
        PrimitiveKind::LiftLeg => InstructionSpec::LiftLeg { leg },
        PrimitiveKind::RotateLeft => InstructionSpec::Rotate { degrees: ROTATE_TRIAL_DEG },
        PrimitiveKind::RotateRight => InstructionSpec::Rotate { degrees: -ROTATE_TRIAL_DEG },
        PrimitiveKind::Forward => {
            // walk toward the middle of the workspace
            let c = WORKSPACE_MM / 2.0;
            let toward = (c - state0.p[0]) * state0.psi.cos() + (c - state0.p[1]) * state0.psi.sin();
            InstructionSpec::Forward { distance: FORWARD_TRIAL_MM, reverse: toward < 0.0 }
        }
        PrimitiveKind::Recovery => InstructionSpec::Recover { leg: Some(leg) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub instruction: String,
    pub result: TrialResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub kind: PrimitiveKind,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub violations: BTreeMap<Violation, usize>,
    pub outcomes: Vec<TrialOutcome>,
}

impl EvalRow {
    pub const HEADER: &'static str = "motion,trials,successes,success_pct";

    pub fn table_row(&self) -> String {
        format!("{},{},{},{:.1}", self.kind, self.trials, self.successes, 100.0 * self.rate)
    }
}

/// Builds the simulator for one trial, including the recovery prelude.
pub fn trial_simulator(kind: PrimitiveKind, trial: usize, settings: &EvalSettings, config: &Config) -> Result<Simulator, RolloutError> {
    let seed = settings.base_seed.wrapping_add(trial as u64);
    let mut model = config.model();
    if config.coil.k_randomization > 0.0 {
        model.coil = randomize_coil_matrix(&model.coil, config.coil.k_randomization, seed)?;
    }
    let mut sim_cfg = config.sim;
    sim_cfg.seed = seed;
    let mut sim = Simulator::from_reset(model, sim_cfg, settings.randomize_pose)?;
    if kind == PrimitiveKind::Recovery {
        // start the recovery trial with the target leg raised
        let leg = trial % 3;
        let env = config.coil.envelope();
        let mut lifter =
            ExpertPolicy::new(InstructionSpec::LiftLeg { leg }, config.expert.clone(), env, config.robot.clone(), &config.primitives);
        for _ in 0..PRELUDE_STEPS {
            if sim.state().h[leg] >= config.primitives.h_lift + 1.0 {
                break;
            }
            let dv = lifter.next_action(sim.state());
            let (v, _) = crate::actuation::apply_increment(sim.state().v, dv, &env)?;
            sim.step(v)?;
        }
    }
    Ok(sim)
}

/// Runs `settings.trials` seeded trials. `make_policy` builds a fresh policy
/// per trial from its instruction and initial state; a construction error
/// counts as a policy fault.
pub fn run_eval<F>(kind: PrimitiveKind, settings: &EvalSettings, config: &Config, mut make_policy: F) -> Result<EvalRow, RolloutError>
where
    F: FnMut(&InstructionSpec, &RobotState) -> Result<Box<dyn Policy>, PolicyError>,
{
    let env = config.coil.envelope();
    let mut outcomes = Vec::with_capacity(settings.trials);
    for trial in 0..settings.trials {
        let mut sim = trial_simulator(kind, trial, settings, config)?;
        let state0 = sim.state().clone();
        let instruction = trial_instruction(kind, trial, &state0);
        let spec = instruction.primitive_spec(&state0, &config.primitives, &config.robot);
        let result = match make_policy(&instruction, &state0) {
            Ok(mut policy) => rollout(policy.as_mut(), &mut sim, &env, &spec, config.primitives.t_max, None)?.result,
            Err(e) => {
                log::warn!("trial {trial}: {e}");
                TrialResult::policy_fault(0)
            }
        };
        outcomes.push(TrialOutcome { trial, seed: sim.config().seed, instruction: instruction.to_string(), result });
    }
    let results: Vec<_> = outcomes.iter().map(|o| o.result.clone()).collect();
    let summary = success_rate(&results)?;
    Ok(EvalRow { kind, trials: summary.total, successes: summary.successes, rate: summary.rate, violations: summary.violations, outcomes })
}

/// Factory for the scripted expert.
pub fn expert_factory(config: &Config) -> impl FnMut(&InstructionSpec, &RobotState) -> Result<Box<dyn Policy>, PolicyError> + '_ {
    move |instr, _| {
        Ok(Box::new(ExpertPolicy::new(*instr, config.expert.clone(), config.coil.envelope(), config.robot.clone(), &config.primitives)))
    }
}
