//! One lockstep simulator session. Every inbound message gets exactly one
//! reply, and an observation is only produced after its act was applied.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use trileg_core::actuation::{apply_increment, SafetyEnvelope, VoltageTriple, VOLTAGE_RESOLUTION};
use trileg_core::codec::{decode_ids, dequantize};
use trileg_core::config::Config;
use trileg_core::episode::{EpisodeMeta, EpisodeWriter, TaskCategory};
use trileg_core::eval::{expert_factory, run_eval, EvalSettings};
use trileg_core::primitive::PrimitiveKind;
use trileg_core::render::Renderer;
use trileg_core::robot::{RobotState, Simulator};
use trileg_core::rollout::{Policy, ZeroPolicy};

use crate::frames::{encode_frame, FrameWindow};
use crate::protocol::{ClientMessage, LocalPolicy, ObsState, RecordingStatus, ServerMessage, MAX_REPEAT};

/// Largest trial count accepted from an `eval` message.
pub const MAX_EVAL_TRIALS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] trileg_core::robot::SimError),
    #[error(transparent)]
    Render(#[from] trileg_core::render::RenderError),
    #[error(transparent)]
    Actuation(#[from] trileg_core::actuation::ActuationError),
    #[error(transparent)]
    Episode(#[from] trileg_core::episode::EpisodeError),
    #[error(transparent)]
    Rollout(#[from] trileg_core::rollout::RolloutError),
    #[error("{0}")]
    Rejected(String),
}

struct ActiveRecording {
    writer: EpisodeWriter,
}

pub struct Session {
    id: u64,
    config: Arc<Config>,
    env: SafetyEnvelope,
    renderer: Renderer,
    sim: Simulator,
    window: FrameWindow,
    instruction: String,
    seq: u64,
    recording: Option<ActiveRecording>,
    recordings_started: usize,
    pace: Option<Duration>,
    last_step: Option<Instant>,
    last_clipped: bool,
    last_dv: VoltageTriple,
}

impl Session {
    /// Session `id` draws its default seed as `config.sim.seed + id`.
    pub fn new(id: u64, config: Arc<Config>) -> Result<Self, SessionError> {
        let renderer = Renderer::new(&config.robot);
        let seed = config.sim.seed.wrapping_add(id);
        let sim = Self::fresh_sim(&config, seed, config.session.randomize_pose)?;
        let window = FrameWindow::new(config.session.frame_window, encode_frame(&renderer, sim.state(), &config.session.scene)?);
        Ok(Self {
            id,
            env: config.coil.envelope(),
            pace: config.session.pace_hz.map(|hz| Duration::from_secs_f64(1.0 / hz)),
            config,
            renderer,
            sim,
            window,
            instruction: String::new(),
            seq: 0,
            recording: None,
            recordings_started: 0,
            last_step: None,
            last_clipped: false,
            last_dv: VoltageTriple::ZERO,
        })
    }

    fn fresh_sim(config: &Config, seed: u64, randomize_pose: bool) -> Result<Simulator, SessionError> {
        let mut cfg = config.sim;
        cfg.seed = seed;
        Ok(Simulator::from_reset(config.model(), cfg, randomize_pose)?)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn state(&self) -> &RobotState {
        self.sim.state()
    }

    pub fn seed(&self) -> u64 {
        self.sim.config().seed
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    /// Observation of the current state; advances the sequence number.
    pub fn observe(&mut self) -> ServerMessage {
        let s = self.sim.state();
        let msg = ServerMessage::Obs {
            seq: self.seq,
            t: s.t,
            frames: self.window.encoded(),
            state: ObsState::from(s),
            instruction: self.instruction.clone(),
            clipped: self.last_clipped,
            applied_dv: self.last_dv.to_array(),
        };
        self.seq += 1;
        msg
    }

    /// Parses and handles one inbound line.
    pub fn handle_line(&mut self, line: &str) -> ServerMessage {
        match ClientMessage::parse(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => ServerMessage::error(e),
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> ServerMessage {
        let reply = match msg {
            ClientMessage::Act { dv, repeat } => self.act(VoltageTriple::from_array(dv), repeat),
            ClientMessage::ActTokens { ids, repeat } => self.act_tokens(&ids, repeat),
            ClientMessage::Reset { seed, randomize_pose } => self.reset(seed, randomize_pose),
            ClientMessage::RecordStart { task_category, instruction } => self.record_start(task_category, instruction),
            ClientMessage::RecordStop {} => self.record_stop(),
            ClientMessage::SetInstruction { text } => {
                self.instruction = text.clone();
                Ok(ServerMessage::Instruction { text })
            }
            ClientMessage::Eval { primitive, trials, base_seed, policy } => self.eval(primitive, trials, base_seed, policy),
        };
        reply.unwrap_or_else(|e| {
            log::warn!("session {}: {e}", self.id);
            ServerMessage::error(e)
        })
    }

    fn act(&mut self, dv: VoltageTriple, repeat: Option<u32>) -> Result<ServerMessage, SessionError> {
        if !dv.is_finite() {
            return Err(SessionError::Rejected("dv must be finite".into()));
        }
        let repeat = repeat.unwrap_or(1);
        if !(1..=MAX_REPEAT).contains(&repeat) {
            return Err(SessionError::Rejected(format!("repeat must lie in 1..={MAX_REPEAT}")));
        }
        let realized = self.advance(dv)?;
        self.last_clipped = (realized - dv).max_abs() > VOLTAGE_RESOLUTION / 2.0;
        self.last_dv = realized;
        for _ in 1..repeat {
            self.advance(VoltageTriple::ZERO)?;
        }
        Ok(self.observe())
    }

    fn act_tokens(&mut self, ids: &[u32], repeat: Option<u32>) -> Result<ServerMessage, SessionError> {
        let q = &self.config.codec;
        let sentence = decode_ids(ids, q).map_err(|e| SessionError::Rejected(e.to_string()))?;
        let dv = dequantize(&sentence, q).map_err(|e| SessionError::Rejected(e.to_string()))?;
        self.act(dv, repeat)
    }

    /// One control step: project, step, render, record.
    fn advance(&mut self, dv: VoltageTriple) -> Result<VoltageTriple, SessionError> {
        self.wait_for_tick();
        let (applied, realized) = apply_increment(self.sim.state().v, dv, &self.env)?;
        let next = self.sim.step(applied)?.clone();
        let frame = encode_frame(&self.renderer, &next, &self.config.session.scene)?;
        if let Some(rec) = self.recording.as_mut() {
            rec.writer.append(&next, realized, &frame.png)?;
        }
        self.window.push(frame);
        Ok(realized)
    }

    fn wait_for_tick(&mut self) {
        if let Some(period) = self.pace {
            if let Some(last) = self.last_step {
                let due = last + period;
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            self.last_step = Some(Instant::now());
        }
    }

    fn reset(&mut self, seed: Option<u64>, randomize_pose: Option<bool>) -> Result<ServerMessage, SessionError> {
        if self.recording.is_some() {
            return Err(SessionError::Rejected("stop the recording before reset".into()));
        }
        let seed = seed.unwrap_or_else(|| self.config.sim.seed.wrapping_add(self.id));
        self.sim = Self::fresh_sim(&self.config, seed, randomize_pose.unwrap_or(self.config.session.randomize_pose))?;
        self.window.restart(encode_frame(&self.renderer, self.sim.state(), &self.config.session.scene)?);
        self.last_clipped = false;
        self.last_dv = VoltageTriple::ZERO;
        self.last_step = None;
        Ok(self.observe())
    }

    fn record_start(&mut self, category: Option<TaskCategory>, instruction: Option<String>) -> Result<ServerMessage, SessionError> {
        if let Some(rec) = &self.recording {
            return Ok(ServerMessage::Recording {
                status: RecordingStatus::AlreadyRecording,
                path: rec.writer.dir().to_path_buf(),
                samples: rec.writer.len(),
            });
        }
        if let Some(text) = instruction {
            self.instruction = text;
        }
        let dir = self.next_recording_dir();
        let meta = EpisodeMeta::new(
            category.unwrap_or(TaskCategory::GridMarker),
            self.instruction.clone(),
            self.config.session.scene.clone(),
            self.seed(),
            self.config.hash(),
        );
        let mut writer = EpisodeWriter::create(&dir, meta)?;
        // the current observation is sample 0
        writer.append(self.sim.state(), VoltageTriple::ZERO, &self.window.current().png)?;
        self.recordings_started += 1;
        log::info!("session {}: recording to {}", self.id, dir.display());
        let samples = writer.len();
        self.recording = Some(ActiveRecording { writer });
        Ok(ServerMessage::Recording { status: RecordingStatus::Started, path: dir, samples })
    }

    fn next_recording_dir(&self) -> PathBuf {
        let root: &Path = &self.config.session.record_root;
        let mut n = self.recordings_started;
        loop {
            let dir = root.join(format!("session{:03}-seed{}-{n:03}", self.id, self.seed()));
            if !dir.exists() {
                return dir;
            }
            n += 1;
        }
    }

    fn record_stop(&mut self) -> Result<ServerMessage, SessionError> {
        let rec = self.recording.take().ok_or_else(|| SessionError::Rejected("not recording".into()))?;
        let path = rec.writer.dir().to_path_buf();
        let ep = rec.writer.finalize()?;
        Ok(ServerMessage::Recording { status: RecordingStatus::Stopped, path, samples: ep.samples.len() })
    }

    fn eval(
        &mut self,
        kind: PrimitiveKind,
        trials: Option<usize>,
        base_seed: Option<u64>,
        policy: LocalPolicy,
    ) -> Result<ServerMessage, SessionError> {
        let trials = trials.unwrap_or(trileg_core::eval::DEFAULT_TRIALS);
        if !(1..=MAX_EVAL_TRIALS).contains(&trials) {
            return Err(SessionError::Rejected(format!("trials must lie in 1..={MAX_EVAL_TRIALS}")));
        }
        let settings = EvalSettings { trials, base_seed: base_seed.unwrap_or(self.seed()), ..Default::default() };
        let row = match policy {
            LocalPolicy::Expert => run_eval(kind, &settings, &self.config, expert_factory(&self.config))?,
            LocalPolicy::Zero => run_eval(kind, &settings, &self.config, |_, _| Ok(Box::new(ZeroPolicy) as Box<dyn Policy>))?,
        };
        Ok(ServerMessage::EvalResult {
            motion: row.kind,
            trials: row.trials,
            successes: row.successes,
            success_pct: 100.0 * row.rate,
            violations: row.violations,
        })
    }

    /// Finalizes an open recording, if any. Called on disconnect and shutdown.
    pub fn close(&mut self) -> Option<PathBuf> {
        let rec = self.recording.take()?;
        let path = rec.writer.dir().to_path_buf();
        match rec.writer.finalize() {
            Ok(ep) => {
                log::info!("session {}: flushed {} samples to {}", self.id, ep.samples.len(), path.display());
                Some(path)
            }
            Err(e) => {
                log::error!("session {}: could not flush {}: {e}", self.id, path.display());
                None
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trileg_core::episode::{load_episode, replay};

    fn session(root: &Path) -> Session {
        let mut config = Config::default();
        config.session.record_root = root.to_path_buf();
        Session::new(0, Arc::new(config)).unwrap()
    }

    fn obs_state(msg: &ServerMessage) -> (u64, u64, ObsState, bool, [f64; 3]) {
        match msg {
            ServerMessage::Obs { seq, t, state, clipped, applied_dv, .. } => (*seq, *t, state.clone(), *clipped, *applied_dv),
            other => panic!("expected obs, got {other:?}"),
        }
    }

    #[test]
    fn single_increment_from_rest() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let (seq0, t0, ..) = obs_state(&s.observe());
        let (seq, t, state, clipped, applied) = obs_state(&s.handle(ClientMessage::Act { dv: [0.0, 0.0, -0.1], repeat: None }));
        assert_eq!((seq0, t0, seq, t), (0, 0, 1, 1));
        assert_eq!(state.v, [0.0, 0.0, -0.1]);
        assert!(!clipped);
        assert_eq!(applied, [0.0, 0.0, -0.1]);
    }

    #[test]
    fn oversized_increment_is_clipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let (_, _, state, clipped, applied) = obs_state(&s.handle(ClientMessage::Act { dv: [9.0, 0.0, 0.0], repeat: None }));
        assert!(clipped);
        assert_eq!(applied, [0.5, 0.0, 0.0]);
        assert_eq!(state.v, [0.5, 0.0, 0.0]);
    }

    #[test]
    fn bad_tokens_take_no_step() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        for ids in [vec![0, 7, 7, 99, 1], vec![0, 7, 7, 1], vec![]] {
            let reply = s.handle(ClientMessage::ActTokens { ids, repeat: None });
            assert!(matches!(reply, ServerMessage::Error { .. }), "{reply:?}");
        }
        assert_eq!(s.state().t, 0);
    }

    #[test]
    fn repeat_holds_the_voltage() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let (_, t, state, ..) = obs_state(&s.handle(ClientMessage::Act { dv: [0.0, 0.0, 0.3], repeat: Some(5) }));
        assert_eq!(t, 5);
        assert_eq!(state.v, [0.0, 0.0, 0.3]);
        let reply = s.handle(ClientMessage::Act { dv: [0.0; 3], repeat: Some(0) });
        assert!(matches!(reply, ServerMessage::Error { .. }));
        assert_eq!(s.state().t, 5);
    }

    #[test]
    fn recording_counts_initial_sample_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        s.handle(ClientMessage::Act { dv: [0.0, 0.0, -0.2], repeat: Some(3) });
        let started = s.handle(ClientMessage::RecordStart { task_category: None, instruction: Some("LIFT_LEG 1".into()) });
        let ServerMessage::Recording { status: RecordingStatus::Started, path, samples: 1 } = started else { panic!("{started:?}") };
        let again = s.handle(ClientMessage::RecordStart { task_category: None, instruction: None });
        assert!(matches!(again, ServerMessage::Recording { status: RecordingStatus::AlreadyRecording, samples: 1, .. }));
        assert!(matches!(s.handle(ClientMessage::Reset { seed: None, randomize_pose: None }), ServerMessage::Error { .. }));
        for i in 0..30 {
            let dv = if i % 2 == 0 { [0.1, 0.0, 0.0] } else { [-0.1, 0.0, 0.1] };
            s.handle(ClientMessage::Act { dv, repeat: None });
        }
        let stopped = s.handle(ClientMessage::RecordStop {});
        assert_eq!(stopped, ServerMessage::Recording { status: RecordingStatus::Stopped, path: path.clone(), samples: 31 });
        assert!(matches!(s.handle(ClientMessage::RecordStop {}), ServerMessage::Error { .. }));

        let ep = load_episode(&path).unwrap();
        assert_eq!(ep.meta.instruction, "LIFT_LEG 1");
        let config = Config::default();
        let mut cfg = config.sim;
        cfg.seed = ep.meta.seed;
        assert_eq!(&replay(&ep, &config.model(), &cfg).unwrap(), s.state());
    }

    #[test]
    fn drop_flushes_open_recording() {
        let dir = tempfile::tempdir().unwrap();
        let path = {
            let mut s = session(dir.path());
            let ServerMessage::Recording { path, .. } = s.handle(ClientMessage::RecordStart { task_category: None, instruction: None })
            else {
                panic!()
            };
            s.handle(ClientMessage::Act { dv: [0.1, 0.0, 0.0], repeat: None });
            path
        };
        assert_eq!(load_episode(&path).unwrap().samples.len(), 2);
    }

    #[test]
    fn reset_restarts_window_but_not_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        s.handle(ClientMessage::Act { dv: [0.0, 0.0, 0.5], repeat: Some(4) });
        let reply = s.handle(ClientMessage::Reset { seed: Some(9), randomize_pose: Some(true) });
        let ServerMessage::Obs { seq, t, frames, .. } = reply else { panic!() };
        assert_eq!((seq, t), (1, 0));
        assert!(frames.iter().all(|f| *f == frames[0]));
        assert_eq!(s.seed(), 9);
    }

    #[test]
    fn eval_message_reports_a_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let reply = s.handle(ClientMessage::Eval {
            primitive: PrimitiveKind::Squat,
            trials: Some(3),
            base_seed: Some(1),
            policy: LocalPolicy::Expert,
        });
        let ServerMessage::EvalResult { motion, trials, successes, .. } = reply else { panic!("{reply:?}") };
        assert_eq!((motion, trials, successes), (PrimitiveKind::Squat, 3, 3));
        let reply = s.handle(ClientMessage::Eval {
            primitive: PrimitiveKind::Forward,
            trials: Some(2),
            base_seed: None,
            policy: LocalPolicy::Zero,
        });
        assert!(matches!(reply, ServerMessage::EvalResult { successes: 0, .. }));
    }
}
