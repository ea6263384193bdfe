//! Evaluation against an external policy process. The gateway dials the
//! policy, sends it the usual `obs` messages and expects one `act` or
//! `act_tokens` line back per observation. An act with `repeat = k` is held
//! for `k` steps without further round trips, which lets a slow policy run
//! below the control rate.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use trileg_core::actuation::VoltageTriple;
use trileg_core::codec::{decode_ids, dequantize, QuantizerSpec};
use trileg_core::config::Config;
use trileg_core::expert::InstructionSpec;
use trileg_core::render::{Renderer, SceneSpec};
use trileg_core::robot::RobotState;
use trileg_core::rollout::{Policy, PolicyError};

use crate::frames::{encode_frame, FrameWindow};
use crate::protocol::{ClientMessage, ObsState, ServerMessage, MAX_REPEAT};

pub const DEFAULT_REPLY_TIMEOUT: Duration = Duration::from_secs(30);

pub struct RemotePolicy {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    renderer: Renderer,
    scene: SceneSpec,
    codec: QuantizerSpec,
    frame_window: usize,
    window: Option<FrameWindow>,
    instruction: String,
    seq: u64,
    hold: u32,
}

fn fault(e: impl std::fmt::Display) -> PolicyError {
    PolicyError(e.to_string())
}

impl RemotePolicy {
    /// Opens one connection for one trial.
    pub fn connect(addr: SocketAddr, instruction: &InstructionSpec, config: &Config, timeout: Duration) -> Result<Self, PolicyError> {
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| fault(format!("connect {addr}: {e}")))?;
        stream.set_read_timeout(Some(timeout)).map_err(fault)?;
        stream.set_nodelay(true).map_err(fault)?;
        let writer = stream.try_clone().map_err(fault)?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            renderer: Renderer::new(&config.robot),
            scene: config.session.scene.clone(),
            codec: config.codec,
            frame_window: config.session.frame_window,
            window: None,
            instruction: instruction.to_string(),
            seq: 0,
            hold: 0,
        })
    }

    fn exchange(&mut self, state: &RobotState) -> Result<ClientMessage, PolicyError> {
        let frames = self.window.as_ref().expect("window initialized").encoded();
        let obs = ServerMessage::Obs {
            seq: self.seq,
            t: state.t,
            frames,
            state: ObsState::from(state),
            instruction: self.instruction.clone(),
            clipped: false,
            applied_dv: [0.0; 3],
        };
        self.seq += 1;
        let mut line = obs.to_line();
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(|e| fault(format!("policy disconnected: {e}")))?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(|e| fault(format!("policy read: {e}")))?;
        if n == 0 {
            return Err(fault("policy disconnected"));
        }
        ClientMessage::parse(reply.trim()).map_err(fault)
    }
}

impl Policy for RemotePolicy {
    fn act(&mut self, state: &RobotState) -> Result<VoltageTriple, PolicyError> {
        let frame = encode_frame(&self.renderer, state, &self.scene).map_err(fault)?;
        match self.window.as_mut() {
            Some(w) => w.push(frame),
            None => self.window = Some(FrameWindow::new(self.frame_window, frame)),
        }
        if self.hold > 0 {
            self.hold -= 1;
            return Ok(VoltageTriple::ZERO);
        }
        let (dv, repeat) = match self.exchange(state)? {
            ClientMessage::Act { dv, repeat } => (VoltageTriple::from_array(dv), repeat),
            ClientMessage::ActTokens { ids, repeat } => {
                let s = decode_ids(&ids, &self.codec).map_err(fault)?;
                (dequantize(&s, &self.codec).map_err(fault)?, repeat)
            }
            other => return Err(fault(format!("expected an act, got {other:?}"))),
        };
        let repeat = repeat.unwrap_or(1);
        if !(1..=MAX_REPEAT).contains(&repeat) {
            return Err(fault(format!("repeat {repeat} out of range")));
        }
        self.hold = repeat - 1;
        Ok(dv)
    }
}
