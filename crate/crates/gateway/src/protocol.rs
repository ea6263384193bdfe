//! Wire messages. Every message is one JSON object on its own line (or one
//! WebSocket text frame), tagged by a `type` field.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use trileg_core::episode::TaskCategory;
use trileg_core::primitive::{PrimitiveKind, Violation};
use trileg_core::robot::RobotState;

/// Upper bound on `repeat` in one act.
pub const MAX_REPEAT: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("message is not valid JSON: {0}")]
    Json(String),
    #[error("message must be a JSON object with a string `type`")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("bad `{kind}` message: {detail}")]
    BadFields { kind: String, detail: String },
}

/// Which in-process policy an `eval` request runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPolicy {
    #[default]
    Expert,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Voltage increment. With `repeat = k > 1` the increment is applied once
    /// and the result is held for `k - 1` further steps before the reply.
    Act {
        dv: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        repeat: Option<u32>,
    },
    /// One tokenized action sentence, `<SOS> x y z <EOS>`.
    ActTokens {
        ids: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        repeat: Option<u32>,
    },
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        randomize_pose: Option<bool>,
    },
    RecordStart {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_category: Option<TaskCategory>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction: Option<String>,
    },
    RecordStop {},
    SetInstruction {
        text: String,
    },
    Eval {
        primitive: PrimitiveKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trials: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_seed: Option<u64>,
        #[serde(default)]
        policy: LocalPolicy,
    },
}

const CLIENT_TYPES: [&str; 7] = ["act", "act_tokens", "reset", "record_start", "record_stop", "set_instruction", "eval"];

impl ClientMessage {
    /// Parses one inbound line. Unknown fields are ignored.
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
        let kind = value.get("type").and_then(Value::as_str).ok_or(ProtocolError::MissingType)?.to_string();
        if !CLIENT_TYPES.contains(&kind.as_str()) {
            return Err(ProtocolError::UnknownType(kind));
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::BadFields { kind, detail: e.to_string() })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("client message serializes")
    }
}

/// State readout attached to each observation. `psi` is in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsState {
    pub v: [f64; 3],
    pub p: [f64; 2],
    pub psi: f64,
    pub z: f64,
    pub h: [f64; 3],
}

impl From<&RobotState> for ObsState {
    fn from(s: &RobotState) -> Self {
        Self { v: s.v.to_array(), p: s.p, psi: s.psi, z: s.z, h: s.h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingStatus {
    Started,
    Stopped,
    /// `record_start` while already recording; nothing changed.
    AlreadyRecording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Obs {
        /// Strictly increasing per connection, across resets.
        seq: u64,
        /// Simulation step of the newest frame.
        t: u64,
        /// L+1 base64 PNGs, oldest first; the last one is the current frame.
        frames: Vec<String>,
        state: ObsState,
        instruction: String,
        /// The projection changed the requested increment.
        clipped: bool,
        /// Increment actually applied by the last act.
        applied_dv: [f64; 3],
    },
    Error {
        message: String,
    },
    Recording {
        status: RecordingStatus,
        path: PathBuf,
        samples: usize,
    },
    Instruction {
        text: String,
    },
    EvalResult {
        motion: PrimitiveKind,
        trials: usize,
        successes: usize,
        success_pct: f64,
        violations: BTreeMap<Violation, usize>,
    },
}

impl ServerMessage {
    pub fn error(e: impl std::fmt::Display) -> Self {
        ServerMessage::Error { message: e.to_string() }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_ignored() {
        let m = ClientMessage::parse(r#"{"type":"act","dv":[0,0,-0.1],"client":"ui","n":3}"#).unwrap();
        assert_eq!(m, ClientMessage::Act { dv: [0.0, 0.0, -0.1], repeat: None });
        let m = ClientMessage::parse(r#"{"type":"record_stop","why":"done"}"#).unwrap();
        assert_eq!(m, ClientMessage::RecordStop {});
    }

    #[test]
    fn rejections_are_specific() {
        assert!(matches!(ClientMessage::parse("{nope"), Err(ProtocolError::Json(_))));
        assert_eq!(ClientMessage::parse(r#"{"dv":[0,0,0]}"#), Err(ProtocolError::MissingType));
        assert_eq!(ClientMessage::parse(r#"{"type":"fly"}"#), Err(ProtocolError::UnknownType("fly".into())));
        assert!(matches!(ClientMessage::parse(r#"{"type":"act","dv":[1,2]}"#), Err(ProtocolError::BadFields { .. })));
    }

    #[test]
    fn control_defaults() {
        let m = ClientMessage::parse(r#"{"type":"eval","primitive":"forward"}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Eval { primitive: PrimitiveKind::Forward, trials: None, base_seed: None, policy: LocalPolicy::Expert }
        );
        let m = ClientMessage::parse(r#"{"type":"record_start","task_category":"yellow_lesion"}"#).unwrap();
        assert_eq!(m, ClientMessage::RecordStart { task_category: Some(TaskCategory::YellowLesion), instruction: None });
    }

    #[test]
    fn messages_roundtrip() {
        let msgs = [
            ClientMessage::ActTokens { ids: vec![0, 7, 7, 6, 1], repeat: Some(5) },
            ClientMessage::Reset { seed: Some(3), randomize_pose: None },
            ClientMessage::SetInstruction { text: "SQUAT".into() },
        ];
        for m in msgs {
            assert_eq!(ClientMessage::parse(&m.to_line()).unwrap(), m);
        }
        let s = ServerMessage::Recording { status: RecordingStatus::Started, path: "episodes/a".into(), samples: 1 };
        let line = s.to_line();
        assert!(!line.contains('\n'));
        assert_eq!(ServerMessage::parse(&line).unwrap(), s);
    }
}
