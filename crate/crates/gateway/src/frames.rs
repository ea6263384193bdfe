//! Rendered-frame history sent with each observation.

use std::collections::VecDeque;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use trileg_core::render::{RenderError, Renderer, SceneSpec};
use trileg_core::robot::RobotState;

/// One rendered frame, kept both raw (for recording) and encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFrame {
    pub png: Vec<u8>,
    pub b64: String,
}

pub fn encode_frame(renderer: &Renderer, state: &RobotState, scene: &SceneSpec) -> Result<EncodedFrame, RenderError> {
    let png = renderer.render(state, scene).to_png()?;
    let b64 = STANDARD.encode(&png);
    Ok(EncodedFrame { png, b64 })
}

/// The last `past + 1` frames, left-padded with the earliest one.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    past: usize,
    frames: VecDeque<EncodedFrame>,
}

impl FrameWindow {
    pub fn new(past: usize, first: EncodedFrame) -> Self {
        let mut w = Self { past, frames: VecDeque::with_capacity(past + 1) };
        w.restart(first);
        w
    }

    /// Drops the history; `first` becomes the only real frame.
    pub fn restart(&mut self, first: EncodedFrame) {
        self.frames.clear();
        self.frames.push_back(first);
    }

    pub fn push(&mut self, frame: EncodedFrame) {
        if self.frames.len() == self.past + 1 {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn current(&self) -> &EncodedFrame {
        self.frames.back().expect("window is never empty")
    }

    /// Base64 frames oldest first, always `past + 1` of them.
    pub fn encoded(&self) -> Vec<String> {
        let pad = self.past + 1 - self.frames.len();
        let first = &self.frames.front().expect("window is never empty").b64;
        std::iter::repeat_n(first, pad).chain(self.frames.iter().map(|f| &f.b64)).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(tag: &str) -> EncodedFrame {
        EncodedFrame { png: tag.as_bytes().to_vec(), b64: tag.to_string() }
    }

    #[test]
    fn left_pads_then_slides() {
        let mut w = FrameWindow::new(3, f("a"));
        assert_eq!(w.encoded(), ["a", "a", "a", "a"]);
        w.push(f("b"));
        assert_eq!(w.encoded(), ["a", "a", "a", "b"]);
        for tag in ["c", "d", "e"] {
            w.push(f(tag));
        }
        assert_eq!(w.encoded(), ["b", "c", "d", "e"]);
        assert_eq!(w.current().b64, "e");
        w.restart(f("z"));
        assert_eq!(w.encoded(), ["z", "z", "z", "z"]);
    }

    #[test]
    fn zero_history_is_current_only() {
        let mut w = FrameWindow::new(0, f("a"));
        w.push(f("b"));
        assert_eq!(w.encoded(), ["b"]);
    }
}
