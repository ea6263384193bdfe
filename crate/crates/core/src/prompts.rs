//! Prompt presets for external policy hosts. The gateway only forwards
//! them; nothing here is parsed.
//!
//! Templates use `{instruction}` and `{frames}` placeholders. `{frames}` expands
//! to one `<ImK>` tag per frame, current frame first.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPreset {
    /// Bare task statement.
    Minimal,
    /// Task plus the action format and limits.
    Structured,
    /// Structured, plus a reminder of the crouch-lift-alternate decomposition.
    Stepwise,
}

impl PromptPreset {
    pub const ALL: [PromptPreset; 3] = [PromptPreset::Minimal, PromptPreset::Structured, PromptPreset::Stepwise];

    pub fn template(self) -> &'static str {
        match self {
            PromptPreset::Minimal => "Frames: {frames}. Task: {instruction}. Output the next coil voltage change.",
            PromptPreset::Structured => concat!(
                "Frames (newest first): {frames}.\n",
                "Task: {instruction}.\n",
                "Reply with one action sentence <SOS> dVx dVy dVz <EOS>, each increment within ±0.5 V ",
                "in 0.1 V steps. Coil voltages are capped at 2.5 V."
            ),
            PromptPreset::Stepwise => concat!(
                "Frames (newest first): {frames}.\n",
                "Task: {instruction}.\n",
                "Walking and turning need a crouch first, then a raised leg, then alternating horizontal drive. ",
                "Horizontal drive under 1.2 V does not move the robot.\n",
                "Reply with one action sentence <SOS> dVx dVy dVz <EOS>, each increment within ±0.5 V ",
                "in 0.1 V steps. Coil voltages are capped at 2.5 V."
            ),
        }
    }

    pub fn render(self, instruction: &str, n_frames: usize) -> String {
        let frames = (0..n_frames).map(|k| format!("<Im{k}>")).collect::<Vec<_>>().join(", ");
        self.template().replace("{frames}", &frames).replace("{instruction}", instruction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_expand() {
        for p in PromptPreset::ALL {
            let text = p.render("ROTATE_LEFT 30", 3);
            assert!(text.contains("<Im0>, <Im1>, <Im2>"), "{text}");
            assert!(text.contains("ROTATE_LEFT 30"));
            assert!(!text.contains('{'));
        }
    }
}
