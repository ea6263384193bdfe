//! Alternating-drive detection for locomotion.
//!
//! A half-wave is a run of samples on one body axis whose magnitude exceeds
//! the stiction threshold with a constant sign. A bout is a sequence of
//! half-waves separated by at most `gap` sub-threshold steps. Half-waves only
//! move the robot once the bout has alternated: the opening half-wave is
//! credited when the first opposite-sign half-wave starts, and every later
//! half-wave is credited when it ends. Each credit is worth half a gait
//! cycle, evaluated at the bout's direction (the sign of the opening
//! half-wave) times the half-wave's peak magnitude.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisStride {
    /// Direction of the current bout, 0 when no bout is active.
    pub bout_sign: i8,
    pub wave_sign: i8,
    pub wave_peak: f64,
    pub in_wave: bool,
    pub waves: u32,
    /// Peak of the opening half-wave while it waits for an alternation.
    pub pending_peak: Option<f64>,
    pub idle_steps: u32,
}

impl AxisStride {
    /// Feeds one drive sample and returns the signed amplitudes credited on
    /// this step.
    pub fn update(&mut self, u: f64, threshold: f64, gap: u32) -> Vec<f64> {
        let mut credits = Vec::new();
        if u.abs() > threshold {
            let sign: i8 = if u > 0.0 { 1 } else { -1 };
            let magnitude = u.abs();
            if self.bout_sign == 0 {
                self.start_bout(sign, magnitude);
            } else if sign == self.wave_sign {
                if self.in_wave {
                    self.wave_peak = self.wave_peak.max(magnitude);
                } else if let Some(peak) = self.pending_peak.take() {
                    // re-entry before alternating continues the opening half-wave
                    self.wave_peak = peak.max(magnitude);
                } else {
                    // same-sign re-entry after an alternation: not a gait
                    self.start_bout(sign, magnitude);
                }
            } else {
                if self.in_wave {
                    self.end_wave(&mut credits);
                }
                if let Some(peak) = self.pending_peak.take() {
                    credits.push(f64::from(self.bout_sign) * peak);
                }
                self.waves += 1;
                self.wave_sign = sign;
                self.wave_peak = magnitude;
            }
            self.in_wave = true;
            self.idle_steps = 0;
        } else {
            if self.in_wave {
                self.end_wave(&mut credits);
                self.in_wave = false;
            }
            if self.bout_sign != 0 {
                self.idle_steps += 1;
                if self.idle_steps > gap {
                    *self = Self::default();
                }
            }
        }
        credits
    }

    fn start_bout(&mut self, sign: i8, magnitude: f64) {
        *self = Self { bout_sign: sign, wave_sign: sign, wave_peak: magnitude, in_wave: true, waves: 1, pending_peak: None, idle_steps: 0 };
    }

    fn end_wave(&mut self, credits: &mut Vec<f64>) {
        if self.waves >= 2 {
            credits.push(f64::from(self.bout_sign) * self.wave_peak);
        } else {
            self.pending_peak = Some(self.wave_peak);
        }
    }
}

/// Trackers for the body-frame x and y drive axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrideState {
    pub axes: [AxisStride; 2],
}
