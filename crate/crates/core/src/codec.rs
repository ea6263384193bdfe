//! Action sentences `⟨SOS, bin_x, bin_y, bin_z, EOS⟩` for voltage increments.
//!
//! Vocabulary ids: SOS = 0, EOS = 1, bin k = 2 + k.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::{snap_to_resolution, VoltageTriple};

pub const SOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
const BIN_ID_OFFSET: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid quantizer: {0}")]
    InvalidSpec(String),
    #[error("increment {value} on axis {axis} outside ±{range}")]
    OutOfRange { axis: usize, value: f64, range: f64 },
    #[error("malformed sentence: {0}")]
    Malformed(String),
    #[error("token id {0} outside the vocabulary")]
    OutOfVocabulary(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerSpec {
    pub dv_range: f64,
    pub step: f64,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        Self { dv_range: 0.5, step: 0.1 }
    }
}

impl QuantizerSpec {
    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.step.is_finite() && self.step > 0.0 && self.dv_range.is_finite() && self.dv_range > 0.0) {
            return Err(CodecError::InvalidSpec("step and dv_range must be positive".into()));
        }
        let ratio = self.dv_range / self.step;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(CodecError::InvalidSpec("dv_range must be a multiple of step".into()));
        }
        if ratio.round() > 1e6 {
            return Err(CodecError::InvalidSpec("too many bins".into()));
        }
        Ok(())
    }

    /// Bins on each side of zero.
    pub fn half_bins(&self) -> u32 {
        (self.dv_range / self.step).round() as u32
    }

    pub fn n_bins(&self) -> u32 {
        2 * self.half_bins() + 1
    }

    pub fn center(&self) -> u32 {
        self.half_bins()
    }

    pub fn vocab_size(&self) -> u32 {
        self.n_bins() + BIN_ID_OFFSET
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Sos,
    Eos,
    Bin(u32),
}

impl Token {
    pub fn id(self) -> u32 {
        match self {
            Token::Sos => SOS_ID,
            Token::Eos => EOS_ID,
            Token::Bin(k) => BIN_ID_OFFSET + k,
        }
    }

    pub fn from_id(id: u32, q: &QuantizerSpec) -> Result<Self, CodecError> {
        match id {
            SOS_ID => Ok(Token::Sos),
            EOS_ID => Ok(Token::Eos),
            _ if id < q.vocab_size() => Ok(Token::Bin(id - BIN_ID_OFFSET)),
            _ => Err(CodecError::OutOfVocabulary(id)),
        }
    }
}

/// One quantized increment, bins in x, y, z order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSentence {
    pub bins: [u32; 3],
}

impl ActionSentence {
    pub fn new(bins: [u32; 3], q: &QuantizerSpec) -> Result<Self, CodecError> {
        if let Some(b) = bins.iter().find(|&&b| b >= q.n_bins()) {
            return Err(CodecError::Malformed(format!("bin {b} out of range")));
        }
        Ok(Self { bins })
    }

    pub fn tokens(&self) -> [Token; 5] {
        [Token::Sos, Token::Bin(self.bins[0]), Token::Bin(self.bins[1]), Token::Bin(self.bins[2]), Token::Eos]
    }

    pub fn from_tokens(tokens: &[Token], q: &QuantizerSpec) -> Result<Self, CodecError> {
        match tokens {
            [Token::Sos, Token::Bin(x), Token::Bin(y), Token::Bin(z), Token::Eos] => Self::new([*x, *y, *z], q),
            _ => Err(CodecError::Malformed(format!("expected SOS, 3 bins, EOS; got {} tokens", tokens.len()))),
        }
    }
}

fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero
    x.round()
}

pub fn quantize(dv: VoltageTriple, q: &QuantizerSpec) -> Result<ActionSentence, CodecError> {
    q.validate()?;
    let center = f64::from(q.center());
    let mut bins = [0u32; 3];
    for (axis, v) in dv.to_array().into_iter().enumerate() {
        if !(v.is_finite() && v.abs() <= q.dv_range + 1e-12) {
            return Err(CodecError::OutOfRange { axis, value: v, range: q.dv_range });
        }
        bins[axis] = (center + round_half_away(v / q.step)) as u32;
    }
    ActionSentence::new(bins, q)
}

pub fn dequantize(s: &ActionSentence, q: &QuantizerSpec) -> Result<VoltageTriple, CodecError> {
    q.validate()?;
    let s = ActionSentence::new(s.bins, q)?;
    let center = i64::from(q.center());
    let axis = |b: u32| snap_to_resolution((i64::from(b) - center) as f64 * q.step);
    Ok(VoltageTriple::new(axis(s.bins[0]), axis(s.bins[1]), axis(s.bins[2])))
}

/// Vocabulary ids a decoder must emit for `dv`.
pub fn build_target(dv: VoltageTriple, q: &QuantizerSpec) -> Result<Vec<u32>, CodecError> {
    Ok(quantize(dv, q)?.tokens().iter().map(|t| t.id()).collect())
}

pub fn decode_ids(ids: &[u32], q: &QuantizerSpec) -> Result<ActionSentence, CodecError> {
    let tokens = ids.iter().map(|&id| Token::from_id(id, q)).collect::<Result<Vec<_>, _>>()?;
    ActionSentence::from_tokens(&tokens, q)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Frames opened by SOS that did not close as a valid sentence.
    pub malformed_frames: usize,
    /// Runs of tokens found outside any frame.
    pub stray_runs: usize,
}

impl ParseDiagnostics {
    pub fn total(&self) -> usize {
        self.malformed_frames + self.stray_runs
    }
}

/// Incremental SOS..EOS segmenter. Lenient: bad input only bumps the
/// diagnostic counters.
#[derive(Debug, Clone)]
pub struct StreamParser {
    q: QuantizerSpec,
    open: Vec<u32>,
    in_frame: bool,
    in_stray: bool,
    diagnostics: ParseDiagnostics,
}

impl StreamParser {
    pub fn new(q: QuantizerSpec) -> Result<Self, CodecError> {
        q.validate()?;
        Ok(Self { q, open: Vec::new(), in_frame: false, in_stray: false, diagnostics: ParseDiagnostics::default() })
    }

    pub fn feed(&mut self, ids: &[u32]) -> Vec<ActionSentence> {
        let mut out = Vec::new();
        for &id in ids {
            if id == SOS_ID {
                if self.in_frame {
                    self.diagnostics.malformed_frames += 1;
                }
                self.open.clear();
                self.open.push(id);
                self.in_frame = true;
                self.in_stray = false;
            } else if !self.in_frame {
                if !self.in_stray {
                    self.diagnostics.stray_runs += 1;
                    self.in_stray = true;
                }
            } else {
                self.open.push(id);
                if id == EOS_ID {
                    match decode_ids(&self.open, &self.q) {
                        Ok(s) => out.push(s),
                        Err(_) => self.diagnostics.malformed_frames += 1,
                    }
                    self.open.clear();
                    self.in_frame = false;
                }
            }
        }
        out
    }

    /// Tokens of the frame still open after the last `feed`.
    pub fn remainder(&self) -> &[u32] {
        &self.open
    }

    pub fn diagnostics(&self) -> ParseDiagnostics {
        self.diagnostics
    }
}

/// One-shot segmentation: sentences, trailing open frame, diagnostics.
pub fn parse_stream(ids: &[u32], q: &QuantizerSpec) -> Result<(Vec<ActionSentence>, Vec<u32>, ParseDiagnostics), CodecError> {
    let mut p = StreamParser::new(*q)?;
    let sentences = p.feed(ids);
    Ok((sentences, p.remainder().to_vec(), p.diagnostics()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q() -> QuantizerSpec {
        QuantizerSpec::default()
    }

    fn v(x: f64, y: f64, z: f64) -> VoltageTriple {
        VoltageTriple::new(x, y, z)
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(v(0.0, 0.0, 0.0), &q()).unwrap().bins, [5, 5, 5]);
        assert_eq!(quantize(v(-0.1, 0.0, 0.0), &q()).unwrap().bins, [4, 5, 5]);
        assert_eq!(quantize(v(0.26, -0.26, 0.0), &q()).unwrap().bins, [8, 2, 5]);
        assert!(quantize(v(0.6, 0.0, 0.0), &q()).is_err());
        assert!(quantize(v(f64::NAN, 0.0, 0.0), &q()).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let s = |b| ActionSentence::new(b, &q()).unwrap();
        assert_eq!(dequantize(&s([5, 5, 5]), &q()).unwrap(), VoltageTriple::ZERO);
        assert_eq!(dequantize(&s([0, 10, 5]), &q()).unwrap(), v(-0.5, 0.5, 0.0));
        assert_eq!(dequantize(&s([8, 2, 5]), &q()).unwrap(), v(0.3, -0.3, 0.0));
        assert!(ActionSentence::new([11, 0, 0], &q()).is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(build_target(VoltageTriple::ZERO, &q()).unwrap(), vec![0, 7, 7, 7, 1]);
        assert_eq!(build_target(v(-0.5, 0.0, 0.0), &q()).unwrap(), vec![0, 2, 7, 7, 1]);
        assert_eq!(q().vocab_size(), 13);
    }

    #[test]
    fn vocabulary_is_bijective() {
        let q = q();
        let ids: Vec<u32> = (0..q.vocab_size()).collect();
        for &id in &ids {
            assert_eq!(Token::from_id(id, &q).unwrap().id(), id);
        }
        assert!(Token::from_id(q.vocab_size(), &q).is_err());
    }

    #[test]
    fn invalid_spec() {
        assert!(QuantizerSpec { dv_range: 0.5, step: 0.3 }.validate().is_err());
        assert!(QuantizerSpec { dv_range: 0.5, step: 0.0 }.validate().is_err());
    }

    #[test]
    fn stream_examples() {
        let q = q();
        let frame = |d: VoltageTriple| build_target(d, &q).unwrap();
        let mut ids = Vec::new();
        for d in [v(0.1, 0.0, 0.0), v(0.0, -0.2, 0.0), v(0.0, 0.0, 0.5)] {
            ids.extend(frame(d));
        }
        let (s, rest, diag) = parse_stream(&ids, &q).unwrap();
        assert_eq!(s.len(), 3);
        assert!(rest.is_empty());
        assert_eq!(diag.total(), 0);

        let (s, rest, _) = parse_stream(&ids[..12], &q).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(rest, ids[10..12].to_vec());

        let mut bad = vec![0, 7, 7, 7, 7, 1];
        bad.extend(frame(v(0.1, 0.1, 0.1)));
        let (s, _, diag) = parse_stream(&bad, &q).unwrap();
        assert_eq!(s, vec![quantize(v(0.1, 0.1, 0.1), &q).unwrap()]);
        assert_eq!(diag.malformed_frames, 1);
    }

    #[test]
    fn incremental_feed() {
        let q = q();
        let ids = build_target(v(0.2, 0.0, -0.1), &q).unwrap();
        let mut p = StreamParser::new(q).unwrap();
        assert!(p.feed(&ids[..2]).is_empty());
        assert_eq!(p.remainder(), &ids[..2]);
        assert_eq!(p.feed(&ids[2..]).len(), 1);
        assert!(p.remainder().is_empty());
    }

    #[test]
    fn stray_and_out_of_vocab() {
        let q = q();
        let (s, _, diag) = parse_stream(&[1, 7, 7, 0, 7, 99, 7, 1, 0, 7, 7, 7, 1], &q).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(diag, ParseDiagnostics { malformed_frames: 1, stray_runs: 1 });
    }

    proptest! {
        #[test]
        fn roundtrip_error_bound(x in -0.5f64..=0.5, y in -0.5f64..=0.5, z in -0.5f64..=0.5) {
            let dv = v(x, y, z);
            let s = quantize(dv, &q()).unwrap();
            let back = dequantize(&s, &q()).unwrap();
            prop_assert!((back - dv).max_abs() <= 0.05 + 1e-12);
            prop_assert_eq!(decode_ids(&build_target(dv, &q()).unwrap(), &q()).unwrap(), s);
        }

        #[test]
        fn sentence_roundtrip(b in prop::array::uniform3(0u32..11)) {
            let s = ActionSentence::new(b, &q()).unwrap();
            prop_assert_eq!(quantize(dequantize(&s, &q()).unwrap(), &q()).unwrap(), s);
        }
    }
}
