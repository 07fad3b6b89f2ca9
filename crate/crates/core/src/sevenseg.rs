//! Seven-segment encoding for a six-digit common-cathode display.
//!
//! Masks are active-high in `gfedcba` order (bit 0 = segment a). The decimal
//! point travels separately and is packed into bit 7 for traces.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::soc::{DisplayContent, EfficiencyBp, LengthCm};
use crate::Micros;

pub const DIGITS: usize = 6;

const GLYPHS: [u8; 10] = [0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F];
const DASH: u8 = 0x40;
const LETTER_E: u8 = 0x79;
const LETTER_R: u8 = 0x50;

/// Largest value, in hundredths, that fits six digits.
const MAX_HUNDREDTHS: u32 = 999_999;
const MAX_EFFICIENCY_BP: u32 = 99_999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{0} is not a decimal digit")]
pub struct InvalidDigit(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SegmentMask {
    pub bits: u8,
    pub dp: bool,
}

impl SegmentMask {
    pub const BLANK: SegmentMask = SegmentMask { bits: 0, dp: false };
    pub const DASH: SegmentMask = SegmentMask {
        bits: DASH,
        dp: false,
    };

    const fn glyph(bits: u8) -> Self {
        SegmentMask { bits, dp: false }
    }

    /// Trace byte: segments in bits 0..7, decimal point in bit 7.
    pub fn to_byte(self) -> u8 {
        self.bits | if self.dp { 0x80 } else { 0 }
    }

    pub fn from_byte(byte: u8) -> Self {
        SegmentMask {
            bits: byte & 0x7F,
            dp: byte & 0x80 != 0,
        }
    }

    fn to_char(self) -> Option<char> {
        match self.bits {
            0 => Some(' '),
            DASH => Some('-'),
            LETTER_E => Some('E'),
            LETTER_R => Some('r'),
            bits => GLYPHS
                .iter()
                .position(|&g| g == bits)
                .map(|d| char::from(b'0' + d as u8)),
        }
    }
}

pub fn encode_digit(d: u8) -> Result<SegmentMask, InvalidDigit> {
    GLYPHS
        .get(usize::from(d))
        .map(|&bits| SegmentMask::glyph(bits))
        .ok_or(InvalidDigit(d))
}

/// Six display positions, most significant first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SegmentFrame {
    pub digits: [SegmentMask; DIGITS],
}

impl SegmentFrame {
    pub fn dashes() -> Self {
        SegmentFrame {
            digits: [SegmentMask::DASH; DIGITS],
        }
    }

    pub fn is_error(&self) -> bool {
        *self == Self::dashes() || self.digits.iter().any(|m| m.bits == LETTER_E)
    }

    pub fn decimal_points(&self) -> usize {
        self.digits.iter().filter(|m| m.dp).count()
    }

    /// Reads the frame back as text, decimal points inline. `None` if some
    /// position holds a mask outside the glyph table.
    pub fn to_text(&self) -> Option<String> {
        let mut s = String::with_capacity(DIGITS + 1);
        for m in &self.digits {
            s.push(m.to_char()?);
            if m.dp {
                s.push('.');
            }
        }
        Some(s)
    }

    /// `t_us,D5,D4,D3,D2,D1,D0` with two-digit uppercase hex masks.
    pub fn trace_line(&self, at: Micros) -> String {
        let mut line = at.to_string();
        for m in &self.digits {
            line.push_str(&format!(",{:02X}", m.to_byte()));
        }
        line
    }
}

impl fmt::Display for SegmentFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_text() {
            Some(text) => f.write_str(&text),
            None => write!(f, "{:?}", self.digits.map(SegmentMask::to_byte)),
        }
    }
}

/// Two fixed decimals, leading zeros blanked down to `0.00`.
fn render_hundredths(value: u32) -> SegmentFrame {
    if value > MAX_HUNDREDTHS {
        return SegmentFrame::dashes();
    }
    let text = format!("{:>6}", format!("{value:03}"));
    let mut frame = SegmentFrame::default();
    for (slot, c) in frame.digits.iter_mut().zip(text.bytes()) {
        if c != b' ' {
            *slot = encode_digit(c - b'0').expect("formatted decimal digit");
        }
    }
    frame.digits[DIGITS - 3].dp = true;
    frame
}

pub fn render_meters(length: LengthCm) -> SegmentFrame {
    render_hundredths(length.0)
}

pub fn render_efficiency(eff: EfficiencyBp) -> SegmentFrame {
    if eff.0 > MAX_EFFICIENCY_BP {
        return SegmentFrame::dashes();
    }
    render_hundredths(eff.0)
}

/// `  Err<code>`; codes above 9 fall back to dashes.
pub fn render_error(code: u8) -> SegmentFrame {
    let Ok(digit) = encode_digit(code) else {
        return SegmentFrame::dashes();
    };
    let mut frame = SegmentFrame::default();
    frame.digits[2] = SegmentMask::glyph(LETTER_E);
    frame.digits[3] = SegmentMask::glyph(LETTER_R);
    frame.digits[4] = SegmentMask::glyph(LETTER_R);
    frame.digits[5] = digit;
    frame
}

pub fn render(content: DisplayContent) -> SegmentFrame {
    match content {
        DisplayContent::Meters(len) => render_meters(len),
        DisplayContent::Efficiency(eff) => render_efficiency(eff),
        DisplayContent::Error(code) => render_error(code),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Lit segments per glyph, independent of the GLYPHS table.
    fn lit(d: u8) -> &'static str {
        ["abcdef", "bc", "abdeg", "abcdg", "bcfg", "acdfg", "acdefg", "abc", "abcdefg", "abcdfg"]
            [d as usize]
    }

    fn mask_of(segments: &str) -> u8 {
        segments.bytes().map(|s| 1u8 << (s - b'a')).fold(0, |a, b| a | b)
    }

    #[test]
    fn digit_masks_match_segment_geometry() {
        for d in 0..10 {
            assert_eq!(encode_digit(d).unwrap().bits, mask_of(lit(d)), "digit {d}");
        }
        assert_eq!(encode_digit(8).unwrap().bits, 0x7F);
        assert_eq!(encode_digit(0).unwrap().bits, 0x3F);
        assert_eq!(encode_digit(1).unwrap().bits, 0x06);
        assert_eq!(encode_digit(10), Err(InvalidDigit(10)));
    }

    #[test]
    fn digit_masks_distinct() {
        let mut masks: Vec<u8> = (0..10).map(|d| encode_digit(d).unwrap().bits).collect();
        masks.sort();
        masks.dedup();
        assert_eq!(masks.len(), 10);
    }

    #[test]
    fn meters_rendering() {
        assert_eq!(render_meters(LengthCm(0)).to_text().unwrap(), "   0.00");
        assert_eq!(render_meters(LengthCm(1000)).to_text().unwrap(), "  10.00");
        assert_eq!(render_meters(LengthCm(3901)).to_text().unwrap(), "  39.01");
        assert_eq!(render_meters(LengthCm(999_999)).to_text().unwrap(), "9999.99");
        assert_eq!(render_meters(LengthCm(1_000_000)), SegmentFrame::dashes());
        assert_eq!(
            render_meters(LengthCm(1_000_000)).digits.map(SegmentMask::to_byte),
            [0x40; 6]
        );
    }

    #[test]
    fn efficiency_rendering() {
        assert_eq!(render_efficiency(EfficiencyBp(0)).to_text().unwrap(), "   0.00");
        assert_eq!(render_efficiency(EfficiencyBp(8000)).to_text().unwrap(), "  80.00");
        assert_eq!(render_efficiency(EfficiencyBp(10_000)).to_text().unwrap(), " 100.00");
        assert_eq!(render_efficiency(EfficiencyBp(99_999)).to_text().unwrap(), " 999.99");
        assert_eq!(render_efficiency(EfficiencyBp(100_000)), SegmentFrame::dashes());
    }

    #[test]
    fn error_rendering() {
        let f = render_error(1);
        assert_eq!(f.to_text().unwrap(), "  Err1");
        assert!(f.is_error());
        assert_eq!(render_error(12), SegmentFrame::dashes());
    }

    #[test]
    fn trace_line_format() {
        let f = render_meters(LengthCm(3901));
        assert_eq!(f.trace_line(42), "42,00,00,4F,EF,3F,06");
    }

    proptest! {
        #[test]
        fn rendered_frames_decode_to_decimal_text(v in 0u32..=999_999) {
            let f = render_meters(LengthCm(v));
            let expected = format!("{:>7}", format!("{}.{:02}", v / 100, v % 100));
            prop_assert_eq!(f.to_text().unwrap(), expected);
            prop_assert_eq!(f.decimal_points(), 1);
            for m in f.digits {
                prop_assert!(m.bits < 128);
                prop_assert_eq!(SegmentMask::from_byte(m.to_byte()), m);
            }
        }
    }
}
