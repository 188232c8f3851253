//! Unit-RGB colors, CMY densities, descriptive modifiers and the color
//! literal grammar.
//!
//! Accepted literals:
//!
//! ```text
//! #RRGGBB            six hex digits, case-insensitive
//! rgb(R, G, B)       integer channels 0-255, optional spaces
//! <name>             lowercase entry of NAMED_COLORS
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColorError {
    #[error("unknown color name `{0}`")]
    UnknownColorName(String),
    #[error("malformed color literal `{text}`: {reason}")]
    MalformedLiteral { text: String, reason: String },
    #[error("channel value {0} is not finite or outside [0, 1]")]
    ChannelOutOfRange(f64),
}

/// The fixed name table, channel values in 0-255.
pub const NAMED_COLORS: [(&str, [u8; 3]); 16] = [
    ("red", [255, 0, 0]),
    ("green", [0, 128, 0]),
    ("blue", [0, 0, 255]),
    ("cyan", [0, 255, 255]),
    ("magenta", [255, 0, 255]),
    ("yellow", [255, 255, 0]),
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("orange", [255, 165, 0]),
    ("gray", [128, 128, 128]),
    ("purple", [128, 0, 128]),
    ("brown", [165, 42, 42]),
    ("pink", [255, 192, 203]),
    ("teal", [0, 128, 128]),
    ("navy", [0, 0, 128]),
    ("olive", [128, 128, 0]),
];

pub fn lookup_name(name: &str) -> Option<Color> {
    NAMED_COLORS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| Color::from_rgb8(c[0], c[1], c[2]))
}

fn check_channel(v: f64) -> Result<f64, ColorError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ColorError::ChannelOutOfRange(v))
    }
}

/// A point in the unit RGB cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Color {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Color {
    pub const BLACK: Color = Color { r: 0.0, g: 0.0, b: 0.0 };
    pub const WHITE: Color = Color { r: 1.0, g: 1.0, b: 1.0 };

    pub fn new(r: f64, g: f64, b: f64) -> Result<Self, ColorError> {
        Ok(Color {
            r: check_channel(r)?,
            g: check_channel(g)?,
            b: check_channel(b)?,
        })
    }

    /// Builds a color, clamping each channel into [0, 1]. NaN maps to 0.
    pub fn clamped(r: f64, g: f64, b: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Color { r: c(r), g: c(g), b: c(b) }
    }

    pub fn from_rgb8(r: u8, g: u8, b: u8) -> Self {
        Color {
            r: f64::from(r) / 255.0,
            g: f64::from(g) / 255.0,
            b: f64::from(b) / 255.0,
        }
    }

    pub fn to_rgb8(self) -> [u8; 3] {
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        [q(self.r), q(self.g), q(self.b)]
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_channels(ch: [f64; 3]) -> Result<Self, ColorError> {
        Color::new(ch[0], ch[1], ch[2])
    }

    /// `#rrggbb` rendering; exact for colors with 8-bit channels.
    pub fn to_hex(self) -> String {
        let [r, g, b] = self.to_rgb8();
        format!("#{r:02x}{g:02x}{b:02x}")
    }

    pub fn is_valid(self) -> bool {
        self.channels()
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.r, self.g, self.b)
    }
}

impl FromStr for Color {
    type Err = ColorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_color_literal(s)
    }
}

/// Subtractive ink density per channel (cyan absorbs red, and so on).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityVec {
    pub c: f64,
    pub m: f64,
    pub y: f64,
}

impl DensityVec {
    pub fn new(c: f64, m: f64, y: f64) -> Result<Self, ColorError> {
        Ok(DensityVec {
            c: check_channel(c)?,
            m: check_channel(m)?,
            y: check_channel(y)?,
        })
    }

    pub fn channels(self) -> [f64; 3] {
        [self.c, self.m, self.y]
    }
}

pub fn rgb_to_density(color: Color) -> DensityVec {
    DensityVec {
        c: 1.0 - color.r,
        m: 1.0 - color.g,
        y: 1.0 - color.b,
    }
}

pub fn density_to_rgb(d: DensityVec) -> Color {
    Color {
        r: 1.0 - d.c,
        g: 1.0 - d.m,
        b: 1.0 - d.y,
    }
}

/// Descriptive adjectives understood by the request parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modifier {
    Bright,
    Dark,
    Pale,
    Deep,
}

impl Modifier {
    pub const ALL: [Modifier; 4] = [Modifier::Bright, Modifier::Dark, Modifier::Pale, Modifier::Deep];

    pub fn as_str(self) -> &'static str {
        match self {
            Modifier::Bright => "bright",
            Modifier::Dark => "dark",
            Modifier::Pale => "pale",
            Modifier::Deep => "deep",
        }
    }

    pub fn from_word(word: &str) -> Option<Modifier> {
        Modifier::ALL.into_iter().find(|m| m.as_str() == word)
    }
}

impl fmt::Display for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modifier::from_word(&s.to_ascii_lowercase()).ok_or_else(|| format!("unknown modifier `{s}`"))
    }
}

/// Hue in [0, 6), saturation and value in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(c: Color) -> Hsv {
    let max = c.r.max(c.g).max(c.b);
    let min = c.r.min(c.g).min(c.b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == c.r {
        ((c.g - c.b) / delta).rem_euclid(6.0)
    } else if max == c.g {
        (c.b - c.r) / delta + 2.0
    } else {
        (c.r - c.g) / delta + 4.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv { h, s, v: max }
}

pub fn hsv_to_rgb(hsv: Hsv) -> Color {
    let Hsv { h, s, v } = hsv;
    let chroma = v * s;
    let x = chroma * (1.0 - ((h.rem_euclid(2.0)) - 1.0).abs());
    let m = v - chroma;
    let (r, g, b) = match h.rem_euclid(6.0) as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    Color::clamped(r + m, g + m, b + m)
}

pub fn apply_modifier(color: Color, modifier: Modifier) -> Color {
    let mut hsv = rgb_to_hsv(color);
    match modifier {
        Modifier::Bright => hsv.v = (1.25 * hsv.v).min(1.0),
        Modifier::Dark => hsv.v *= 0.6,
        Modifier::Pale => hsv.s *= 0.5,
        Modifier::Deep => hsv.s = (1.25 * hsv.s).min(1.0),
    }
    hsv_to_rgb(hsv)
}

/// Euclidean distance in unit RGB.
pub fn color_distance(a: Color, b: Color) -> f64 {
    let (dr, dg, db) = (a.r - b.r, a.g - b.g, a.b - b.b);
    (dr * dr + dg * dg + db * db).sqrt()
}

fn malformed(text: &str, reason: impl Into<String>) -> ColorError {
    ColorError::MalformedLiteral {
        text: text.to_string(),
        reason: reason.into(),
    }
}

pub fn parse_color_literal(text: &str) -> Result<Color, ColorError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(malformed(text, "empty"));
    }
    if let Some(hex) = trimmed.strip_prefix('#') {
        return parse_hex(trimmed, hex);
    }
    if let Some(rest) = trimmed.strip_prefix("rgb(") {
        return parse_functional(trimmed, rest);
    }
    lookup_name(trimmed).ok_or_else(|| ColorError::UnknownColorName(trimmed.to_string()))
}

fn parse_hex(text: &str, hex: &str) -> Result<Color, ColorError> {
    if hex.len() != 6 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(malformed(text, "expected six hex digits"));
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex");
    Ok(Color::from_rgb8(channel(0), channel(2), channel(4)))
}

fn parse_functional(text: &str, rest: &str) -> Result<Color, ColorError> {
    let inner = rest
        .strip_suffix(')')
        .ok_or_else(|| malformed(text, "missing closing parenthesis"))?;
    let parts: Vec<&str> = inner.split(',').map(|p| p.trim_matches(' ')).collect();
    if parts.len() != 3 {
        return Err(malformed(text, "expected three channels"));
    }
    let mut ch = [0u8; 3];
    for (slot, part) in ch.iter_mut().zip(&parts) {
        if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed(text, format!("channel `{part}` is not an integer")));
        }
        let value: u32 = part
            .parse()
            .map_err(|_| malformed(text, format!("channel `{part}` out of range 0-255")))?;
        *slot = u8::try_from(value)
            .map_err(|_| malformed(text, format!("channel {value} out of range 0-255")))?;
    }
    Ok(Color::from_rgb8(ch[0], ch[1], ch[2]))
}
