//! Rule-based understanding of color requests.
//!
//! A request sentence is scanned for exactly one color phrase (a literal or
//! a table name), the modifiers that precede it, and an optional volume
//! phrase such as `5 ml` or `2.5 milliliters`. Filler words are skipped;
//! anything else is ignored with a warning.
//!
//! ```text
//! request  := word* [modifier*] color word*
//! color    := hex | rgb | name
//! volume   := NUMBER ("ml" | "milliliter" | "milliliters" | "millilitre" | "millilitres")
//! ```

use std::sync::LazyLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{self, apply_modifier, lookup_name, parse_color_literal, Color, ColorError, Modifier};

pub const MAX_REQUEST_CHARS: usize = 1024;
pub const DEFAULT_VOLUME_ML: f64 = 5.0;

/// Words that carry no meaning for the parser.
pub const FILLER_WORDS: &[&str] = &[
    "i", "need", "a", "an", "make", "of", "please", "me", "some", "want", "would", "like", "could",
    "can", "you", "give", "mix", "the", "get", "dispense", "prepare", "and", "color", "colour",
    "for", "to", "us", "shade",
];

pub const VOLUME_UNITS: &[&str] = &["ml", "milliliter", "milliliters", "millilitre", "millilitres"];

static LITERAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)#[0-9a-z]*|rgb\s*\([^)]*\)?").expect("literal regex")
});
static WORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?[a-z]*|[a-z]+(?:'[a-z]+)?|\S").expect("word regex"));
static NUMBER_UNIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(-?[0-9]+(?:\.[0-9]+)?)([a-z]+)$").expect("number regex"));

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("request is empty or longer than {MAX_REQUEST_CHARS} characters")]
    InvalidInput,
    #[error("no color literal or known color name found")]
    NoColorFound,
    #[error("request names more than one color: `{0}` and `{1}`")]
    AmbiguousRequest(String, String),
    #[error("bad volume `{0}`")]
    BadVolume(String),
    #[error(transparent)]
    Color(#[from] ColorError),
}

/// Structured output of language understanding, before color resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorRequest {
    pub raw_text: String,
    pub base_color_text: String,
    pub modifiers: Vec<Modifier>,
    pub volume_ml: Option<f64>,
}

impl ColorRequest {
    /// Canonical sentence for this request; parses back to the same fields.
    pub fn render(&self) -> String {
        let mut phrase = String::new();
        for m in &self.modifiers {
            phrase.push_str(m.as_str());
            phrase.push(' ');
        }
        phrase.push_str(&self.base_color_text);
        match self.volume_ml {
            Some(v) => format!("make {v} ml of {phrase}"),
            None => format!("make {phrase}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRequest {
    pub target: Color,
    pub volume_ml: f64,
    pub source: ColorRequest,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Color(String),
    Modifier(Modifier),
    Volume(f64),
    Filler,
    Unknown(String),
}

fn classify_words(segment: &str, out: &mut Vec<Token>) -> Result<(), RequestError> {
    let words: Vec<&str> = WORD_RE.find_iter(segment).map(|m| m.as_str()).collect();
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        if let Some(caps) = NUMBER_UNIT_RE.captures(w) {
            // "5ml"
            let unit = &caps[2];
            if !VOLUME_UNITS.contains(&unit) {
                out.push(Token::Unknown(w.to_string()));
            } else {
                out.push(Token::Volume(parse_volume(&caps[1])?));
            }
            i += 1;
            continue;
        }
        if let Some(next) = words.get(i + 1) {
            if VOLUME_UNITS.contains(next) {
                out.push(Token::Volume(parse_volume(w)?));
                i += 2;
                continue;
            }
        }
        let token = if VOLUME_UNITS.contains(&w) {
            return Err(RequestError::BadVolume(w.to_string()));
        } else if let Some(m) = Modifier::from_word(w) {
            Token::Modifier(m)
        } else if lookup_name(w).is_some() {
            Token::Color(w.to_string())
        } else if FILLER_WORDS.contains(&w) || w.chars().all(|c| !c.is_alphanumeric()) {
            Token::Filler
        } else {
            Token::Unknown(w.to_string())
        };
        out.push(token);
        i += 1;
    }
    Ok(())
}

fn parse_volume(text: &str) -> Result<f64, RequestError> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(RequestError::BadVolume(text.to_string())),
    }
}

fn tokenize(lower: &str) -> Result<Vec<Token>, RequestError> {
    let mut tokens = Vec::new();
    let mut last = 0;
    for m in LITERAL_RE.find_iter(lower) {
        classify_words(&lower[last..m.start()], &mut tokens)?;
        tokens.push(Token::Color(normalize_literal(m.as_str())));
        last = m.end();
    }
    classify_words(&lower[last..], &mut tokens)?;
    Ok(tokens)
}

/// `rgb (1, 2, 3)` → `rgb(1,2,3)`; hex literals pass through.
fn normalize_literal(lit: &str) -> String {
    if lit.starts_with('#') {
        lit.to_string()
    } else {
        lit.chars().filter(|c| !c.is_whitespace()).collect()
    }
}

pub fn parse_request(text: &str) -> Result<ColorRequest, RequestError> {
    if text.trim().is_empty() || text.chars().count() > MAX_REQUEST_CHARS {
        return Err(RequestError::InvalidInput);
    }
    let lower = text.to_lowercase();
    let tokens = tokenize(&lower)?;

    let mut base: Option<(usize, String)> = None;
    let mut volume: Option<f64> = None;
    for (i, token) in tokens.iter().enumerate() {
        match token {
            Token::Color(c) => match &base {
                Some((_, existing)) if existing != c => {
                    return Err(RequestError::AmbiguousRequest(existing.clone(), c.clone()))
                }
                Some(_) => {}
                None => base = Some((i, c.clone())),
            },
            Token::Volume(v) => match volume {
                Some(existing) if existing != *v => {
                    return Err(RequestError::BadVolume(format!("{existing} and {v}")))
                }
                _ => volume = Some(*v),
            },
            Token::Unknown(w) => warn!("ignoring unrecognized word `{w}`"),
            Token::Modifier(_) | Token::Filler => {}
        }
    }
    let (color_pos, base_color_text) = base.ok_or(RequestError::NoColorFound)?;

    let mut modifiers = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        if let Token::Modifier(m) = token {
            if i < color_pos {
                modifiers.push(*m);
            } else {
                warn!("ignoring modifier `{m}` after the color phrase");
            }
        }
    }

    Ok(ColorRequest {
        raw_text: text.to_string(),
        base_color_text,
        modifiers,
        volume_ml: volume,
    })
}

pub fn normalize_request(req: ColorRequest, default_volume_ml: f64) -> Result<NormalizedRequest, RequestError> {
    let base = parse_color_literal(&req.base_color_text)?;
    let target = req.modifiers.iter().fold(base, |c, m| apply_modifier(c, *m));
    debug_assert!(target.is_valid());
    let volume_ml = req.volume_ml.unwrap_or(default_volume_ml);
    if !(volume_ml.is_finite() && volume_ml > 0.0) {
        return Err(RequestError::BadVolume(volume_ml.to_string()));
    }
    Ok(NormalizedRequest {
        target,
        volume_ml,
        source: req,
    })
}

/// Sentence shapes used to render requests, as (with volume, without volume).
/// `{v}` is the volume in ml and `{c}` the modifiers followed by the color.
pub const SENTENCE_TEMPLATES: &[(&str, &str)] = &[
    ("{v} ml of {c}", "{c}"),
    ("I need {v} ml of a {c}", "I need a {c}"),
    ("make {v} ml of {c}", "make {c}"),
    ("please mix {v} milliliters of {c}", "please mix some {c}"),
    ("could you make me {v} ml of {c}", "could you make me some {c}"),
    ("give me {v} ml of {c} please", "give me {c} please"),
];

/// Render a request sentence from its parts with one of [`SENTENCE_TEMPLATES`].
pub fn render_sentence(template: usize, base: &str, modifiers: &[Modifier], volume_ml: Option<f64>) -> String {
    let (with_v, without_v) = SENTENCE_TEMPLATES[template % SENTENCE_TEMPLATES.len()];
    let mut phrase: Vec<&str> = modifiers.iter().map(|m| m.as_str()).collect();
    phrase.push(base);
    let phrase = phrase.join(" ");
    match volume_ml {
        Some(v) => with_v.replace("{v}", &v.to_string()).replace("{c}", &phrase),
        None => without_v.replace("{c}", &phrase),
    }
}

/// Parse and normalize in one step.
pub fn understand(text: &str, default_volume_ml: f64) -> Result<NormalizedRequest, RequestError> {
    normalize_request(parse_request(text)?, default_volume_ml)
}

/// Names of the shipped color table, in table order.
pub fn color_names() -> impl Iterator<Item = &'static str> {
    color::NAMED_COLORS.iter().map(|(n, _)| *n)
}
