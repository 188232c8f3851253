//! The pump-program language.
//!
//! ```text
//! program   := statement+
//! statement := write | setvol
//! write     := "Pump" INT "." "write" "(" NUMBER ")" ";"
//! setvol    := "setVolume" "(" NUMBER ")" ";"
//! INT       := [1-9][0-9]*
//! NUMBER    := [0-9]+ ("." [0-9]+)?
//! ```
//!
//! `PumpN.write(x)` stores a persistent setpoint of `x` volts for pump N.
//! `setVolume(v)` runs every pump at its setpoint until `v` ml have been
//! dispensed in total. Emitted numbers carry at most one fraction digit.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::MixPlan;
use crate::sim::{flow_rate, DeviceState, PumpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statement {
    Write { pump: usize, setpoint: f64 },
    SetVolume { volume_ml: f64 },
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Write { pump, setpoint } => write!(f, "Pump{pump}.write({});", format_number(*setpoint)),
            Statement::SetVolume { volume_ml } => write!(f, "setVolume({});", format_number(*volume_ml)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpProgram {
    pub statements: Vec<Statement>,
}

impl PumpProgram {
    /// Canonical text: one statement per line, no trailing newline.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn set_volume(&self) -> Option<f64> {
        self.statements.iter().find_map(|s| match s {
            Statement::SetVolume { volume_ml } => Some(*volume_ml),
            _ => None,
        })
    }
}

impl fmt::Display for PumpProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.statements.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// `5` for integral values, otherwise one fraction digit.
pub fn format_number(v: f64) -> String {
    let r = round1(v);
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r:.1}")
    }
}

pub fn generate_program(plan: &MixPlan) -> PumpProgram {
    let mut statements: Vec<Statement> = plan
        .setpoints
        .iter()
        .enumerate()
        .map(|(i, &x)| Statement::Write {
            pump: i + 1,
            setpoint: round1(x),
        })
        .collect();
    statements.push(Statement::SetVolume {
        volume_ml: round1(plan.total_volume_ml),
    });
    PumpProgram { statements }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("syntax error at {line}:{column}: {message}")]
    SyntaxError { line: usize, column: usize, message: String },
    #[error("second setVolume at {line}:{column}")]
    DuplicateSetVolume { line: usize, column: usize },
    #[error("unknown statement `{name}` at {line}:{column}")]
    UnknownStatement { name: String, line: usize, column: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Dot,
    LParen,
    RParen,
    Semi,
    Other(char),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Vec<Spanned> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut column) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, column);
        if c == '\n' {
            i += 1;
            line += 1;
            column = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            column += 1;
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            column += j - i;
            i = j;
            Tok::Ident(s)
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let s: String = chars[i..j].iter().collect();
            column += j - i;
            i = j;
            Tok::Number(s)
        } else {
            i += 1;
            column += 1;
            match c {
                '.' => Tok::Dot,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ';' => Tok::Semi,
                other => Tok::Other(other),
            }
        };
        out.push(Spanned {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.end, |t| (t.line, t.column))
    }

    fn error(&self, message: impl Into<String>) -> ProgramError {
        let (line, column) = self.here();
        ProgramError::SyntaxError {
            line,
            column,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ProgramError> {
        match self.peek() {
            Some(t) if t.tok == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected {what}, found {}", describe(&t.tok)))),
            None => Err(self.error(format!("expected {what}, found end of input"))),
        }
    }

    fn number(&mut self) -> Result<f64, ProgramError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(s)) => {
                self.pos += 1;
                s.parse().map_err(|_| self.error(format!("bad number `{s}`")))
            }
            Some(t) => Err(self.error(format!("expected a nonnegative number, found {}", describe(&t)))),
            None => Err(self.error("expected a nonnegative number, found end of input")),
        }
    }

    fn pump_index(digits: &str, line: usize, column: usize) -> Result<usize, ProgramError> {
        let err = |message: String| ProgramError::SyntaxError { line, column, message };
        if digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err(format!("bad pump index `{digits}`")));
        }
        digits.parse().map_err(|_| err(format!("pump index `{digits}` too large")))
    }

    fn argument(&mut self) -> Result<f64, ProgramError> {
        self.expect(Tok::LParen, "`(`")?;
        let v = self.number()?;
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::Semi, "`;`")?;
        Ok(v)
    }

    fn statement(&mut self) -> Result<Statement, ProgramError> {
        let head = self.peek().cloned().expect("caller checked for input");
        let Tok::Ident(name) = &head.tok else {
            return Err(self.error(format!("expected a statement, found {}", describe(&head.tok))));
        };
        self.pos += 1;
        if name == "setVolume" {
            let volume_ml = self.argument()?;
            return Ok(Statement::SetVolume { volume_ml });
        }
        let Some(suffix) = name.strip_prefix("Pump") else {
            return Err(ProgramError::UnknownStatement {
                name: name.clone(),
                line: head.line,
                column: head.column,
            });
        };
        let pump = if suffix.is_empty() {
            match self.peek().cloned() {
                Some(Spanned { tok: Tok::Number(d), line, column }) => {
                    self.pos += 1;
                    Self::pump_index(&d, line, column)?
                }
                _ => return Err(self.error("expected a pump index")),
            }
        } else {
            Self::pump_index(suffix, head.line, head.column)?
        };
        self.expect(Tok::Dot, "`.`")?;
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Ident(m)) if m == "write" => self.pos += 1,
            _ => return Err(self.error("expected `write`")),
        }
        let setpoint = self.argument()?;
        Ok(Statement::Write { pump, setpoint })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(s) => format!("`{s}`"),
        Tok::Dot => "`.`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Semi => "`;`".into(),
        Tok::Other(c) => format!("`{c}`"),
    }
}

pub fn parse_program(text: &str) -> Result<PumpProgram, ProgramError> {
    let toks = lex(text);
    let last_line = text.lines().count().max(1);
    let last_col = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    let mut p = Parser {
        toks,
        pos: 0,
        end: (last_line, last_col),
    };
    if p.peek().is_none() {
        return Err(p.error("empty program"));
    }
    let mut statements = Vec::new();
    let mut seen_volume = false;
    while let Some(t) = p.peek() {
        let (line, column) = (t.line, t.column);
        let stmt = p.statement()?;
        if let Statement::SetVolume { .. } = stmt {
            if seen_volume {
                return Err(ProgramError::DuplicateSetVolume { line, column });
            }
            seen_volume = true;
        }
        statements.push(stmt);
    }
    Ok(PumpProgram { statements })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceLimits {
    pub pump_count: usize,
    pub v_max: f64,
    /// Reservoir capacity per pump, ml.
    pub reservoir_ml: Vec<f64>,
    pub max_volume_ml: f64,
}

impl Default for DeviceLimits {
    fn default() -> Self {
        DeviceLimits::for_pumps(3)
    }
}

impl DeviceLimits {
    pub fn for_pumps(pump_count: usize) -> Self {
        DeviceLimits {
            pump_count,
            v_max: 300.0,
            reservoir_ml: vec![100.0; pump_count],
            max_volume_ml: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    NoSuchPump,
    SetpointOverLimit,
    InvalidSetpoint,
    MissingSetVolume,
    DuplicateSetVolume,
    VolumeOutOfRange,
    NoFlow,
    ReservoirLow,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::NoSuchPump => "NO_SUCH_PUMP",
            ViolationCode::SetpointOverLimit => "SETPOINT_OVER_LIMIT",
            ViolationCode::InvalidSetpoint => "INVALID_SETPOINT",
            ViolationCode::MissingSetVolume => "MISSING_SET_VOLUME",
            ViolationCode::DuplicateSetVolume => "DUPLICATE_SET_VOLUME",
            ViolationCode::VolumeOutOfRange => "VOLUME_OUT_OF_RANGE",
            ViolationCode::NoFlow => "NO_FLOW",
            ViolationCode::ReservoirLow => "RESERVOIR_LOW",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    pub statement_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            match v.statement_index {
                Some(idx) => write!(f, "{} (statement {}): {}", v.code, idx + 1, v.message)?,
                None => write!(f, "{}: {}", v.code, v.message)?,
            }
        }
        Ok(())
    }
}

/// Static safety check. Collects every violation instead of stopping at
/// the first. Setpoints persist, so pumps the program never writes keep the
/// setpoint they have in `state`.
pub fn check_program(
    prog: &PumpProgram,
    limits: &DeviceLimits,
    state: &DeviceState,
    models: &[PumpModel],
) -> CheckReport {
    let mut violations = Vec::new();
    let mut push = |code, statement_index, message: String| {
        violations.push(Violation {
            code,
            message,
            statement_index,
        })
    };

    let mut setpoints: Vec<f64> = (0..limits.pump_count)
        .map(|i| state.setpoints.get(i).copied().unwrap_or(0.0))
        .collect();
    let mut volume_seen = false;

    for (idx, stmt) in prog.statements.iter().enumerate() {
        match *stmt {
            Statement::Write { pump, setpoint } => {
                if pump == 0 || pump > limits.pump_count {
                    push(
                        ViolationCode::NoSuchPump,
                        Some(idx),
                        format!("pump {pump} does not exist on a {}-pump device", limits.pump_count),
                    );
                    continue;
                }
                if !(setpoint.is_finite() && setpoint >= 0.0) {
                    push(ViolationCode::InvalidSetpoint, Some(idx), format!("setpoint {setpoint} is not a valid voltage"));
                    continue;
                }
                if setpoint > limits.v_max {
                    push(
                        ViolationCode::SetpointOverLimit,
                        Some(idx),
                        format!("setpoint {setpoint} V exceeds the {} V limit", limits.v_max),
                    );
                    continue;
                }
                setpoints[pump - 1] = setpoint;
            }
            Statement::SetVolume { volume_ml } => {
                if volume_seen {
                    push(ViolationCode::DuplicateSetVolume, Some(idx), "only one setVolume is allowed".into());
                    continue;
                }
                volume_seen = true;
                if !(volume_ml.is_finite() && volume_ml > 0.0 && volume_ml <= limits.max_volume_ml) {
                    push(
                        ViolationCode::VolumeOutOfRange,
                        Some(idx),
                        format!("volume {volume_ml} ml outside (0, {}] ml", limits.max_volume_ml),
                    );
                    continue;
                }
                let flows: Vec<f64> = setpoints
                    .iter()
                    .zip(models)
                    .map(|(&v, m)| flow_rate(m, v).unwrap_or(0.0))
                    .collect();
                let total: f64 = flows.iter().sum();
                if total <= 0.0 {
                    push(ViolationCode::NoFlow, Some(idx), "every pump is at or below its onset voltage".into());
                    continue;
                }
                for (i, q) in flows.iter().enumerate() {
                    let need = volume_ml * q / total;
                    let have = state.reservoirs.get(i).copied().unwrap_or(0.0);
                    if need > have {
                        push(
                            ViolationCode::ReservoirLow,
                            Some(idx),
                            format!("pump {} needs {need:.3} ml but its reservoir holds {have:.3} ml", i + 1),
                        );
                    }
                }
            }
        }
    }
    if !volume_seen {
        push(ViolationCode::MissingSetVolume, None, "program never calls setVolume".into());
    }
    CheckReport {
        ok: violations.is_empty(),
        violations,
    }
}
