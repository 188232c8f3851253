//! Text in, validated pump program out.
//!
//! The rule-based backend runs parse → normalize → plan → generate and is
//! the ground truth. The language-model backend asks a chat model for a
//! program and accepts it only if it parses and passes the safety check;
//! after one failed retry it falls back to the rule-based backend.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::few_shot_records;
use crate::llm::{extract_code_block, ChatClient, ChatMessage, LlmError};
use crate::planner::{plan_mix, MixConfig, MixPlan, PlanError};
use crate::pumpcode::{check_program, generate_program, parse_program, CheckReport, DeviceLimits, ProgramError, PumpProgram};
use crate::request::{understand, NormalizedRequest, RequestError, DEFAULT_VOLUME_ML};
use crate::sim::{DeviceState, PumpModel};

/// Program grammar given to the language model verbatim.
pub const PROGRAM_GRAMMAR: &str = r#"program   := statement+
statement := write | setvol
write     := "Pump" INT "." "write" "(" NUMBER ")" ";"
setvol    := "setVolume" "(" NUMBER ")" ";"
INT       := [1-9][0-9]*
NUMBER    := nonnegative decimal"#;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranslateError {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("program failed the safety check: {0}")]
    CheckFailed(CheckReport),
    #[error("language model backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Everything the pipeline needs to know about the device and mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mix: MixConfig,
    pub models: Vec<PumpModel>,
    pub limits: DeviceLimits,
    pub default_volume_ml: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mix: MixConfig::default(),
            models: vec![PumpModel::default(); 3],
            limits: DeviceLimits::default(),
            default_volume_ml: DEFAULT_VOLUME_ML,
        }
    }
}

impl PipelineConfig {
    /// Idle device state with full reservoirs.
    pub fn fresh_state(&self, seed: u64) -> DeviceState {
        DeviceState::new(self.models.len(), &self.limits.reservoir_ml, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RuleBased,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "rule_based")]
    RuleBased,
    #[serde(rename = "llm")]
    Llm,
    #[serde(rename = "rule_based-fallback")]
    RuleBasedFallback,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::RuleBased => "rule_based",
            Provenance::Llm => "llm",
            Provenance::RuleBasedFallback => "rule_based-fallback",
        })
    }
}

pub enum Backend {
    RuleBased,
    Llm {
        client: Box<dyn ChatClient>,
        /// Fall back to the rule-based path when the model fails twice.
        fallback: bool,
    },
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::RuleBased => BackendKind::RuleBased,
            Backend::Llm { .. } => BackendKind::Llm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub program: PumpProgram,
    pub plan: Option<MixPlan>,
    pub provenance: Provenance,
}

/// Parse program text and run the safety check against the given state.
pub fn validate_program(text: &str, cfg: &PipelineConfig, state: &DeviceState) -> Result<PumpProgram, TranslateError> {
    let program = parse_program(text)?;
    let report = check_program(&program, &cfg.limits, state, &cfg.models);
    if report.ok {
        Ok(program)
    } else {
        Err(TranslateError::CheckFailed(report))
    }
}

/// Rule-based translation of an already understood request.
pub fn translate_request(req: &NormalizedRequest, cfg: &PipelineConfig, state: &DeviceState) -> Result<Translation, TranslateError> {
    let plan = plan_mix(req, &cfg.mix, &cfg.models)?;
    let text = generate_program(&plan).to_text();
    let program = validate_program(&text, cfg, state)?;
    Ok(Translation {
        program,
        plan: Some(plan),
        provenance: Provenance::RuleBased,
    })
}

pub fn translate_rule_based(text: &str, cfg: &PipelineConfig, state: &DeviceState) -> Result<Translation, TranslateError> {
    let req = understand(text, cfg.default_volume_ml)?;
    translate_request(&req, cfg, state)
}

/// System prompt: grammar, instructions and worked examples.
pub fn system_prompt(cfg: &PipelineConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "You control a {}-pump color dispenser. Pump 1 holds cyan, pump 2 magenta, pump 3 yellow{}.\n",
        cfg.mix.pump_count,
        if cfg.mix.has_diluent() { ", pump 4 clear diluent" } else { "" }
    ));
    out.push_str("Translate the user's color request into a pump program in this grammar:\n\n");
    out.push_str(PROGRAM_GRAMMAR);
    out.push_str(&format!(
        "\n\nPumpN.write(x) sets pump N to x volts (0 to {} V); setVolume(v) dispenses v ml in total with all pumps at their setpoints.\n",
        cfg.limits.v_max
    ));
    out.push_str("Output only the program, one statement per line, with no explanation.\n\nExamples:\n");
    for rec in few_shot_records(cfg) {
        out.push_str(&format!("\nRequest: {}\nProgram:\n{}\n", rec.prompt, rec.completion));
    }
    out
}

fn ask_model(
    client: &dyn ChatClient,
    text: &str,
    cfg: &PipelineConfig,
    state: &DeviceState,
) -> Result<PumpProgram, String> {
    let system = ChatMessage::system(system_prompt(cfg));
    let mut user = text.to_string();
    let mut last_error = String::new();
    for _ in 0..2 {
        let reply = match client.complete(&[system.clone(), ChatMessage::user(user.clone())]) {
            Ok(reply) => reply,
            Err(e @ LlmError::NotConfigured) => return Err(e.to_string()),
            Err(e) => {
                last_error = e.to_string();
                continue;
            }
        };
        match validate_program(&extract_code_block(&reply), cfg, state) {
            Ok(program) => return Ok(program),
            Err(e) => {
                log::warn!("model output rejected: {e}");
                last_error = e.to_string();
                user = format!(
                    "{text}\n\nYour previous program was rejected: {e}\nReply with a corrected program only."
                );
            }
        }
    }
    Err(last_error)
}

pub fn translate(text: &str, backend: &Backend, cfg: &PipelineConfig, state: &DeviceState) -> Result<Translation, TranslateError> {
    match backend {
        Backend::RuleBased => translate_rule_based(text, cfg, state),
        Backend::Llm { client, fallback } => match ask_model(client.as_ref(), text, cfg, state) {
            Ok(program) => Ok(Translation {
                program,
                plan: None,
                provenance: Provenance::Llm,
            }),
            Err(reason) if *fallback => {
                log::warn!("falling back to rule-based translation: {reason}");
                let mut t = translate_rule_based(text, cfg, state)?;
                t.provenance = Provenance::RuleBasedFallback;
                Ok(t)
            }
            Err(reason) => Err(TranslateError::BackendUnavailable(reason)),
        },
    }
}
