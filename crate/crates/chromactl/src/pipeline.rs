//! The mix pipeline shared by the CLI and the HTTP service:
//! translate, check, execute on the device, record.

use std::io;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use chromactl_core::calibrate::{calibrate_pump, CalibrationError, FitResult};
use chromactl_core::color::{color_distance, ColorError, NAMED_COLORS};
use chromactl_core::llm::{ChatClient, ChatMessage, HttpChatClient, LlmError};
use chromactl_core::planner::{mix_forward, plan_fractions, plan_mix, PlanError, GAMUT_TOL};
use chromactl_core::pumpcode::{check_program, parse_program, ProgramError};
use chromactl_core::request::{normalize_request, parse_request, RequestError};
use chromactl_core::sim::{Fault, SharedDevice, SimError};
use chromactl_core::translate::{translate, Backend, BackendKind, Provenance, TranslateError, Translation};
use chromactl_core::{CheckReport, Color, Device, DeviceLimits, DeviceState, DispenseResult, MixPlan, Modifier, PumpModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AppConfig, ConfigError};
use crate::history::History;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DEVICE: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

/// Every code [`PipelineError::code`] can return.
pub const ERROR_CODES: &[&str] = &[
    "INVALID_INPUT",
    "NO_COLOR_FOUND",
    "AMBIGUOUS_REQUEST",
    "BAD_VOLUME",
    "UNKNOWN_COLOR_NAME",
    "MALFORMED_LITERAL",
    "CHANNEL_OUT_OF_RANGE",
    "INFEASIBLE_FLOW",
    "PLAN_FAILED",
    "SYNTAX_ERROR",
    "DUPLICATE_SET_VOLUME",
    "UNKNOWN_STATEMENT",
    "CHECK_FAILED",
    "BACKEND_UNAVAILABLE",
    "DEVICE_BUSY",
    "DEVICE_FAULT",
    "RUN_NOT_FOUND",
    "CALIBRATION_FAILED",
    "CONFIG_INVALID",
    "INVALID_OPTION",
    "IO_ERROR",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error("device is busy")]
    DeviceBusy,
    #[error("device fault: {}", fault_list(.0))]
    DeviceFault(Vec<Fault>),
    #[error("no run with id {0}")]
    RunNotFound(u64),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("history: {0}")]
    Io(#[from] io::Error),
}

fn fault_list(faults: &[Fault]) -> String {
    faults.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
}

impl From<RequestError> for PipelineError {
    fn from(e: RequestError) -> Self {
        PipelineError::Translate(e.into())
    }
}

impl From<PlanError> for PipelineError {
    fn from(e: PlanError) -> Self {
        PipelineError::Translate(e.into())
    }
}

impl From<ProgramError> for PipelineError {
    fn from(e: ProgramError) -> Self {
        PipelineError::Translate(e.into())
    }
}

impl PipelineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use TranslateError as T;
        match self {
            PipelineError::Translate(t) => match t {
                T::Request(r) => match r {
                    RequestError::InvalidInput => "INVALID_INPUT",
                    RequestError::NoColorFound => "NO_COLOR_FOUND",
                    RequestError::AmbiguousRequest(..) => "AMBIGUOUS_REQUEST",
                    RequestError::BadVolume(_) => "BAD_VOLUME",
                    RequestError::Color(ColorError::UnknownColorName(_)) => "UNKNOWN_COLOR_NAME",
                    RequestError::Color(ColorError::MalformedLiteral { .. }) => "MALFORMED_LITERAL",
                    RequestError::Color(ColorError::ChannelOutOfRange(_)) => "CHANNEL_OUT_OF_RANGE",
                },
                T::Plan(PlanError::InfeasibleFlow { .. }) => "INFEASIBLE_FLOW",
                T::Plan(_) => "PLAN_FAILED",
                T::Program(ProgramError::SyntaxError { .. }) => "SYNTAX_ERROR",
                T::Program(ProgramError::DuplicateSetVolume { .. }) => "DUPLICATE_SET_VOLUME",
                T::Program(ProgramError::UnknownStatement { .. }) => "UNKNOWN_STATEMENT",
                T::CheckFailed(_) => "CHECK_FAILED",
                T::BackendUnavailable(_) => "BACKEND_UNAVAILABLE",
            },
            PipelineError::DeviceBusy => "DEVICE_BUSY",
            PipelineError::DeviceFault(_) => "DEVICE_FAULT",
            PipelineError::RunNotFound(_) => "RUN_NOT_FOUND",
            PipelineError::Calibration(_) => "CALIBRATION_FAILED",
            PipelineError::Config(_) => "CONFIG_INVALID",
            PipelineError::InvalidOption(_) => "INVALID_OPTION",
            PipelineError::Io(_) => "IO_ERROR",
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Translate(TranslateError::BackendUnavailable(_)) => EXIT_BACKEND,
            PipelineError::DeviceBusy | PipelineError::DeviceFault(_) | PipelineError::Calibration(_) => EXIT_DEVICE,
            PipelineError::Io(_) => EXIT_OTHER,
            _ => EXIT_VALIDATION,
        }
    }

    /// Check report attached to the error, if any.
    pub fn report(&self) -> Option<&CheckReport> {
        match self {
            PipelineError::Translate(TranslateError::CheckFailed(r)) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: u64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub request_text: String,
    pub backend: BackendKind,
    pub provenance: Provenance,
    pub target: Color,
    pub volume_ml: f64,
    /// Absent when the program came from the language model.
    pub plan: Option<MixPlan>,
    pub program_text: String,
    pub result: DispenseResult,
    pub achieved: Color,
    pub distance: f64,
    pub matched: bool,
    pub device_seed: u64,
    /// Index of this run on the device; selects its noise draw.
    pub device_run: u64,
    pub adjusted_from: Option<u64>,
}

/// A stored record plus wall-clock measurements that are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOutcome {
    pub record: RunRecord,
    pub translate_latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixOptions {
    pub volume_ml: Option<f64>,
    pub backend: BackendKind,
}

impl Default for MixOptions {
    fn default() -> Self {
        MixOptions {
            volume_ml: None,
            backend: BackendKind::RuleBased,
        }
    }
}

/// Stands in for the model client when no endpoint is configured.
struct Unconfigured;

impl ChatClient for Unconfigured {
    fn complete(&self, _: &[ChatMessage]) -> Result<String, LlmError> {
        Err(LlmError::NotConfigured)
    }
}

pub type ClientFactory = Arc<dyn Fn(Duration) -> Box<dyn ChatClient> + Send + Sync>;

/// Model client from the environment, or one that always reports
/// `NotConfigured`.
pub fn env_client_factory() -> ClientFactory {
    Arc::new(|timeout| match HttpChatClient::from_env(timeout) {
        Ok(c) => Box::new(c) as Box<dyn ChatClient>,
        Err(_) => Box::new(Unconfigured),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub name: String,
    pub hex: String,
    pub rgb: Color,
    /// Distance from the nearest mix this rig can make.
    pub residual: f64,
    pub in_gamut: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamutInfo {
    pub pump_count: usize,
    pub ink_strength: f64,
    pub has_diluent: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorsReport {
    pub colors: Vec<ColorEntry>,
    pub modifiers: Vec<Modifier>,
    pub gamut: GamutInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub pump_count: usize,
    pub ink_strength: f64,
    pub match_threshold: f64,
    pub default_volume_ml: f64,
    pub noise_on: bool,
    pub seed: u64,
    pub limits: DeviceLimits,
    pub pumps: Vec<PumpModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub busy: bool,
    /// `None` while another caller holds the device.
    pub device: Option<DeviceState>,
    pub config: ConfigSummary,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpFit {
    pub pump: usize,
    pub fit: FitResult,
}

/// One configured rig: config, simulated device and run history.
pub struct App {
    config: RwLock<AppConfig>,
    config_path: Option<PathBuf>,
    device: SharedDevice,
    history: History,
    llm: ClientFactory,
}

impl App {
    pub fn new(config: AppConfig, history: History) -> Result<Self, PipelineError> {
        config.validate()?;
        let device = Device::new(
            config.device_models(),
            config.mix.clone(),
            &config.limits.reservoir_ml,
            config.device.seed,
            config.device.noise_on,
        )
        .map_err(|e: SimError| ConfigError::Invalid(e.to_string()))?;
        Ok(App {
            config: RwLock::new(config),
            config_path: None,
            device: SharedDevice::new(device),
            history,
            llm: env_client_factory(),
        })
    }

    /// History opened from the configured path, or in memory.
    pub fn from_config(config: AppConfig) -> Result<Self, PipelineError> {
        let history = match config.history_path() {
            Some(p) => History::open(&p)?,
            None => History::in_memory(),
        };
        App::new(config, history)
    }

    /// Write calibration results back to this file.
    pub fn with_config_path(mut self, path: PathBuf) -> Self {
        self.config_path = Some(path);
        self
    }

    pub fn with_llm(mut self, factory: ClientFactory) -> Self {
        self.llm = factory;
        self
    }

    pub fn config(&self) -> AppConfig {
        self.config.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn device(&self) -> &SharedDevice {
        &self.device
    }

    fn backend(&self, kind: BackendKind, cfg: &AppConfig) -> Backend {
        match kind {
            BackendKind::RuleBased => Backend::RuleBased,
            BackendKind::Llm => Backend::Llm {
                client: (self.llm)(Duration::from_secs_f64(cfg.llm.timeout_s)),
                fallback: cfg.llm.fallback,
            },
        }
    }

    /// Request text with the volume replaced, rendered canonically.
    fn with_volume(text: &str, volume_ml: Option<f64>) -> Result<String, PipelineError> {
        let Some(v) = volume_ml else {
            return Ok(text.to_string());
        };
        if !(v.is_finite() && v > 0.0) {
            return Err(PipelineError::InvalidOption(format!("volume {v} must be positive")));
        }
        let mut req = parse_request(text)?;
        req.volume_ml = Some(v);
        Ok(req.render())
    }

    /// Translate against a snapshot of the device; the device is not held
    /// while the backend runs.
    pub fn gen(&self, text: &str, opts: &MixOptions) -> Result<Translation, PipelineError> {
        let cfg = self.config();
        let text = Self::with_volume(text, opts.volume_ml)?;
        let state = self.device.lock().state().clone();
        Ok(translate(&text, &self.backend(opts.backend, &cfg), &cfg.pipeline(), &state)?)
    }

    pub fn plan(&self, text: &str, volume_ml: Option<f64>) -> Result<MixPlan, PipelineError> {
        let cfg = self.config();
        let text = Self::with_volume(text, volume_ml)?;
        let req = normalize_request(parse_request(&text)?, cfg.default_volume_ml)?;
        Ok(plan_mix(&req, &cfg.mix, &cfg.pumps)?)
    }

    pub fn mix(&self, text: &str, opts: &MixOptions) -> Result<MixOutcome, PipelineError> {
        self.mix_inner(text, opts, None)
    }

    fn mix_inner(&self, text: &str, opts: &MixOptions, adjusted_from: Option<u64>) -> Result<MixOutcome, PipelineError> {
        let cfg = self.config();
        let pipeline = cfg.pipeline();
        let effective = Self::with_volume(text, opts.volume_ml)?;
        let state = self.device.lock().state().clone();
        if state.busy {
            return Err(PipelineError::DeviceBusy);
        }

        let started = Instant::now();
        let translation = translate(&effective, &self.backend(opts.backend, &cfg), &pipeline, &state)?;
        let translate_latency_s = started.elapsed().as_secs_f64();

        let target = match &translation.plan {
            Some(plan) => plan.target,
            None => normalize_request(parse_request(&effective)?, cfg.default_volume_ml)?.target,
        };

        let (result, device_seed, device_run) = {
            let mut dev = self.device.lock();
            let seed = dev.state().seed;
            let run = dev.state().runs;
            let result = dev
                .execute_program(&translation.program, &pipeline.limits)
                .map_err(|e| match e {
                    SimError::UncheckedProgram(report) => TranslateError::CheckFailed(report).into(),
                    SimError::DeviceBusy => PipelineError::DeviceBusy,
                    other => PipelineError::InvalidOption(other.to_string()),
                })?;
            (result, seed, run)
        };
        if !result.ok() {
            return Err(PipelineError::DeviceFault(result.faults));
        }

        let distance = color_distance(target, result.mixed);
        let record = RunRecord {
            id: 0,
            timestamp: chrono::Utc::now().to_rfc3339(),
            request_text: text.to_string(),
            backend: opts.backend,
            provenance: translation.provenance,
            target,
            volume_ml: translation.program.set_volume().unwrap_or(0.0),
            plan: translation.plan,
            program_text: translation.program.to_text(),
            achieved: result.mixed,
            result,
            distance,
            matched: distance < cfg.match_threshold,
            device_seed,
            device_run,
            adjusted_from,
        };
        let record = self.history.append(record)?;
        Ok(MixOutcome {
            record,
            translate_latency_s,
        })
    }

    /// Re-mix a stored run's request with one more modifier.
    pub fn adjust(&self, run_id: u64, modifier: Modifier) -> Result<MixOutcome, PipelineError> {
        let original = self.history.get(run_id).ok_or(PipelineError::RunNotFound(run_id))?;
        let mut req = parse_request(&original.request_text)?;
        req.modifiers.push(modifier);
        req.volume_ml = Some(original.volume_ml);
        let opts = MixOptions {
            volume_ml: None,
            backend: original.backend,
        };
        self.mix_inner(&req.render(), &opts, Some(run_id))
    }

    /// Parse and statically check program text against the current device.
    pub fn check(&self, text: &str) -> Result<CheckReport, PipelineError> {
        let prog = parse_program(text)?;
        let cfg = self.config();
        let dev = self.device.lock();
        Ok(check_program(&prog, &cfg.limits, dev.state(), dev.models()))
    }

    /// Check and run program text. Device faults are reported in the result.
    pub fn execute(&self, text: &str) -> Result<DispenseResult, PipelineError> {
        let prog = parse_program(text)?;
        let cfg = self.config();
        let mut dev = self.device.lock();
        dev.execute_program(&prog, &cfg.limits).map_err(|e| match e {
            SimError::UncheckedProgram(report) => TranslateError::CheckFailed(report).into(),
            SimError::DeviceBusy => PipelineError::DeviceBusy,
            other => PipelineError::InvalidOption(other.to_string()),
        })
    }

    /// Calibrate one pump, or all when `pump` is `None`, and adopt the fitted
    /// models for planning. Saves the config file when one is attached.
    pub fn calibrate(&self, pump: Option<usize>, points: usize) -> Result<Vec<PumpFit>, PipelineError> {
        let pumps: Vec<usize> = match pump {
            Some(p) => vec![p],
            None => (1..=self.config().mix.pump_count).collect(),
        };
        let fits = {
            let mut dev = self.device.lock();
            pumps
                .into_iter()
                .map(|p| calibrate_pump(p, &mut dev, points).map(|fit| PumpFit { pump: p, fit }))
                .collect::<Result<Vec<_>, _>>()?
        };
        let updated = {
            let mut cfg = self.config.write().unwrap_or_else(|p| p.into_inner());
            for f in &fits {
                cfg.pumps[f.pump - 1] = f.fit.model;
            }
            cfg.clone()
        };
        if let Some(path) = &self.config_path {
            updated.save(path)?;
        }
        Ok(fits)
    }

    /// Refill every reservoir to capacity.
    pub fn refill(&self) -> DeviceState {
        let cfg = self.config();
        let mut dev = self.device.lock();
        dev.set_reservoirs(&cfg.limits.reservoir_ml);
        dev.state().clone()
    }

    pub fn state(&self) -> StateReport {
        let cfg = self.config();
        let device = self.device.snapshot();
        StateReport {
            busy: device.as_ref().is_none_or(|d| d.busy),
            device,
            config: ConfigSummary {
                pump_count: cfg.mix.pump_count,
                ink_strength: cfg.mix.ink_strength,
                match_threshold: cfg.match_threshold,
                default_volume_ml: cfg.default_volume_ml,
                noise_on: cfg.device.noise_on,
                seed: cfg.device.seed,
                limits: cfg.limits.clone(),
                pumps: cfg.pumps.clone(),
            },
            history_len: self.history.len(),
        }
    }

    pub fn colors(&self) -> ColorsReport {
        let cfg = self.config();
        let colors = NAMED_COLORS
            .iter()
            .map(|(name, [r, g, b])| {
                let rgb = Color::from_rgb8(*r, *g, *b);
                let residual = plan_fractions(rgb, &cfg.mix)
                    .and_then(|f| mix_forward(&f, &cfg.mix))
                    .map(|c| color_distance(c, rgb))
                    .unwrap_or(f64::NAN);
                ColorEntry {
                    name: name.to_string(),
                    hex: rgb.to_hex(),
                    rgb,
                    residual,
                    in_gamut: residual <= GAMUT_TOL,
                }
            })
            .collect();
        let description = if cfg.mix.has_diluent() {
            "three inks plus clear diluent; a color is reachable when its total CMY density is at most the ink strength".to_string()
        } else {
            "three inks; exactly reachable colors have at least one zero RGB channel".to_string()
        };
        ColorsReport {
            colors,
            modifiers: Modifier::ALL.to_vec(),
            gamut: GamutInfo {
                pump_count: cfg.mix.pump_count,
                ink_strength: cfg.mix.ink_strength,
                has_diluent: cfg.mix.has_diluent(),
                description,
            },
        }
    }
}
