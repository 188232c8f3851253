//! Simulated EHD dispensing device.
//!
//! Each pump follows a quadratic-above-onset flow law
//! `Q = k * max(0, V - V0)^2`. A dispense integrates the constant pump
//! flows with a fixed 10 ms step until the requested total volume is
//! reached. With noise enabled, every pump's flow is scaled by one
//! `Normal(1, sigma)` factor drawn per run from a seeded generator.
//!
//! # Wire protocol
//!
//! One newline-terminated ASCII command per line:
//!
//! ```text
//! SET <pump> <volts>   -> OK | ERR <code>
//! DISPENSE <ml>        -> DONE <secs> <v1> <v2> ... | ERR <code>
//! STATE                -> STATE <busy:0|1> <reservoir1> <reservoir2> ...
//! RESET                -> OK
//! ```
//!
//! Volumes are printed with three decimals. Error codes are
//! `SETPOINT_OVER_LIMIT`, `NO_SUCH_PUMP`, `BUSY`, `RESERVOIR_EMPTY`,
//! `NO_FLOW` and `BAD_COMMAND`.

use std::fmt;
use std::sync::{Mutex, MutexGuard, TryLockError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::Color;
use crate::planner::{mix_forward, MixConfig};
use crate::pumpcode::{check_program, CheckReport, DeviceLimits, PumpProgram, Statement};

/// Integration step, seconds.
pub const STEP_S: f64 = 0.01;
const STEPS_PER_S: f64 = 100.0;
/// Dispenses with no flow give up after this much simulated time.
pub const NO_FLOW_TIMEOUT_S: f64 = 60.0;
/// Slack on the stopping test so exact volumes are not overshot by a step.
const VOLUME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("setpoint {setpoint} V outside [0, {v_max}] V")]
    SetpointOutOfRange { setpoint: f64, v_max: f64 },
    #[error("device is busy")]
    DeviceBusy,
    #[error("program failed the safety check: {0}")]
    UncheckedProgram(CheckReport),
    #[error("invalid pump model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PumpModel {
    /// Gain, ml/s/V^2.
    pub k: f64,
    /// Onset voltage, V.
    pub v0: f64,
    pub v_max: f64,
    /// Relative standard deviation of the per-run flow factor.
    pub noise_sigma: f64,
}

impl Default for PumpModel {
    fn default() -> Self {
        PumpModel {
            k: 1e-4,
            v0: 100.0,
            v_max: 300.0,
            noise_sigma: 0.02,
        }
    }
}

impl PumpModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(SimError::InvalidModel(format!("gain {} must be positive", self.k)));
        }
        if !(self.v0 >= 0.0 && self.v0 < self.v_max && self.v_max.is_finite()) {
            return Err(SimError::InvalidModel(format!(
                "need 0 <= V0 < V_max, got V0 = {} and V_max = {}",
                self.v0, self.v_max
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SimError::InvalidModel("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn max_flow(&self) -> f64 {
        self.k * (self.v_max - self.v0).max(0.0).powi(2)
    }
}

/// Flow in ml/s at a setpoint in volts.
pub fn flow_rate(model: &PumpModel, setpoint: f64) -> Result<f64, SimError> {
    if !(setpoint.is_finite() && (0.0..=model.v_max).contains(&setpoint)) {
        return Err(SimError::SetpointOutOfRange {
            setpoint,
            v_max: model.v_max,
        });
    }
    let above = (setpoint - model.v0).max(0.0);
    Ok(model.k * above * above)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub setpoints: Vec<f64>,
    pub reservoirs: Vec<f64>,
    /// Volume per pump dispensed by the most recent run.
    pub dispensed: Vec<f64>,
    pub busy: bool,
    pub seed: u64,
    pub elapsed_s: f64,
    /// Number of runs so far; selects the noise stream of the next run.
    pub runs: u64,
}

impl DeviceState {
    pub fn new(pumps: usize, reservoirs: &[f64], seed: u64) -> Self {
        DeviceState {
            setpoints: vec![0.0; pumps],
            reservoirs: reservoirs.to_vec(),
            dispensed: vec![0.0; pumps],
            busy: false,
            seed,
            elapsed_s: 0.0,
            runs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fault {
    SetpointOverLimit { pump: usize },
    NoSuchPump { pump: usize },
    ReservoirEmpty { pump: usize },
    NoFlow,
}

impl Fault {
    pub fn code(&self) -> &'static str {
        match self {
            Fault::SetpointOverLimit { .. } => "SETPOINT_OVER_LIMIT",
            Fault::NoSuchPump { .. } => "NO_SUCH_PUMP",
            Fault::ReservoirEmpty { .. } => "RESERVOIR_EMPTY",
            Fault::NoFlow => "NO_FLOW",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::SetpointOverLimit { pump } | Fault::NoSuchPump { pump } | Fault::ReservoirEmpty { pump } => {
                write!(f, "{} (pump {pump})", self.code())
            }
            Fault::NoFlow => f.write_str(self.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispenseResult {
    pub volumes_ml: Vec<f64>,
    pub total_ml: f64,
    pub duration_s: f64,
    pub mixed: Color,
    pub faults: Vec<Fault>,
}

impl DispenseResult {
    pub fn ok(&self) -> bool {
        self.faults.is_empty()
    }

    /// Realized volume fractions; all zero when nothing was dispensed.
    pub fn fractions(&self) -> Vec<f64> {
        if self.total_ml <= 0.0 {
            return vec![0.0; self.volumes_ml.len()];
        }
        self.volumes_ml.iter().map(|v| v / self.total_ml).collect()
    }

    fn faulted(pumps: usize, fault: Fault) -> Self {
        DispenseResult {
            volumes_ml: vec![0.0; pumps],
            total_ml: 0.0,
            duration_s: 0.0,
            mixed: Color::WHITE,
            faults: vec![fault],
        }
    }
}

enum Stop {
    Volume(f64),
    Steps(u64),
}

/// A single simulated dispenser. All mutation goes through `&mut self`;
/// wrap it in [`SharedDevice`] to serialize access from several threads.
#[derive(Debug, Clone)]
pub struct Device {
    models: Vec<PumpModel>,
    mix: MixConfig,
    state: DeviceState,
    noise_on: bool,
}

impl Device {
    pub fn new(models: Vec<PumpModel>, mix: MixConfig, reservoirs: &[f64], seed: u64, noise_on: bool) -> Result<Self, SimError> {
        for m in &models {
            m.validate()?;
        }
        if models.len() != mix.pump_count || reservoirs.len() != models.len() {
            return Err(SimError::InvalidModel(format!(
                "{} models, {} reservoirs, {} pumps in mix config",
                models.len(),
                reservoirs.len(),
                mix.pump_count
            )));
        }
        let state = DeviceState::new(models.len(), reservoirs, seed);
        Ok(Device {
            models,
            mix,
            state,
            noise_on,
        })
    }

    /// Three default pumps with 100 ml reservoirs.
    pub fn with_defaults(seed: u64, noise_on: bool) -> Self {
        Device::new(vec![PumpModel::default(); 3], MixConfig::default(), &[100.0; 3], seed, noise_on)
            .expect("default device is valid")
    }

    pub fn pump_count(&self) -> usize {
        self.models.len()
    }

    pub fn models(&self) -> &[PumpModel] {
        &self.models
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn noise_on(&self) -> bool {
        self.noise_on
    }

    pub fn set_noise(&mut self, on: bool) {
        self.noise_on = on;
    }

    pub fn set_reservoirs(&mut self, levels: &[f64]) {
        self.state.reservoirs = levels.to_vec();
    }

    pub fn set_setpoint(&mut self, pump: usize, volts: f64) -> Result<(), Fault> {
        if pump == 0 || pump > self.models.len() {
            return Err(Fault::NoSuchPump { pump });
        }
        let model = &self.models[pump - 1];
        if !(volts.is_finite() && volts >= 0.0 && volts <= model.v_max) {
            return Err(Fault::SetpointOverLimit { pump });
        }
        self.state.setpoints[pump - 1] = volts;
        Ok(())
    }

    /// Zero setpoints and the per-run counters; reservoirs are kept.
    pub fn reset(&mut self) {
        self.state.setpoints.iter_mut().for_each(|v| *v = 0.0);
        self.state.dispensed.iter_mut().for_each(|v| *v = 0.0);
        self.state.busy = false;
    }

    fn noise_factors(&mut self) -> Vec<f64> {
        let run = self.state.runs;
        self.state.runs += 1;
        if !self.noise_on {
            return vec![1.0; self.models.len()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.seed);
        rng.set_stream(run);
        self.models
            .iter()
            .map(|m| {
                let normal = Normal::new(1.0, m.noise_sigma).expect("validated sigma");
                normal.sample(&mut rng).max(0.0)
            })
            .collect()
    }

    fn flows(&mut self) -> Vec<f64> {
        let noise = self.noise_factors();
        self.models
            .iter()
            .zip(&self.state.setpoints)
            .zip(noise)
            .map(|((m, &v), n)| flow_rate(m, v).unwrap_or(0.0) * n)
            .collect()
    }

    fn run(&mut self, stop: Stop) -> DispenseResult {
        let pumps = self.models.len();
        self.state.busy = true;
        let flows = self.flows();
        let total_flow: f64 = flows.iter().sum();
        self.state.dispensed = vec![0.0; pumps];

        if total_flow <= 0.0 {
            let duration_s = match stop {
                Stop::Volume(_) => NO_FLOW_TIMEOUT_S,
                Stop::Steps(n) => n as f64 / STEPS_PER_S,
            };
            self.state.elapsed_s += duration_s;
            self.state.busy = false;
            let faults = match stop {
                Stop::Volume(_) => vec![Fault::NoFlow],
                Stop::Steps(_) => Vec::new(),
            };
            return DispenseResult {
                volumes_ml: vec![0.0; pumps],
                total_ml: 0.0,
                duration_s,
                mixed: Color::WHITE,
                faults,
            };
        }

        let mut volumes = vec![0.0; pumps];
        let mut faults = Vec::new();
        let mut step: u64 = 0;
        loop {
            step += 1;
            let t = step as f64 / STEPS_PER_S;
            for (v, q) in volumes.iter_mut().zip(&flows) {
                *v = q * t;
            }
            if let Some(i) = (0..pumps).find(|&i| volumes[i] > self.state.reservoirs[i]) {
                volumes[i] = self.state.reservoirs[i];
                faults.push(Fault::ReservoirEmpty { pump: i + 1 });
                break;
            }
            let total: f64 = volumes.iter().sum();
            let done = match stop {
                Stop::Volume(target) => total >= target - VOLUME_EPS,
                Stop::Steps(n) => step >= n,
            };
            if done {
                break;
            }
        }

        let duration_s = step as f64 / STEPS_PER_S;
        for (i, v) in volumes.iter().enumerate() {
            self.state.reservoirs[i] = (self.state.reservoirs[i] - v).max(0.0);
        }
        self.state.dispensed = volumes.clone();
        self.state.elapsed_s += duration_s;
        self.state.busy = false;

        let total_ml: f64 = volumes.iter().sum();
        let mixed = if total_ml > 0.0 {
            let fractions: Vec<f64> = volumes.iter().map(|v| v / total_ml).collect();
            mix_forward(&fractions, &self.mix).unwrap_or(Color::WHITE)
        } else {
            Color::WHITE
        };
        DispenseResult {
            volumes_ml: volumes,
            total_ml,
            duration_s,
            mixed,
            faults,
        }
    }

    /// Run all pumps at their setpoints until `volume_ml` has been dispensed.
    pub fn dispense(&mut self, volume_ml: f64) -> DispenseResult {
        self.run(Stop::Volume(volume_ml))
    }

    /// Run all pumps at their setpoints for a fixed time, rounded to whole steps.
    pub fn run_for(&mut self, seconds: f64) -> DispenseResult {
        let steps = (seconds * STEPS_PER_S).round().max(1.0) as u64;
        self.run(Stop::Steps(steps))
    }

    /// Check, then execute. Refuses programs with violations.
    pub fn execute_program(&mut self, prog: &PumpProgram, limits: &DeviceLimits) -> Result<DispenseResult, SimError> {
        if self.state.busy {
            return Err(SimError::DeviceBusy);
        }
        let report = check_program(prog, limits, &self.state, &self.models);
        if !report.ok {
            return Err(SimError::UncheckedProgram(report));
        }
        Ok(self.execute_unchecked(prog))
    }

    /// Execute without the static check. Unsafe statements abort the run
    /// and are reported as faults.
    pub fn execute_unchecked(&mut self, prog: &PumpProgram) -> DispenseResult {
        let mut result = None;
        for stmt in &prog.statements {
            match *stmt {
                Statement::Write { pump, setpoint } => {
                    if let Err(fault) = self.set_setpoint(pump, setpoint) {
                        return DispenseResult::faulted(self.models.len(), fault);
                    }
                }
                Statement::SetVolume { volume_ml } => {
                    let r = self.dispense(volume_ml);
                    let stop = !r.ok();
                    result = Some(r);
                    if stop {
                        break;
                    }
                }
            }
        }
        result.unwrap_or_else(|| DispenseResult {
            volumes_ml: vec![0.0; self.models.len()],
            total_ml: 0.0,
            duration_s: 0.0,
            mixed: Color::WHITE,
            faults: Vec::new(),
        })
    }

    /// Handle one wire-protocol line and return the reply line.
    pub fn handle_command(&mut self, line: &str) -> String {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["SET", pump, volts] => {
                let (Ok(pump), Ok(volts)) = (pump.parse::<usize>(), volts.parse::<f64>()) else {
                    return err_reply("BAD_COMMAND");
                };
                if !volts.is_finite() || volts < 0.0 {
                    return err_reply("BAD_COMMAND");
                }
                match self.set_setpoint(pump, volts) {
                    Ok(()) => "OK".to_string(),
                    Err(fault) => err_reply(fault.code()),
                }
            }
            ["DISPENSE", ml] => {
                let Ok(ml) = ml.parse::<f64>() else {
                    return err_reply("BAD_COMMAND");
                };
                if !(ml.is_finite() && ml > 0.0) {
                    return err_reply("BAD_COMMAND");
                }
                if self.state.busy {
                    return err_reply("BUSY");
                }
                let r = self.dispense(ml);
                match r.faults.first() {
                    Some(fault) => err_reply(fault.code()),
                    None => format_done(&r),
                }
            }
            ["STATE"] => {
                let mut out = format!("STATE {}", u8::from(self.state.busy));
                for r in &self.state.reservoirs {
                    out.push_str(&format!(" {r:.3}"));
                }
                out
            }
            ["RESET"] => {
                self.reset();
                "OK".to_string()
            }
            _ => err_reply("BAD_COMMAND"),
        }
    }
}

fn err_reply(code: &str) -> String {
    format!("ERR {code}")
}

/// `DONE <secs> <v1> <v2> ...`
pub fn format_done(r: &DispenseResult) -> String {
    let mut out = format!("DONE {}", r.duration_s);
    for v in &r.volumes_ml {
        out.push_str(&format!(" {v:.3}"));
    }
    out
}

/// Protocol lines that drive the device through a program.
pub fn program_to_commands(prog: &PumpProgram) -> Vec<String> {
    prog.statements
        .iter()
        .map(|s| match s {
            Statement::Write { pump, setpoint } => format!("SET {pump} {setpoint}"),
            Statement::SetVolume { volume_ml } => format!("DISPENSE {volume_ml}"),
        })
        .collect()
}

/// A device shared between threads. Commands are serialized by a mutex;
/// `try_*` methods return [`SimError::DeviceBusy`] instead of waiting.
#[derive(Debug)]
pub struct SharedDevice {
    inner: Mutex<Device>,
}

impl SharedDevice {
    pub fn new(device: Device) -> Self {
        SharedDevice {
            inner: Mutex::new(device),
        }
    }

    /// Blocks until the device is free.
    pub fn lock(&self) -> MutexGuard<'_, Device> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn try_lock(&self) -> Result<MutexGuard<'_, Device>, SimError> {
        match self.inner.try_lock() {
            Ok(g) => Ok(g),
            Err(TryLockError::Poisoned(p)) => Ok(p.into_inner()),
            Err(TryLockError::WouldBlock) => Err(SimError::DeviceBusy),
        }
    }

    /// State snapshot; reports `busy` while another caller holds the device.
    pub fn snapshot(&self) -> Option<DeviceState> {
        self.try_lock().ok().map(|d| d.state().clone())
    }

    pub fn try_command(&self, line: &str) -> String {
        match self.try_lock() {
            Ok(mut d) => d.handle_command(line),
            Err(_) => err_reply("BUSY"),
        }
    }
}
