//! Pump calibration: voltage sweeps against a device and a closed-form fit
//! of the flow law.
//!
//! Under `Q = k (V - V0)^2`, `sqrt(Q)` is linear in `V` above onset with
//! slope `sqrt(k)` and root `V0`, so an ordinary least-squares line through
//! `(V, sqrt(Q))` recovers both parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Device, Fault, PumpModel};

/// Seconds each sweep point runs for.
pub const SWEEP_POINT_S: f64 = 2.0;
pub const DEFAULT_SWEEP_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("device is busy")]
    DeviceBusy,
    #[error("reservoir of pump {0} ran low during the sweep")]
    ReservoirLow(usize),
    #[error("no pump {0} on this device")]
    NoSuchPump(usize),
    #[error("setpoint {0} V is outside the pump's range")]
    BadSetpoint(f64),
    #[error("need at least two samples with positive flow, got {0}")]
    InsufficientData(usize),
    #[error("fit has no positive slope")]
    DegenerateFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub setpoint: f64,
    pub measured_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: PumpModel,
    /// RMS of flow residuals over the samples used, ml/s.
    pub rms_residual: f64,
    pub samples_used: usize,
}

/// `points` setpoints evenly spaced over `[v_max / 3, 0.95 v_max]`.
pub fn default_sweep(v_max: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = (v_max / 3.0, 0.95 * v_max);
    if points <= 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Run `pump` alone at each setpoint for [`SWEEP_POINT_S`] and record the
/// measured flow. The device is reset afterwards.
pub fn run_sweep(pump: usize, setpoints: &[f64], device: &mut Device) -> Result<Vec<SweepSample>, CalibrationError> {
    if device.state().busy {
        return Err(CalibrationError::DeviceBusy);
    }
    if pump == 0 || pump > device.pump_count() {
        return Err(CalibrationError::NoSuchPump(pump));
    }
    let v_max = device.models()[pump - 1].v_max;
    if let Some(&bad) = setpoints.iter().find(|v| !(v.is_finite() && **v >= 0.0 && **v <= v_max)) {
        return Err(CalibrationError::BadSetpoint(bad));
    }

    device.reset();
    let mut samples = Vec::with_capacity(setpoints.len());
    for &v in setpoints {
        device
            .set_setpoint(pump, v)
            .map_err(|_| CalibrationError::BadSetpoint(v))?;
        let r = device.run_for(SWEEP_POINT_S);
        if let Some(Fault::ReservoirEmpty { pump }) = r.faults.first() {
            device.reset();
            return Err(CalibrationError::ReservoirLow(*pump));
        }
        samples.push(SweepSample {
            setpoint: v,
            measured_flow: r.volumes_ml[pump - 1] / r.duration_s,
        });
    }
    device.reset();
    Ok(samples)
}

/// Least-squares fit of `sqrt(Q)` against `V` over positive-flow samples.
/// The fitted onset is clamped into `[0, v_max)`.
pub fn fit_model(samples: &[SweepSample], v_max: f64) -> Result<FitResult, CalibrationError> {
    let used: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.measured_flow > 0.0)
        .map(|s| (s.setpoint, s.measured_flow.sqrt()))
        .collect();
    let n = used.len();
    if n < 2 {
        return Err(CalibrationError::InsufficientData(n));
    }
    let nf = n as f64;
    let mean_x = used.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = used.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = used.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(CalibrationError::DegenerateFit);
    }
    let slope = sxy / sxx;
    if !(slope.is_finite() && slope > 0.0) {
        return Err(CalibrationError::DegenerateFit);
    }
    let intercept = mean_y - slope * mean_x;
    let v0 = (-intercept / slope).clamp(0.0, v_max * (1.0 - f64::EPSILON));
    let model = PumpModel {
        k: slope * slope,
        v0,
        v_max,
        ..PumpModel::default()
    };
    let sq: f64 = samples
        .iter()
        .filter(|s| s.measured_flow > 0.0)
        .map(|s| {
            let above = (s.setpoint - v0).max(0.0);
            (s.measured_flow - model.k * above * above).powi(2)
        })
        .sum();
    Ok(FitResult {
        model,
        rms_residual: (sq / nf).sqrt(),
        samples_used: n,
    })
}

/// Sweep one pump with the default schedule and fit its model. The fitted
/// model keeps the device's noise level.
pub fn calibrate_pump(pump: usize, device: &mut Device, points: usize) -> Result<FitResult, CalibrationError> {
    if pump == 0 || pump > device.pump_count() {
        return Err(CalibrationError::NoSuchPump(pump));
    }
    let current = device.models()[pump - 1];
    let samples = run_sweep(pump, &default_sweep(current.v_max, points), device)?;
    let mut fit = fit_model(&samples, current.v_max)?;
    fit.model.noise_sigma = current.noise_sigma;
    Ok(fit)
}
