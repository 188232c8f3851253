//! Core of the chromactl color dispenser: turns color requests into pump
//! programs and runs them on a simulated three-pump EHD device.
//!
//! The pipeline is
//! [`request::parse_request`] → [`request::normalize_request`] →
//! [`planner::plan_mix`] → [`pumpcode::generate_program`] →
//! [`pumpcode::check_program`] → [`sim::Device::execute_program`].

pub mod calibrate;
pub mod color;
pub mod dataset;
pub mod llm;
pub mod planner;
pub mod pumpcode;
pub mod request;
pub mod sim;
pub mod translate;

pub use color::{Color, DensityVec, Modifier};
pub use planner::{MixConfig, MixPlan};
pub use pumpcode::{CheckReport, DeviceLimits, PumpProgram, Statement};
pub use request::{ColorRequest, NormalizedRequest};
pub use sim::{Device, DeviceState, DispenseResult, PumpModel};
