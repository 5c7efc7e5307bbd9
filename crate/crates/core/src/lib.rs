//! Small-signal stability analysis of power systems with inverter-based
//! resources: network modeling, power flow, component-connection
//! linearization, eigen-analysis, active-learning stability manifolds and
//! controller tuning.

pub mod asm;
pub mod assembler;
pub mod classifier;
pub mod components;
pub mod error;
pub mod linalg;
pub mod netmodel;
pub mod powerflow;
pub mod render;
pub mod scalar;
pub mod stability;
pub mod study;
pub mod tuner;

pub use error::{Error, Result};
