//! Simulation and post-processing for entanglement-based QKD with a
//! quantum-dot photon-pair source.

pub mod analyze;
pub mod calibrate;
pub mod channel;
pub mod config;
pub mod detection;
pub mod emitter;
pub mod postproc;
pub mod qstate;
pub mod runner;
pub mod scheme;
pub mod session;
pub mod sim;
pub mod sync;
