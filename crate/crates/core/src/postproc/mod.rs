//! Error correction, privacy amplification, key files and the one-time pad.

pub mod cascade;
pub mod distill;
pub mod field;
pub mod gf2;
pub mod keyfile;
pub mod otp;
pub mod rsh;
pub mod trevisan;
pub mod weak_design;

pub use cascade::{
    cascade_correct, reconcile, subset_parity, BlockRef, CascadeError, CascadeParams, LocalOracle, ParityOracle,
    Permutations, ReconcileReport,
};
pub use distill::{distill_alice, distill_bob, entropy_budget, BlockPlan, DistillConfig, DistillError, DistillOutcome};
pub use keyfile::{KeyFileError, KeyMaterial, KeyStage};
pub use otp::{Ciphertext, KeyPad, OtpError};
pub use trevisan::{trevisan_extract, ExtractorError, ExtractorParams, Trevisan};
pub use weak_design::{weak_design, DesignError, WeakDesign};
