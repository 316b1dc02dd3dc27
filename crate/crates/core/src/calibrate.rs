//! Fit the source brightness to a target singles rate at the first
//! single-mode fiber, then confirm the fit by simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emitter::{Arm, EmitterConfig, EmitterError, PulseTrain};

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("target {target_cps} cps is unreachable: {constraint} limits the singles rate to {max_cps:.0} cps")]
    Unreachable {
        target_cps: f64,
        max_cps: f64,
        constraint: &'static str,
    },
    #[error("invalid target rate {0}")]
    Target(f64),
    #[error(transparent)]
    Emitter(#[from] EmitterError),
    #[error("simulated {simulated_cps:.0} cps misses the {target_cps} cps target by more than {tolerance}")]
    Verification {
        target_cps: f64,
        simulated_cps: f64,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_cps: f64,
    pub pair_prob: f64,
    /// Cascade probability per pulse, the combined pair and collection efficiency.
    pub efficiency_product: f64,
    pub simulated_cps: f64,
    pub simulated_s: f64,
}

/// Relative tolerance of the simulated rate.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

/// Solve `rep · p · prep · (1 + ½ g²_X) = target` for `p ≤ max_pair_prob`.
pub fn fit_pair_prob(target_cps: f64, cfg: &EmitterConfig, max_pair_prob: f64) -> Result<f64, CalibrationError> {
    cfg.validate()?;
    if !(target_cps >= 0.0 && target_cps.is_finite()) {
        return Err(CalibrationError::Target(target_cps));
    }
    if target_cps == 0.0 {
        return Ok(0.0);
    }
    let per_unit = cfg.rep_rate_hz * cfg.prep_fidelity * (1.0 + 0.5 * cfg.g2_x);
    let limit = max_pair_prob.clamp(0.0, 1.0);
    if per_unit == 0.0 {
        return Err(CalibrationError::Unreachable {
            target_cps,
            max_cps: 0.0,
            constraint: "prep_fidelity",
        });
    }
    let p = target_cps / per_unit;
    if p > limit {
        return Err(CalibrationError::Unreachable {
            target_cps,
            max_cps: per_unit * limit,
            constraint: if limit < 1.0 { "max_pair_prob" } else { "rep_rate_hz" },
        });
    }
    Ok(p)
}

/// Fit, then count X-arm photons over `verify_s` simulated seconds.
pub fn calibrate(target_cps: f64, cfg: &EmitterConfig, max_pair_prob: f64, verify_s: f64, seed: u64) -> Result<Calibration, CalibrationError> {
    let pair_prob = fit_pair_prob(target_cps, cfg, max_pair_prob)?;
    let fitted = EmitterConfig { pair_prob, ..cfg.clone() };
    let pulses = (verify_s * fitted.rep_rate_hz).round() as u64;
    let photons: usize = PulseTrain::new(&fitted, pulses, ChaCha8Rng::seed_from_u64(seed))
        .map(|e| e.photons().filter(|p| p.arm == Arm::X).count())
        .sum();
    let simulated_s = pulses as f64 / fitted.rep_rate_hz;
    let simulated_cps = if simulated_s > 0.0 { photons as f64 / simulated_s } else { 0.0 };
    let off = if target_cps > 0.0 {
        (simulated_cps / target_cps - 1.0).abs()
    } else {
        simulated_cps
    };
    if off > CALIBRATION_TOLERANCE {
        return Err(CalibrationError::Verification {
            target_cps,
            simulated_cps,
            tolerance: CALIBRATION_TOLERANCE,
        });
    }
    Ok(Calibration {
        target_cps,
        pair_prob,
        efficiency_product: fitted.cascade_prob(),
        simulated_cps,
        simulated_s,
    })
}
