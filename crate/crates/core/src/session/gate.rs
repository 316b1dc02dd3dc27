use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbortReason {
    Qber,
    Bell,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::Qber => "QBER",
            AbortReason::Bell => "Bell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Pass,
    Abort(AbortReason),
}

/// Thresholds applied to point estimates. When both fail, the Bell
/// violation is reported since it alone certifies entanglement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub max_qber: f64,
    pub min_s: f64,
    /// Cumulative key-sample bits required before the QBER test is applied.
    pub min_key_samples: u64,
    /// Cumulative counts required in every monitor correlator before the Bell test is applied.
    pub min_monitor_counts: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            max_qber: 0.11,
            min_s: 2.0,
            min_key_samples: 500,
            min_monitor_counts: 200,
        }
    }
}

impl GateConfig {
    pub fn check(&self, qber: Option<f64>, s: Option<f64>) -> GateDecision {
        if s.is_some_and(|s| s <= self.min_s) {
            return GateDecision::Abort(AbortReason::Bell);
        }
        if qber.is_some_and(|q| q >= self.max_qber) {
            return GateDecision::Abort(AbortReason::Qber);
        }
        GateDecision::Pass
    }
}

/// Gate with the default thresholds on complete point estimates.
pub fn security_gate(qber: f64, s: f64) -> GateDecision {
    GateConfig::default().check(Some(qber), Some(s))
}
