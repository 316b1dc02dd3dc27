//! Quantum channel on Alice's arm: static loss, fluctuating single-mode
//! coupling, propagation delay and slow polarization rotation.
//!
//! Coupling fluctuations follow a discretely sampled Ornstein–Uhlenbeck
//! process. Between query times `t₀ < t₁` the deviation evolves exactly as
//! `x₁ = ρ·x₀ + σ·√(1 − ρ²)·N(0,1)` with `ρ = exp(−(t₁ − t₀)/τ)`, so the
//! process is stationary with standard deviation `σ` and correlation time `τ`
//! no matter how irregular the sampling is. The coupling efficiency is the
//! mean plus the deviation, clipped to `[0, 1]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emitter::PhotonEvent;

/// Speed of light in vacuum, metres per picosecond.
const C_M_PER_PS: f64 = 299_792_458.0e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Fiber,
    FreeSpace,
    Ideal,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("{field} = {value} is outside its valid range")]
    Range { field: &'static str, value: f64 },
    #[error("unknown channel preset `{0}` (expected fiber-250m, freespace-270m or ideal)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub static_transmission: f64,
    pub coupling_mean: f64,
    pub coupling_sigma: f64,
    pub coupling_tau_s: f64,
    /// Residual polarization rotation rate, rad/s.
    #[serde(default)]
    pub drift_rate: f64,
    pub length_m: f64,
    /// Group index used for the propagation delay.
    #[serde(default = "default_group_index")]
    pub group_index: f64,
}

fn default_group_index() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelPreset {
    #[serde(rename = "fiber-250m")]
    Fiber250m,
    #[serde(rename = "freespace-270m")]
    FreeSpace270m,
    #[serde(rename = "ideal")]
    Ideal,
}

impl ChannelPreset {
    pub fn model(self) -> ChannelModel {
        match self {
            ChannelPreset::Fiber250m => ChannelModel::fiber_250m(),
            ChannelPreset::FreeSpace270m => ChannelModel::freespace_270m(),
            ChannelPreset::Ideal => ChannelModel::ideal(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelPreset::Fiber250m => "fiber-250m",
            ChannelPreset::FreeSpace270m => "freespace-270m",
            ChannelPreset::Ideal => "ideal",
        }
    }
}

impl fmt::Display for ChannelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelPreset {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fiber-250m" => Ok(ChannelPreset::Fiber250m),
            "freespace-270m" => Ok(ChannelPreset::FreeSpace270m),
            "ideal" => Ok(ChannelPreset::Ideal),
            other => Err(ChannelError::UnknownPreset(other.to_string())),
        }
    }
}

impl ChannelModel {
    /// 250 m of 780-HP fiber with 80 % transmission at 785 nm.
    pub fn fiber_250m() -> Self {
        Self {
            kind: ChannelKind::Fiber,
            static_transmission: 0.80,
            coupling_mean: 1.0,
            coupling_sigma: 0.0,
            coupling_tau_s: 0.1,
            drift_rate: 0.0,
            length_m: 250.0,
            group_index: 1.468,
        }
    }

    /// 270 m free-space link: 10 % atmospheric loss and 40 % mean
    /// single-mode recoupling at the receiver.
    pub fn freespace_270m() -> Self {
        Self {
            kind: ChannelKind::FreeSpace,
            static_transmission: 0.90,
            coupling_mean: 0.40,
            coupling_sigma: 0.10,
            coupling_tau_s: 0.1,
            drift_rate: 0.0,
            length_m: 270.0,
            group_index: 1.000_27,
        }
    }

    pub fn ideal() -> Self {
        Self {
            kind: ChannelKind::Ideal,
            static_transmission: 1.0,
            coupling_mean: 1.0,
            coupling_sigma: 0.0,
            coupling_tau_s: 1.0,
            drift_rate: 0.0,
            length_m: 0.0,
            group_index: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (field, value) in [
            ("static_transmission", self.static_transmission),
            ("coupling_mean", self.coupling_mean),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ChannelError::Range { field, value });
            }
        }
        let positive = [
            ("coupling_tau_s", self.coupling_tau_s, false),
            ("coupling_sigma", self.coupling_sigma, true),
            ("length_m", self.length_m, true),
            ("group_index", self.group_index, false),
        ];
        for (field, value, zero_ok) in positive {
            let ok = if zero_ok { value >= 0.0 } else { value > 0.0 };
            if !ok || !value.is_finite() {
                return Err(ChannelError::Range { field, value });
            }
        }
        if !self.drift_rate.is_finite() {
            return Err(ChannelError::Range {
                field: "drift_rate",
                value: self.drift_rate,
            });
        }
        Ok(())
    }

    pub fn propagation_delay_ps(&self) -> u64 {
        (self.length_m * self.group_index / C_M_PER_PS).round() as u64
    }

    /// Polarization rotation accumulated by time `t_s`, in `[0, π)`.
    pub fn rotation_at(&self, t_s: f64) -> f64 {
        (self.drift_rate * t_s).rem_euclid(PI)
    }
}

/// Outcome of sending one photon through the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub survives: bool,
    pub rotation: f64,
    /// Arrival time at the far end, ps.
    pub arrival_time: u64,
}

/// Stateful channel instance carrying the coupling process memory.
#[derive(Debug, Clone)]
pub struct ChannelState {
    model: ChannelModel,
    deviation: Option<f64>,
    last_t: f64,
}

impl ChannelState {
    pub fn new(model: ChannelModel) -> Self {
        Self {
            model,
            deviation: None,
            last_t: 0.0,
        }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    /// Coupling efficiency at time `t_s`. Queries are expected in
    /// non-decreasing time order; an earlier time is treated as a zero step.
    pub fn instantaneous_coupling<R: Rng + ?Sized>(&mut self, t_s: f64, rng: &mut R) -> f64 {
        let m = &self.model;
        if m.coupling_sigma == 0.0 {
            return m.coupling_mean.clamp(0.0, 1.0);
        }
        let z: f64 = StandardNormal.sample(rng);
        let x = match self.deviation {
            None => m.coupling_sigma * z,
            Some(prev) => {
                let dt = (t_s - self.last_t).max(0.0);
                let rho = (-dt / m.coupling_tau_s).exp();
                let innovation = (-(-2.0 * dt / m.coupling_tau_s).exp_m1()).sqrt();
                rho * prev + m.coupling_sigma * innovation * z
            }
        };
        self.deviation = Some(x);
        self.last_t = self.last_t.max(t_s);
        (m.coupling_mean + x).clamp(0.0, 1.0)
    }

    pub fn transmit<R: Rng + ?Sized>(&mut self, event: &PhotonEvent, rng: &mut R) -> Transmission {
        let t_s = event.true_time as f64 * 1e-12;
        let p = self.model.static_transmission * self.instantaneous_coupling(t_s, rng);
        let survives = p >= 1.0 || rng.random::<f64>() < p;
        Transmission {
            survives,
            rotation: self.model.rotation_at(t_s),
            arrival_time: event.true_time + self.model.propagation_delay_ps(),
        }
    }
}
