//! Single-photon detectors, the detector channel layout, and tag streams.

mod tagfile;

pub use tagfile::{
    read_tags, write_tag_csv, write_tags, TagFileError, TagFileHeader, TagReader, TagWriter, QTAG_MAGIC, QTAG_VERSION,
};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::qstate::Outcome;
use crate::scheme::{Basis, Party};
use crate::sync::ClockModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectionError {
    #[error("detector parameter `{name}` = {value} out of range")]
    Range { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: u64,
    pub dark_rate_hz: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.30,
            jitter_sigma_ps: 250.0,
            dead_time_ps: 25_000,
            dark_rate_hz: 200.0,
        }
    }
}

impl DetectorConfig {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            jitter_sigma_ps: 0.0,
            dead_time_ps: 0,
            dark_rate_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let checks = [
            ("efficiency", self.efficiency, (0.0..=1.0).contains(&self.efficiency)),
            ("jitter_sigma_ps", self.jitter_sigma_ps, self.jitter_sigma_ps >= 0.0 && self.jitter_sigma_ps.is_finite()),
            ("dark_rate_hz", self.dark_rate_hz, self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()),
        ];
        for (name, value, ok) in checks {
            if !ok {
                return Err(DetectionError::Range { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    /// Local clock, ps.
    pub timestamp: u64,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelInfo {
    pub party: Party,
    pub basis: Basis,
    pub outcome: Outcome,
}

/// Which detector (party, basis, outcome) each channel id belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMap {
    entries: Vec<ChannelInfo>,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self::standard()
    }
}

impl ChannelMap {
    /// Channels 0..6 are Alice's `Ak±, A0±, A1±`; 6..10 are Bob's `B0±, B1±`.
    pub fn standard() -> Self {
        let mut entries = Vec::with_capacity(10);
        for basis in Basis::ALICE.into_iter().chain(Basis::BOB) {
            for outcome in [Outcome::Plus, Outcome::Minus] {
                entries.push(ChannelInfo {
                    party: basis.party(),
                    basis,
                    outcome,
                });
            }
        }
        Self { entries }
    }

    pub fn channel_count(&self) -> u16 {
        self.entries.len() as u16
    }

    pub fn lookup(&self, channel: u8) -> Option<ChannelInfo> {
        self.entries.get(usize::from(channel)).copied()
    }

    pub fn channel_of(&self, basis: Basis, outcome: Outcome) -> u8 {
        self.entries
            .iter()
            .position(|e| e.basis == basis && e.outcome == outcome)
            .expect("every basis/outcome has a detector") as u8
    }

    pub fn channels_of(&self, party: Party) -> impl Iterator<Item = u8> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.party == party)
            .map(|(i, _)| i as u8)
    }
}

/// Per-channel dead-time memory. Tags must be fed in local-time order;
/// state persists across calls so consecutive packets stay consistent.
#[derive(Debug, Clone)]
pub struct DeadTimeFilter {
    dead_time_ps: u64,
    last: Vec<Option<u64>>,
}

impl DeadTimeFilter {
    pub fn new(dead_time_ps: u64) -> Self {
        Self {
            dead_time_ps,
            last: vec![None; 256],
        }
    }

    /// Accept or suppress one click. Two clicks on one channel are never
    /// closer than one ps, so timestamps stay strictly increasing.
    pub fn accept(&mut self, tag: TimeTag) -> bool {
        let slot = &mut self.last[usize::from(tag.channel)];
        match *slot {
            Some(prev) if tag.timestamp < prev + self.dead_time_ps.max(1) => false,
            _ => {
                *slot = Some(tag.timestamp);
                true
            }
        }
    }

    pub fn filter(&mut self, tags: &mut Vec<TimeTag>) {
        tags.retain(|&t| self.accept(t));
    }
}

/// One party's set of detectors sharing a clock.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    clock: ClockModel,
    dead: DeadTimeFilter,
    jitter: Option<Normal<f64>>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig, clock: ClockModel) -> Self {
        let jitter = (cfg.jitter_sigma_ps > 0.0).then(|| Normal::new(0.0, cfg.jitter_sigma_ps).expect("validated sigma"));
        Self {
            dead: DeadTimeFilter::new(cfg.dead_time_ps),
            cfg,
            clock,
            jitter,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &ClockModel {
        &self.clock
    }

    /// Efficiency and jitter only; the caller applies dead time after sorting.
    pub fn click<R: Rng + ?Sized>(&self, arrival_ps: u64, channel: u8, rng: &mut R) -> Option<TimeTag> {
        if !rng.random_bool(self.cfg.efficiency) {
            return None;
        }
        Some(self.stamp(arrival_ps, channel, rng))
    }

    fn stamp<R: Rng + ?Sized>(&self, true_ps: u64, channel: u8, rng: &mut R) -> TimeTag {
        let jittered = match &self.jitter {
            Some(n) => (true_ps as f64 + n.sample(rng)).round().max(0.0) as u64,
            None => true_ps,
        };
        TimeTag {
            timestamp: self.clock.localize(jittered),
            channel,
        }
    }

    /// Click for arrivals that are already in time order on this channel.
    pub fn detect<R: Rng + ?Sized>(&mut self, arrival_ps: u64, channel: u8, rng: &mut R) -> Option<TimeTag> {
        let tag = self.click(arrival_ps, channel, rng)?;
        self.dead.accept(tag).then_some(tag)
    }

    /// Dark clicks on `channel` over true time `[start, end)`, unfiltered.
    pub fn dark_counts<R: Rng + ?Sized>(&self, channel: u8, start_ps: u64, end_ps: u64, rng: &mut R) -> Vec<TimeTag> {
        let mut out = Vec::new();
        if self.cfg.dark_rate_hz <= 0.0 || end_ps <= start_ps {
            return out;
        }
        let gap = Exp::new(self.cfg.dark_rate_hz * 1e-12).expect("positive rate");
        let mut t = start_ps as f64;
        loop {
            t += gap.sample(rng);
            if t >= end_ps as f64 {
                return out;
            }
            out.push(self.stamp(t as u64, channel, rng));
        }
    }

    /// Merge signal clicks with dark counts on `channels` over `[start, end)`,
    /// sort, and apply dead time.
    pub fn finish_packet<R: Rng + ?Sized>(
        &mut self,
        mut clicks: Vec<TimeTag>,
        channels: impl IntoIterator<Item = u8>,
        start_ps: u64,
        end_ps: u64,
        rng: &mut R,
    ) -> Vec<TimeTag> {
        for ch in channels {
            clicks.extend(self.dark_counts(ch, start_ps, end_ps, rng));
        }
        clicks.sort_unstable();
        self.dead.filter(&mut clicks);
        clicks
    }
}

/// Dark counts of a single detector over `duration_s`, dead-time filtered.
pub fn dark_count_stream<R: Rng + ?Sized>(cfg: &DetectorConfig, channel: u8, duration_s: f64, rng: &mut R) -> Vec<TimeTag> {
    let mut det = Detector::new(*cfg, ClockModel::identity());
    det.finish_packet(Vec::new(), [channel], 0, (duration_s * 1e12) as u64, rng)
}
