//! End-to-end physical simulation: source, quantum channel, both detection
//! stations and their clocks, cut into acquisition packets.
//!
//! Photons are generated in true time and handed to each party as packets
//! of its own local time `[k·P, (k+1)·P)`. A packet is released only once
//! no later emission can still produce a tag inside it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelError, ChannelModel, ChannelState};
use crate::detection::{ChannelMap, DetectionError, Detector, DetectorConfig, TimeTag};
use crate::emitter::{effective_pair_state, Arm, EmitterConfig, EmitterError, PhotonEvent, PulseEmission, PulseTrain};
use crate::qstate::{Outcome, PairState};
use crate::scheme::{BasisScheme, Party, SchemeError};
use crate::session::Packet;
use crate::sync::{ClockModel, SyncError};

/// True-time slice simulated per step.
const STEP_PS: u64 = 50_000_000_000;

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("emitter: {0}")]
    Emitter(#[from] EmitterError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("detector: {0}")]
    Detection(#[from] DetectionError),
    #[error("clock: {0}")]
    Clock(#[from] SyncError),
    #[error("basis scheme: {0}")]
    Scheme(#[from] SchemeError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub clock: ClockModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub emitter: EmitterConfig,
    pub channel: ChannelModel,
    pub alice: StationConfig,
    pub bob: StationConfig,
    pub scheme: BasisScheme,
    pub map: ChannelMap,
    pub packet_duration_s: f64,
    pub packets: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        self.emitter.validate()?;
        self.channel.validate()?;
        self.scheme.validate()?;
        for s in [&self.alice, &self.bob] {
            s.detector.validate()?;
            s.clock.validate()?;
        }
        if !(self.packet_duration_s > 0.0 && self.packet_duration_s.is_finite()) {
            return Err(WorldError::Config("packet duration must be positive".into()));
        }
        Ok(())
    }
}

struct Station {
    detector: Detector,
    rng: ChaCha8Rng,
    channels: Vec<u8>,
    clicks: Vec<TimeTag>,
    /// Finished tags not yet handed out, sorted.
    pending: Vec<TimeTag>,
    /// Margin between a true time and the earliest local stamp it can still produce.
    guard_ps: u64,
    /// Fixed delay between emission and arrival at this station.
    delay_ps: u64,
}

impl Station {
    fn new(cfg: &StationConfig, party: Party, map: &ChannelMap, delay_ps: u64, rng: ChaCha8Rng) -> Self {
        let clock = &cfg.clock;
        let guard_ps = (10.0 * (cfg.detector.jitter_sigma_ps + clock.discipline_jitter_ps)) as u64 + 1_000_000;
        Self {
            detector: Detector::new(cfg.detector, clock.clone()),
            rng,
            channels: map.channels_of(party).collect(),
            clicks: Vec::new(),
            pending: Vec::new(),
            guard_ps,
            delay_ps,
        }
    }

    fn click(&mut self, arrival_ps: u64, channel: u8) {
        if let Some(tag) = self.detector.click(arrival_ps, channel, &mut self.rng) {
            self.clicks.push(tag);
        }
    }

    /// Close the true-time slice `[start, end)` of emissions.
    fn finish(&mut self, start_ps: u64, end_ps: u64) {
        let clicks = std::mem::take(&mut self.clicks);
        let tags = self.detector.finish_packet(
            clicks,
            self.channels.iter().copied(),
            start_ps + self.delay_ps,
            end_ps + self.delay_ps,
            &mut self.rng,
        );
        self.pending.extend(tags);
    }

    /// Every tag from emissions at or after `true_ps` has a local stamp at least this large.
    fn local_floor(&self, true_ps: u64) -> u64 {
        self.detector.clock().localize(true_ps + self.delay_ps).saturating_sub(self.guard_ps)
    }

    fn take_packet(&mut self, index: u64, start_ps: u64, end_ps: u64) -> Packet {
        self.pending.sort_unstable();
        let cut = self.pending.partition_point(|t| t.timestamp < end_ps);
        let tags: Vec<TimeTag> = self.pending.drain(..cut).collect();
        Packet { index, start_ps, end_ps, tags }
    }
}

/// Ground-truth counts over everything simulated so far, which runs a
/// little ahead of the packets already released.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorldStats {
    pub pulses_with_emission: u64,
    pub pairs: u64,
    pub pairs_transmitted: u64,
}

pub struct World {
    cfg: WorldConfig,
    state: PairState,
    train: PulseTrain<ChaCha8Rng>,
    peeked: Option<PulseEmission>,
    channel: ChannelState,
    channel_rng: ChaCha8Rng,
    pair_rng: ChaCha8Rng,
    alice: Station,
    bob: Station,
    simulated_until: u64,
    packet_ps: u64,
    next_packet: u64,
    stats: WorldStats,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> Outcome {
    if rng.random::<bool>() {
        Outcome::Plus
    } else {
        Outcome::Minus
    }
}

impl World {
    pub fn new(cfg: WorldConfig, seed: u64) -> Result<Self, WorldError> {
        cfg.validate()?;
        let state = effective_pair_state(&cfg.emitter)?;
        let train = PulseTrain::new(&cfg.emitter, u64::MAX, stream(seed, 1));
        let channel = ChannelState::new(cfg.channel.clone());
        let delay = cfg.channel.propagation_delay_ps();
        let alice = Station::new(&cfg.alice, Party::Alice, &cfg.map, delay, stream(seed, 3));
        let bob = Station::new(&cfg.bob, Party::Bob, &cfg.map, 0, stream(seed, 4));
        Ok(Self {
            packet_ps: (cfg.packet_duration_s * 1e12).round() as u64,
            state,
            train,
            peeked: None,
            channel,
            channel_rng: stream(seed, 2),
            pair_rng: stream(seed, 5),
            alice,
            bob,
            simulated_until: 0,
            next_packet: 0,
            stats: WorldStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn stats(&self) -> WorldStats {
        self.stats
    }

    /// The pair state before any channel rotation.
    pub fn pair_state(&self) -> PairState {
        self.state
    }

    fn emit(&mut self, e: &PulseEmission) {
        self.stats.pulses_with_emission += 1;
        let scheme = &self.cfg.scheme;
        let map = &self.cfg.map;
        if let Some((xx, x)) = e.pair {
            self.stats.pairs += 1;
            let tx = self.channel.transmit(&x, &mut self.channel_rng);
            let bob_basis = scheme.assign_basis(Party::Bob, &mut self.bob.rng);
            if tx.survives {
                self.stats.pairs_transmitted += 1;
                let alice_basis = scheme.assign_basis(Party::Alice, &mut self.alice.rng);
                let (sa, sb) = self.state.with_rotation(tx.rotation).sample_outcomes(
                    scheme.angle(alice_basis),
                    scheme.angle(bob_basis),
                    &mut self.pair_rng,
                );
                self.alice.click(tx.arrival_time, map.channel_of(alice_basis, sa));
                self.bob.click(xx.true_time, map.channel_of(bob_basis, sb));
            } else {
                let sb = coin(&mut self.pair_rng);
                self.bob.click(xx.true_time, map.channel_of(bob_basis, sb));
            }
        }
        for p in &e.extras {
            self.uncorrelated(p);
        }
    }

    fn uncorrelated(&mut self, p: &PhotonEvent) {
        let scheme = &self.cfg.scheme;
        let map = &self.cfg.map;
        match p.arm {
            Arm::XX => {
                let basis = scheme.assign_basis(Party::Bob, &mut self.bob.rng);
                let ch = map.channel_of(basis, coin(&mut self.pair_rng));
                self.bob.click(p.true_time, ch);
            }
            Arm::X => {
                let tx = self.channel.transmit(p, &mut self.channel_rng);
                if tx.survives {
                    let basis = scheme.assign_basis(Party::Alice, &mut self.alice.rng);
                    let ch = map.channel_of(basis, coin(&mut self.pair_rng));
                    self.alice.click(tx.arrival_time, ch);
                }
            }
        }
    }

    /// Simulate emissions up to true time `end_ps`.
    fn advance(&mut self, end_ps: u64) {
        loop {
            let e = match self.peeked.take().or_else(|| self.train.next()) {
                Some(e) => e,
                None => break,
            };
            if e.pulse_time >= end_ps {
                self.peeked = Some(e);
                break;
            }
            self.emit(&e);
        }
        self.alice.finish(self.simulated_until, end_ps);
        self.bob.finish(self.simulated_until, end_ps);
        self.simulated_until = end_ps;
    }

    /// The next packet pair `(alice, bob)`, or `None` after the configured count.
    pub fn next_packets(&mut self) -> Option<(Packet, Packet)> {
        if self.next_packet >= self.cfg.packets {
            return None;
        }
        let k = self.next_packet;
        let (start, end) = (k * self.packet_ps, (k + 1) * self.packet_ps);
        while self.alice.local_floor(self.simulated_until) < end || self.bob.local_floor(self.simulated_until) < end {
            let step = STEP_PS.min(self.packet_ps / 4).max(1);
            self.advance(self.simulated_until + step);
        }
        self.next_packet += 1;
        Some((self.alice.take_packet(k, start, end), self.bob.take_packet(k, start, end)))
    }
}

impl Iterator for World {
    type Item = (Packet, Packet);

    fn next(&mut self) -> Option<Self::Item> {
        self.next_packets()
    }
}

/// Hanbury Brown–Twiss measurement of one source arm: photons split 50:50
/// onto detector channels 0 and 1 of a single time tagger.
pub fn hbt_tags(emitter: &EmitterConfig, arm: Arm, detector: DetectorConfig, n_pulses: u64, seed: u64) -> Result<Vec<TimeTag>, WorldError> {
    emitter.validate()?;
    detector.validate()?;
    let mut det = Detector::new(detector, ClockModel::identity());
    let mut rng = stream(seed, 7);
    let mut clicks = Vec::new();
    let mut end = 0;
    for e in PulseTrain::new(emitter, n_pulses, stream(seed, 6)) {
        end = e.pulse_time;
        for p in e.photons().filter(|p| p.arm == arm) {
            let ch = u8::from(rng.random::<bool>());
            if let Some(tag) = det.click(p.true_time, ch, &mut rng) {
                clicks.push(tag);
            }
        }
    }
    let end = end.max((n_pulses as f64 * emitter.pulse_period_ps()) as u64);
    Ok(det.finish_packet(clicks, [0, 1], 0, end, &mut rng))
}
