//! Per-packet sifting and monitoring, run as two cooperating state machines.
//!
//! Bob publishes his packet timestamps; Alice recovers the clock offset,
//! matches coincidences and announces them by Bob's tag index. Both publish
//! basis labels, Alice requests Bob's outcomes for all monitor rounds plus a
//! random fraction of key rounds, and answers with the packet metrics.

use bitvec::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::estimate::{estimate_chsh, estimate_qber, CorrelatorCounts};
use super::gate::{AbortReason, GateConfig, GateDecision};
use super::metrics::SessionMetrics;
use super::transport::{Transport, TransportError};
use super::wire::{Message, PROTOCOL_VERSION};
use crate::detection::{ChannelMap, TimeTag};
use crate::qstate::Outcome;
use crate::scheme::{classify, Basis, BasisScheme, Party, RoundUse};
use crate::sync::{match_pairs, track_offset, SyncConfig};

/// Tags of one acquisition packet in the owner's local time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub index: u64,
    pub start_ps: u64,
    pub end_ps: u64,
    pub tags: Vec<TimeTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub packet_duration_s: f64,
    /// Fraction of key rounds disclosed for QBER estimation.
    pub qber_sample_fraction: f64,
    pub gate: GateConfig,
    pub sync: SyncConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            packet_duration_s: 1.2,
            qber_sample_fraction: 0.1,
            gate: GateConfig::default(),
            sync: SyncConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.packet_duration_s > 0.0 && self.packet_duration_s.is_finite()) {
            return Err("packet_duration_s must be positive".into());
        }
        if !(0.0..1.0).contains(&self.qber_sample_fraction) {
            return Err("qber_sample_fraction must lie in [0, 1)".into());
        }
        self.sync.validate().map_err(|e| e.to_string())
    }
}

/// Everything a role needs besides its tag source and transport.
#[derive(Debug, Clone)]
pub struct SessionParams {
    pub session_id: String,
    pub scheme: BasisScheme,
    pub config: SessionConfig,
    pub map: ChannelMap,
    /// Seeds Alice's choice of disclosed key rounds.
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub bits: BitVec<u8, Lsb0>,
    /// `(packet index, bits contributed)` in order.
    pub packets: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub role: Party,
    pub key: SiftedKey,
    pub metrics: Vec<SessionMetrics>,
    pub abort: Option<AbortReason>,
    /// Cumulative QBER from all disclosed key rounds.
    pub qber_estimate: Option<f64>,
}

impl SessionOutcome {
    fn new(role: Party) -> Self {
        Self {
            role,
            key: SiftedKey::default(),
            metrics: Vec::new(),
            abort: None,
            qber_estimate: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// A failed session together with the key material gathered before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct SessionFailure {
    #[source]
    pub error: SessionError,
    pub partial: Box<SessionOutcome>,
}

fn unexpected(expected: &str, got: &Message) -> SessionError {
    SessionError::Protocol(format!("expected {expected}, received {}", got.kind()))
}

fn handshake<T: Transport>(role: Party, params: &SessionParams, t: &mut T) -> Result<(), SessionError> {
    let scheme_hash = params.scheme.digest();
    t.send(&Message::Hello {
        version: PROTOCOL_VERSION,
        session_id: params.session_id.clone(),
        scheme_hash: scheme_hash.clone(),
        role,
    })?;
    match t.recv()? {
        Message::Hello {
            version,
            session_id,
            scheme_hash: peer_hash,
            role: peer_role,
        } => {
            if version != PROTOCOL_VERSION {
                return Err(SessionError::Handshake(format!("peer speaks version {version}, expected {PROTOCOL_VERSION}")));
            }
            if session_id != params.session_id {
                return Err(SessionError::Handshake(format!("session id `{session_id}` differs from `{}`", params.session_id)));
            }
            if peer_hash != scheme_hash {
                return Err(SessionError::Handshake("basis scheme digests differ".into()));
            }
            if peer_role != role.peer() {
                return Err(SessionError::Handshake(format!("peer claims role {peer_role}")));
            }
            Ok(())
        }
        other => Err(unexpected("HELLO", &other)),
    }
}

fn label(map: &ChannelMap, tag: &TimeTag) -> Result<(Basis, Outcome), SessionError> {
    map.lookup(tag.channel)
        .map(|i| (i.basis, i.outcome))
        .ok_or_else(|| SessionError::Protocol(format!("tag on unmapped channel {}", tag.channel)))
}

fn fail(error: SessionError, partial: SessionOutcome) -> SessionFailure {
    SessionFailure {
        error,
        partial: Box::new(partial),
    }
}

/// Cumulative statistics the gate acts on.
#[derive(Default)]
struct Totals {
    key_sample: CorrelatorCounts,
    monitor: [CorrelatorCounts; 4],
}

impl Totals {
    fn qber(&self, gate: &GateConfig) -> Option<f64> {
        (self.key_sample.total() >= gate.min_key_samples)
            .then(|| estimate_qber(&self.key_sample).ok())
            .flatten()
    }

    fn s(&self, gate: &GateConfig) -> Option<f64> {
        self.monitor
            .iter()
            .all(|c| c.total() >= gate.min_monitor_counts)
            .then(|| estimate_chsh(&self.monitor).ok().map(|e| e.s))
            .flatten()
    }
}

pub fn run_alice<T, I>(params: &SessionParams, packets: I, mut t: T) -> Result<SessionOutcome, SessionFailure>
where
    T: Transport,
    I: IntoIterator<Item = Packet>,
{
    let mut out = SessionOutcome::new(Party::Alice);
    if let Err(e) = handshake(Party::Alice, params, &mut t) {
        return Err(fail(e, out));
    }
    let mut packets = packets.into_iter();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut totals = Totals::default();
    loop {
        let msg = match t.recv() {
            Ok(m) => m,
            Err(e) => return Err(fail(e.into(), out)),
        };
        match msg {
            Message::TagDigest { packet, timestamps } => {
                let Some(own) = packets.next() else {
                    return Err(fail(SessionError::Protocol(format!("peer sent packet {packet} after local data ended")), out));
                };
                if own.index != packet {
                    return Err(fail(SessionError::Protocol(format!("packet {packet} received while at {}", own.index)), out));
                }
                match alice_packet(params, &own, &timestamps, &mut rng, &mut totals, &mut out, &mut t) {
                    Ok(Some(reason)) => {
                        out.abort = Some(reason);
                        if let Err(e) = t.send(&Message::Abort { reason }) {
                            return Err(fail(e.into(), out));
                        }
                        return Ok(out);
                    }
                    Ok(None) => {}
                    Err(e) => return Err(fail(e, out)),
                }
            }
            Message::KeyDone { bits, .. } => {
                if let Some(extra) = packets.next() {
                    return Err(fail(SessionError::Protocol(format!("peer finished before packet {}", extra.index)), out));
                }
                let own = out.key.bits.len() as u64;
                out.qber_estimate = estimate_qber(&totals.key_sample).ok();
                if let Err(e) = t.send(&Message::KeyDone {
                    bits: own,
                    qber: out.qber_estimate,
                }) {
                    return Err(fail(e.into(), out));
                }
                if bits != own {
                    return Err(fail(SessionError::Protocol(format!("sifted lengths differ: {own} vs {bits}")), out));
                }
                return Ok(out);
            }
            Message::Abort { reason } => {
                out.abort = Some(reason);
                return Ok(out);
            }
            other => return Err(fail(unexpected("TAG_DIGEST or KEY_DONE", &other), out)),
        }
    }
}

fn alice_packet<T: Transport>(
    params: &SessionParams,
    own: &Packet,
    bob_ts: &[u64],
    rng: &mut ChaCha8Rng,
    totals: &mut Totals,
    out: &mut SessionOutcome,
    t: &mut T,
) -> Result<Option<AbortReason>, SessionError> {
    let cfg = &params.config;
    let alice_ts: Vec<u64> = own.tags.iter().map(|x| x.timestamp).collect();
    let (pairs, offset) = if alice_ts.is_empty() || bob_ts.is_empty() {
        (Vec::new(), None)
    } else {
        match track_offset(&alice_ts, bob_ts, &cfg.sync) {
            Ok(track) => (
                match_pairs(&alice_ts, bob_ts, |x| track.offset_at(x), cfg.sync.window_ps),
                Some(track.coarse.offset_ps),
            ),
            Err(e) => {
                log::warn!("packet {}: {e}", own.index);
                (Vec::new(), None)
            }
        }
    };
    t.send(&Message::Coincidences {
        packet: own.index,
        bob_indices: pairs.iter().map(|&(_, j)| j as u32).collect(),
        offset_ps: offset,
    })?;

    let mut alice_labels = Vec::with_capacity(pairs.len());
    for &(i, _) in &pairs {
        alice_labels.push(label(&params.map, &own.tags[i])?);
    }
    t.send(&Message::Bases {
        packet: own.index,
        bases: alice_labels.iter().map(|l| l.0).collect(),
    })?;
    let bob_bases = match t.recv()? {
        Message::Bases { packet, bases } if packet == own.index && bases.len() == pairs.len() => bases,
        Message::Bases { .. } => return Err(SessionError::Protocol("BASES does not match the coincidence list".into())),
        other => return Err(unexpected("BASES", &other)),
    };

    let uses: Vec<RoundUse> = alice_labels.iter().zip(&bob_bases).map(|(a, &b)| classify(a.0, b)).collect();
    let mut sampled = vec![false; uses.len()];
    let mut ids = Vec::new();
    for (id, u) in uses.iter().enumerate() {
        let disclose = match u {
            RoundUse::Key => {
                sampled[id] = rng.random_bool(cfg.qber_sample_fraction);
                sampled[id]
            }
            RoundUse::Monitor(_) => true,
            RoundUse::Discard => false,
        };
        if disclose {
            ids.push(id as u32);
        }
    }
    t.send(&Message::SampleRequest {
        packet: own.index,
        ids: ids.clone(),
    })?;
    let bob_outcomes = match t.recv()? {
        Message::QberSample { packet, ids: got, outcomes } if packet == own.index && got == ids && outcomes.len() == ids.len() => {
            outcomes
        }
        Message::QberSample { .. } => return Err(SessionError::Protocol("QBER_SAMPLE does not match the request".into())),
        other => return Err(unexpected("QBER_SAMPLE", &other)),
    };

    let mut key_sample = CorrelatorCounts::default();
    let mut monitor = [CorrelatorCounts::default(); 4];
    for (&id, &b) in ids.iter().zip(&bob_outcomes) {
        let a = alice_labels[id as usize].1;
        match uses[id as usize] {
            RoundUse::Key => key_sample.record(a, b),
            RoundUse::Monitor(k) => monitor[k].record(a, b),
            RoundUse::Discard => unreachable!("discarded rounds are never disclosed"),
        }
    }
    totals.key_sample.merge(&key_sample);
    for (acc, c) in totals.monitor.iter_mut().zip(&monitor) {
        acc.merge(c);
    }
    let cumulative_qber = totals.qber(&cfg.gate);
    let cumulative_s = totals.s(&cfg.gate);
    let decision = cfg.gate.check(cumulative_qber, cumulative_s);

    let key_coincidences = uses.iter().filter(|&&u| u == RoundUse::Key).count() as u64;
    let aborted = match decision {
        GateDecision::Pass => None,
        GateDecision::Abort(r) => Some(r),
    };
    let mut sifted = 0u64;
    if aborted.is_none() {
        for (id, u) in uses.iter().enumerate() {
            if *u == RoundUse::Key && !sampled[id] {
                out.key.bits.push(alice_labels[id].1.to_bit());
                sifted += 1;
            }
        }
        out.key.packets.push((own.index, sifted));
    }
    let chsh = estimate_chsh(&monitor).ok();
    let metrics = SessionMetrics {
        packet_index: own.index,
        t: (own.index + 1) as f64 * cfg.packet_duration_s,
        duration_s: cfg.packet_duration_s,
        qber: estimate_qber(&key_sample).ok(),
        s_value: chsh.map(|c| c.s),
        s_err: chsh.map(|c| c.s_err),
        raw_coincidences: pairs.len() as u64,
        key_coincidences,
        sifted_bits: sifted,
        key_sample,
        monitor,
        offset_ps: offset,
        cumulative_qber,
        cumulative_s,
        aborted,
    };
    t.send(&Message::Metrics {
        metrics: Box::new(metrics.clone()),
    })?;
    log::info!(
        "packet {}: {} coincidences, {} sifted bits, QBER {:?}, S {:?}",
        metrics.packet_index,
        metrics.raw_coincidences,
        metrics.sifted_bits,
        metrics.cumulative_qber,
        metrics.cumulative_s
    );
    out.metrics.push(metrics);
    out.qber_estimate = estimate_qber(&totals.key_sample).ok();
    Ok(aborted)
}

pub fn run_bob<T, I>(params: &SessionParams, packets: I, mut t: T) -> Result<SessionOutcome, SessionFailure>
where
    T: Transport,
    I: IntoIterator<Item = Packet>,
{
    let mut out = SessionOutcome::new(Party::Bob);
    if let Err(e) = handshake(Party::Bob, params, &mut t) {
        return Err(fail(e, out));
    }
    for own in packets {
        match bob_packet(params, &own, &mut out, &mut t) {
            Ok(true) => return Ok(out),
            Ok(false) => {}
            Err(e) => return Err(fail(e, out)),
        }
    }
    let own = out.key.bits.len() as u64;
    let reply = t.send(&Message::KeyDone { bits: own, qber: None }).and_then(|()| t.recv());
    match reply {
        Ok(Message::KeyDone { bits, qber }) if bits == own => {
            out.qber_estimate = qber;
            Ok(out)
        }
        Ok(Message::KeyDone { bits, .. }) => Err(fail(SessionError::Protocol(format!("sifted lengths differ: {own} vs {bits}")), out)),
        Ok(Message::Abort { reason }) => {
            out.abort = Some(reason);
            Ok(out)
        }
        Ok(other) => Err(fail(unexpected("KEY_DONE", &other), out)),
        Err(e) => Err(fail(e.into(), out)),
    }
}

/// Returns `true` when Alice aborted the session.
fn bob_packet<T: Transport>(params: &SessionParams, own: &Packet, out: &mut SessionOutcome, t: &mut T) -> Result<bool, SessionError> {
    t.send(&Message::TagDigest {
        packet: own.index,
        timestamps: own.tags.iter().map(|x| x.timestamp).collect(),
    })?;
    let bob_idx = match t.recv()? {
        Message::Coincidences { packet, bob_indices, .. } if packet == own.index => bob_indices,
        Message::Abort { reason } => {
            out.abort = Some(reason);
            return Ok(true);
        }
        other => return Err(unexpected("COINCIDENCES", &other)),
    };
    let mut bob_labels = Vec::with_capacity(bob_idx.len());
    for &j in &bob_idx {
        let tag = own
            .tags
            .get(j as usize)
            .ok_or_else(|| SessionError::Protocol(format!("coincidence refers to missing tag {j}")))?;
        bob_labels.push(label(&params.map, tag)?);
    }
    let alice_bases = match t.recv()? {
        Message::Bases { packet, bases } if packet == own.index && bases.len() == bob_idx.len() => bases,
        other => return Err(unexpected("BASES", &other)),
    };
    t.send(&Message::Bases {
        packet: own.index,
        bases: bob_labels.iter().map(|l| l.0).collect(),
    })?;
    let ids = match t.recv()? {
        Message::SampleRequest { packet, ids } if packet == own.index => ids,
        other => return Err(unexpected("SAMPLE_REQUEST", &other)),
    };
    let mut disclosed = vec![false; bob_labels.len()];
    let mut outcomes = Vec::with_capacity(ids.len());
    for &id in &ids {
        let l = bob_labels
            .get(id as usize)
            .ok_or_else(|| SessionError::Protocol(format!("sample id {id} out of range")))?;
        disclosed[id as usize] = true;
        outcomes.push(l.1);
    }
    t.send(&Message::QberSample {
        packet: own.index,
        ids,
        outcomes,
    })?;
    let metrics = match t.recv()? {
        Message::Metrics { metrics } if metrics.packet_index == own.index => *metrics,
        other => return Err(unexpected("METRICS", &other)),
    };
    if let Some(reason) = metrics.aborted {
        out.metrics.push(metrics);
        out.abort = Some(reason);
        match t.recv()? {
            Message::Abort { .. } => return Ok(true),
            other => return Err(unexpected("ABORT", &other)),
        }
    }
    let mut sifted = 0u64;
    for (id, (a, b)) in alice_bases.iter().zip(&bob_labels).enumerate() {
        if classify(*a, b.0) == RoundUse::Key && !disclosed[id] {
            out.key.bits.push(b.1.to_bit());
            sifted += 1;
        }
    }
    if sifted != metrics.sifted_bits {
        return Err(SessionError::Protocol(format!(
            "packet {}: {sifted} key bits locally, peer reports {}",
            own.index, metrics.sifted_bits
        )));
    }
    out.key.packets.push((own.index, sifted));
    out.metrics.push(metrics);
    Ok(false)
}

pub fn run_session<T, I>(role: Party, params: &SessionParams, packets: I, t: T) -> Result<SessionOutcome, SessionFailure>
where
    T: Transport,
    I: IntoIterator<Item = Packet>,
{
    match role {
        Party::Alice => run_alice(params, packets, t),
        Party::Bob => run_bob(params, packets, t),
    }
}
