//! Reconciliation and privacy amplification over the classical channel.
//! Bob drives Cascade; Alice answers, then picks the extractor seed.

use std::ops::Range;

use bitvec::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cascade::{cascade_correct, CascadeError, CascadeParams, LocalOracle, ParityOracle, ReconcileReport};
use super::keyfile::{pack_bits, KeyMaterial, KeyStage};
use super::trevisan::{ExtractorError, ExtractorParams, Trevisan};
use crate::session::{binary_entropy, Message, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Extractor error per block.
    pub epsilon: f64,
    pub block_bits: usize,
    /// Finite-size allowance subtracted from the entropy estimate.
    pub margin_bits: f64,
    /// QBER assumed when the session produced no estimate.
    pub fallback_qber: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            block_bits: 1 << 16,
            margin_bits: 64.0,
            fallback_qber: 0.05,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Extractor(#[from] ExtractorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub reconciled: KeyMaterial,
    pub extracted: KeyMaterial,
    pub report: ReconcileReport,
    pub min_entropy: f64,
}

/// `n·(1 − h(Q)) − disclosed − margin`.
pub fn entropy_budget(n: usize, qber: f64, disclosed: u64, margin: f64) -> f64 {
    n as f64 * (1.0 - binary_entropy(qber)) - disclosed as f64 - margin
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPlan {
    pub blocks: Vec<(Range<usize>, usize)>,
    pub seed_bits: usize,
}

impl BlockPlan {
    /// Split the input into blocks and share the entropy pro rata. Blocks
    /// too short to yield a bit are dropped.
    pub fn new(n: usize, min_entropy: f64, cfg: &DistillConfig) -> Result<Self, ExtractorError> {
        let mut blocks = Vec::new();
        let mut seed_bits = 0;
        if n == 0 || min_entropy <= 0.0 {
            return Ok(Self { blocks, seed_bits });
        }
        let mut start = 0;
        while start < n {
            let end = (start + cfg.block_bits.max(1)).min(n);
            let k = min_entropy * (end - start) as f64 / n as f64;
            let m = ExtractorParams::max_output(k, cfg.epsilon);
            if m >= 1 {
                let ext = Trevisan::new(Self::params(end - start, m as usize, k, cfg.epsilon))?;
                seed_bits = seed_bits.max(ext.seed_bits());
                blocks.push((start..end, m as usize));
            }
            start = end;
        }
        Ok(Self { blocks, seed_bits })
    }

    fn params(n: usize, m: usize, k: f64, epsilon: f64) -> ExtractorParams {
        ExtractorParams { input_bits: n, output_bits: m, min_entropy: k, epsilon }
    }

    pub fn output_bits(&self) -> usize {
        self.blocks.iter().map(|(_, m)| m).sum()
    }

    /// Every block reuses the same seed prefix.
    pub fn extract(
        &self,
        input: &BitSlice<u8, Lsb0>,
        min_entropy: f64,
        epsilon: f64,
        seed: &BitSlice<u8, Lsb0>,
    ) -> Result<BitVec<u8, Lsb0>, ExtractorError> {
        let n = input.len();
        let mut out = BitVec::with_capacity(self.output_bits());
        for (range, m) in &self.blocks {
            let k = min_entropy * range.len() as f64 / n as f64;
            let ext = Trevisan::new(Self::params(range.len(), *m, k, epsilon))?;
            out.extend_from_bitslice(&ext.extract(&input[range.clone()], seed)?);
        }
        Ok(out)
    }
}

struct RemoteOracle<'t, T> {
    transport: &'t mut T,
}

impl<T: Transport> ParityOracle for RemoteOracle<'_, T> {
    fn parities(&mut self, blocks: &[super::BlockRef]) -> Result<Vec<bool>, CascadeError> {
        let q = Message::ParityQuery { blocks: blocks.to_vec() };
        match self.exchange(&q)? {
            Message::ParityReply { parities } => Ok(parities),
            other => Err(CascadeError::Oracle(format!("expected PARITY_REPLY, got {}", other.kind()))),
        }
    }

    fn verify(&mut self, seed: u64, bits: u32) -> Result<Vec<bool>, CascadeError> {
        match self.exchange(&Message::VerifyQuery { seed, bits })? {
            Message::VerifyReply { parities } if parities.len() == bits as usize => Ok(parities),
            other => Err(CascadeError::Oracle(format!("bad verification reply {}", other.kind()))),
        }
    }
}

impl<T: Transport> RemoteOracle<'_, T> {
    fn exchange(&mut self, m: &Message) -> Result<Message, CascadeError> {
        self.transport.send(m).map_err(|e| CascadeError::Oracle(e.to_string()))?;
        self.transport.recv().map_err(|e| CascadeError::Oracle(e.to_string()))
    }
}

fn seed_to_hex(seed: &BitSlice<u8, Lsb0>) -> String {
    pack_bits(seed).iter().map(|b| format!("{b:02x}")).collect()
}

fn seed_from_hex(hex: &str, bits: usize) -> Result<BitVec<u8, Lsb0>, DistillError> {
    let bad = || DistillError::Protocol("malformed extractor seed".into());
    if !hex.len().is_multiple_of(2) {
        return Err(bad());
    }
    let bytes = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad()))
        .collect::<Result<Vec<u8>, _>>()?;
    let mut v = BitVec::<u8, Lsb0>::from_vec(bytes);
    if v.len() < bits {
        return Err(bad());
    }
    v.truncate(bits);
    Ok(v)
}

fn finish(
    bits: BitVec<u8, Lsb0>,
    report: ReconcileReport,
    min_entropy: f64,
    plan: &BlockPlan,
    seed: &BitSlice<u8, Lsb0>,
    cfg: &DistillConfig,
) -> Result<DistillOutcome, DistillError> {
    let extracted_bits = plan.extract(&bits, min_entropy, cfg.epsilon, seed)?;
    let disclosed = report.total_disclosed();
    let reconciled = KeyMaterial {
        stage: KeyStage::Reconciled,
        bits,
        leaked_bits: disclosed,
        epsilon: 0.0,
    };
    let extracted = KeyMaterial {
        stage: KeyStage::Extracted,
        bits: extracted_bits,
        leaked_bits: disclosed,
        epsilon: cfg.epsilon * plan.blocks.len() as f64,
    };
    Ok(DistillOutcome { reconciled, extracted, report, min_entropy })
}

/// Bob's side. `key` is corrected in place towards Alice's.
pub fn distill_bob<T: Transport>(
    mut key: BitVec<u8, Lsb0>,
    qber: Option<f64>,
    perm_seed: u64,
    cfg: &DistillConfig,
    transport: &mut T,
) -> Result<DistillOutcome, DistillError> {
    let q = qber.unwrap_or(cfg.fallback_qber);
    let params = CascadeParams::for_qber(q, key.len());
    transport.send(&Message::ReconcileStart { bits: key.len() as u64, params, perm_seed })?;
    let result = cascade_correct(&mut key, params, perm_seed, RemoteOracle { transport: &mut *transport });
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            // best effort; the local error is what matters
            let _ = transport.send(&Message::ReconcileDone { report: None });
            return Err(e.into());
        }
    };
    transport.send(&Message::ReconcileDone { report: Some(report) })?;
    let min_entropy = entropy_budget(key.len(), q, report.total_disclosed(), cfg.margin_bits);
    let plan = BlockPlan::new(key.len(), min_entropy, cfg)?;
    let seed = match transport.recv()? {
        Message::ExtractSeed { seed, output_bits } => {
            if output_bits != plan.output_bits() as u64 {
                return Err(DistillError::Protocol(format!(
                    "peer expects {output_bits} output bits, local plan gives {}",
                    plan.output_bits()
                )));
            }
            seed_from_hex(&seed, plan.seed_bits)?
        }
        other => return Err(DistillError::Protocol(format!("expected EXTRACT_SEED, got {}", other.kind()))),
    };
    let out = finish(key, report, min_entropy, &plan, &seed, cfg)?;
    transport.send(&Message::Bye)?;
    expect_bye(transport)?;
    Ok(out)
}

/// Alice's side. `rng_seed` feeds the extractor seed.
pub fn distill_alice<T: Transport>(
    key: BitVec<u8, Lsb0>,
    qber: Option<f64>,
    rng_seed: u64,
    cfg: &DistillConfig,
    transport: &mut T,
) -> Result<DistillOutcome, DistillError> {
    let q = qber.unwrap_or(cfg.fallback_qber);
    let perm_seed = match transport.recv()? {
        Message::ReconcileStart { bits, perm_seed, .. } if bits == key.len() as u64 => perm_seed,
        Message::ReconcileStart { bits, .. } => {
            return Err(DistillError::Protocol(format!("peer key has {bits} bits, local {}", key.len())))
        }
        other => return Err(DistillError::Protocol(format!("expected RECONCILE_START, got {}", other.kind()))),
    };
    let mut oracle = LocalOracle::new(&key, perm_seed);
    let report = loop {
        match transport.recv()? {
            Message::ParityQuery { blocks } => {
                let parities = oracle.parities(&blocks)?;
                transport.send(&Message::ParityReply { parities })?;
            }
            Message::VerifyQuery { seed, bits } => {
                let parities = oracle.verify(seed, bits)?;
                transport.send(&Message::VerifyReply { parities })?;
            }
            Message::ReconcileDone { report: Some(r) } => break r,
            Message::ReconcileDone { report: None } => {
                return Err(DistillError::Protocol("peer could not reconcile".into()));
            }
            other => return Err(DistillError::Protocol(format!("unexpected {} during reconciliation", other.kind()))),
        }
    };
    if report.leaked_bits < oracle.disclosed {
        return Err(DistillError::Protocol("peer under-reports disclosed parities".into()));
    }
    let min_entropy = entropy_budget(key.len(), q, report.total_disclosed(), cfg.margin_bits);
    let plan = BlockPlan::new(key.len(), min_entropy, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(0xE7);
    let seed: BitVec<u8, Lsb0> = (0..plan.seed_bits).map(|_| rng.random::<bool>()).collect();
    transport.send(&Message::ExtractSeed {
        seed: seed_to_hex(&seed),
        output_bits: plan.output_bits() as u64,
    })?;
    let out = finish(key, report, min_entropy, &plan, &seed, cfg)?;
    expect_bye(transport)?;
    transport.send(&Message::Bye)?;
    Ok(out)
}

fn expect_bye<T: Transport>(t: &mut T) -> Result<(), DistillError> {
    match t.recv()? {
        Message::Bye => Ok(()),
        other => Err(DistillError::Protocol(format!("expected BYE, got {}", other.kind()))),
    }
}
