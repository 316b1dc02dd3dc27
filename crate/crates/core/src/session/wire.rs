//! Messages of the classical channel. Every payload is one JSON object with
//! a `type` tag.

use serde::{Deserialize, Serialize};

use super::gate::AbortReason;
use super::metrics::SessionMetrics;
use crate::postproc::{BlockRef, CascadeParams, ReconcileReport};
use crate::qstate::Outcome;
use crate::scheme::{Basis, Party};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Hello {
        version: u32,
        session_id: String,
        scheme_hash: String,
        role: Party,
    },
    /// Bob's packet timestamps, delta-encoded.
    TagDigest {
        packet: u64,
        #[serde(with = "delta")]
        timestamps: Vec<u64>,
    },
    /// Coincidence `i` pairs Alice's `i`-th matched tag with Bob's tag `bob_indices[i]`.
    Coincidences {
        packet: u64,
        bob_indices: Vec<u32>,
        offset_ps: Option<f64>,
    },
    /// Basis label per coincidence id.
    Bases { packet: u64, bases: Vec<Basis> },
    /// Coincidence ids whose outcomes Bob must disclose.
    SampleRequest { packet: u64, ids: Vec<u32> },
    QberSample {
        packet: u64,
        ids: Vec<u32>,
        outcomes: Vec<Outcome>,
    },
    Metrics { metrics: Box<SessionMetrics> },
    /// Session finished; `bits` is the sender's sifted key length. Alice's
    /// reply carries the QBER estimate both sides use downstream.
    KeyDone { bits: u64, qber: Option<f64> },
    /// Bob opens reconciliation with the shared Cascade parameters.
    ReconcileStart {
        bits: u64,
        params: CascadeParams,
        perm_seed: u64,
    },
    ParityQuery { blocks: Vec<BlockRef> },
    ParityReply { parities: Vec<bool> },
    VerifyQuery { seed: u64, bits: u32 },
    VerifyReply { parities: Vec<bool> },
    /// `report` is `None` when Cascade failed to converge.
    ReconcileDone { report: Option<ReconcileReport> },
    /// Extractor seed, hex, plus the entropy budget both sides agree on.
    ExtractSeed { seed: String, output_bits: u64 },
    Abort { reason: AbortReason },
    Bye,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "HELLO",
            Message::TagDigest { .. } => "TAG_DIGEST",
            Message::Coincidences { .. } => "COINCIDENCES",
            Message::Bases { .. } => "BASES",
            Message::SampleRequest { .. } => "SAMPLE_REQUEST",
            Message::QberSample { .. } => "QBER_SAMPLE",
            Message::Metrics { .. } => "METRICS",
            Message::KeyDone { .. } => "KEY_DONE",
            Message::ReconcileStart { .. } => "RECONCILE_START",
            Message::ParityQuery { .. } => "PARITY_QUERY",
            Message::ParityReply { .. } => "PARITY_REPLY",
            Message::VerifyQuery { .. } => "VERIFY_QUERY",
            Message::VerifyReply { .. } => "VERIFY_REPLY",
            Message::ReconcileDone { .. } => "RECONCILE_DONE",
            Message::ExtractSeed { .. } => "EXTRACT_SEED",
            Message::Abort { .. } => "ABORT",
            Message::Bye => "BYE",
        }
    }
}

mod delta {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        let mut prev = 0u64;
        let deltas: Vec<u64> = v
            .iter()
            .map(|&t| {
                let d = t.wrapping_sub(prev);
                prev = t;
                d
            })
            .collect();
        deltas.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let deltas = Vec::<u64>::deserialize(d)?;
        let mut acc = 0u64;
        Ok(deltas
            .into_iter()
            .map(|x| {
                acc = acc.wrapping_add(x);
                acc
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_json_shape() {
        let m = Message::Hello {
            version: 1,
            session_id: "s".into(),
            scheme_hash: "ab".into(),
            role: Party::Alice,
        };
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(j, r#"{"type":"HELLO","version":1,"session_id":"s","scheme_hash":"ab","role":"alice"}"#);
        assert_eq!(serde_json::to_string(&Message::Bye).unwrap(), r#"{"type":"BYE"}"#);
    }

    #[test]
    fn digest_is_delta_encoded() {
        let m = Message::TagDigest {
            packet: 3,
            timestamps: vec![1000, 1500, 1500, 9000],
        };
        let j = serde_json::to_string(&m).unwrap();
        assert!(j.contains("[1000,500,0,7500]"), "{j}");
        assert_eq!(serde_json::from_str::<Message>(&j).unwrap(), m);
    }

    #[test]
    fn rejects_unknown_type() {
        assert!(serde_json::from_str::<Message>(r#"{"type":"NOPE"}"#).is_err());
    }
}
