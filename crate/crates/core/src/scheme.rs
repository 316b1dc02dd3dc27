//! Measurement bases of the asymmetric Ekert scheme and their passive
//! (beam-splitter) selection probabilities.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::qstate::BasisAngle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn peer(self) -> Self {
        match self {
            Party::Alice => Party::Bob,
            Party::Bob => Party::Alice,
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        })
    }
}

impl FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alice" => Ok(Party::Alice),
            "bob" => Ok(Party::Bob),
            other => Err(format!("unknown party `{other}`")),
        }
    }
}

/// Basis label. `Ak` is Alice's key basis; `B0` is shared by key and monitor rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Basis {
    Ak,
    A0,
    A1,
    B0,
    B1,
}

impl Basis {
    pub const ALICE: [Basis; 3] = [Basis::Ak, Basis::A0, Basis::A1];
    pub const BOB: [Basis; 2] = [Basis::B0, Basis::B1];

    pub fn party(self) -> Party {
        match self {
            Basis::Ak | Basis::A0 | Basis::A1 => Party::Alice,
            Basis::B0 | Basis::B1 => Party::Bob,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::Ak => "Ak",
            Basis::A0 => "A0",
            Basis::A1 => "A1",
            Basis::B0 => "B0",
            Basis::B1 => "B1",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a coincidence with the given basis pair is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundUse {
    Key,
    /// Index into the CHSH correlator list `[(A0,B0), (A0,B1), (A1,B0), (A1,B1)]`.
    Monitor(usize),
    Discard,
}

pub const MONITOR_PAIRS: [(Basis, Basis); 4] = [
    (Basis::A0, Basis::B0),
    (Basis::A0, Basis::B1),
    (Basis::A1, Basis::B0),
    (Basis::A1, Basis::B1),
];

pub fn classify(alice: Basis, bob: Basis) -> RoundUse {
    if alice == Basis::Ak && bob == Basis::B0 {
        return RoundUse::Key;
    }
    match MONITOR_PAIRS.iter().position(|&p| p == (alice, bob)) {
        Some(i) => RoundUse::Monitor(i),
        None => RoundUse::Discard,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSetting {
    pub basis: Basis,
    pub angle_deg: f64,
    pub probability: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemeError {
    #[error("{party} basis probabilities sum to {sum}, expected 1")]
    Normalization { party: Party, sum: f64 },
    #[error("basis {basis} listed for {party}")]
    WrongParty { basis: Basis, party: Party },
    #[error("{party} must list each of its bases exactly once")]
    Incomplete { party: Party },
}

/// Analyzer angles and passive split ratios for both parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisScheme {
    pub alice: Vec<BasisSetting>,
    pub bob: Vec<BasisSetting>,
}

impl Default for BasisScheme {
    /// `A_k = 0°`, `A_0 = +22.5°`, `A_1 = −22.5°` with weights ½, ¼, ¼;
    /// `B_0 = 0°`, `B_1 = 45°` with weights ½, ½.
    fn default() -> Self {
        let s = |basis, angle_deg, probability| BasisSetting {
            basis,
            angle_deg,
            probability,
        };
        Self {
            alice: vec![s(Basis::Ak, 0.0, 0.5), s(Basis::A0, 22.5, 0.25), s(Basis::A1, -22.5, 0.25)],
            bob: vec![s(Basis::B0, 0.0, 0.5), s(Basis::B1, 45.0, 0.5)],
        }
    }
}

impl BasisScheme {
    pub fn validate(&self) -> Result<(), SchemeError> {
        for (party, settings, expected) in [
            (Party::Alice, &self.alice, &Basis::ALICE[..]),
            (Party::Bob, &self.bob, &Basis::BOB[..]),
        ] {
            if let Some(s) = settings.iter().find(|s| s.basis.party() != party) {
                return Err(SchemeError::WrongParty { basis: s.basis, party });
            }
            let mut listed: Vec<Basis> = settings.iter().map(|s| s.basis).collect();
            listed.sort();
            if listed != expected {
                return Err(SchemeError::Incomplete { party });
            }
            let sum: f64 = settings.iter().map(|s| s.probability).sum();
            if (sum - 1.0).abs() > 1e-9 || settings.iter().any(|s| s.probability < 0.0) {
                return Err(SchemeError::Normalization { party, sum });
            }
        }
        Ok(())
    }

    fn settings(&self, party: Party) -> &[BasisSetting] {
        match party {
            Party::Alice => &self.alice,
            Party::Bob => &self.bob,
        }
    }

    pub fn angle(&self, basis: Basis) -> BasisAngle {
        self.settings(basis.party())
            .iter()
            .find(|s| s.basis == basis)
            .map(|s| BasisAngle::from_degrees(s.angle_deg))
            .expect("validated scheme lists every basis")
    }

    pub fn probability(&self, basis: Basis) -> f64 {
        self.settings(basis.party())
            .iter()
            .find(|s| s.basis == basis)
            .map_or(0.0, |s| s.probability)
    }

    /// Passive i.i.d. basis choice.
    pub fn assign_basis<R: Rng + ?Sized>(&self, party: Party, rng: &mut R) -> Basis {
        let settings = self.settings(party);
        let mut u: f64 = rng.random();
        for s in settings {
            if u < s.probability {
                return s.basis;
            }
            u -= s.probability;
        }
        settings[settings.len() - 1].basis
    }

    /// Probability that a coincidence lands in the key basis pair.
    pub fn key_fraction(&self) -> f64 {
        self.probability(Basis::Ak) * self.probability(Basis::B0)
    }

    /// Short digest exchanged in the handshake so both ends agree on the scheme.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scheme serializes");
        let hash = Sha256::digest(&canonical);
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
