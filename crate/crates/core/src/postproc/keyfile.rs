//! Binary key files. Layout, little-endian:
//!
//! ```text
//! "QKEY" | version u16 | stage u8 | 0u8 | bits u64 | leaked u64 | ε f64 | key bytes
//! ```
//!
//! Bit 0 of the key is the least significant bit of the first key byte.

use std::io::{self, Read, Write};
use std::path::Path;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"QKEY";
const VERSION: u16 = 1;
pub const KEY_HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyStage {
    Sifted = 1,
    Reconciled = 2,
    Extracted = 3,
}

impl KeyStage {
    pub fn name(self) -> &'static str {
        match self {
            KeyStage::Sifted => "sifted",
            KeyStage::Reconciled => "reconciled",
            KeyStage::Extracted => "final",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KeyFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed key file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyMaterial {
    pub stage: KeyStage,
    pub bits: BitVec<u8, Lsb0>,
    /// Bits disclosed about this key so far.
    pub leaked_bits: u64,
    /// Security parameter of this stage; zero before extraction.
    pub epsilon: f64,
}

pub fn pack_bits(bits: &BitSlice<u8, Lsb0>) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().by_vals().enumerate().fold(0u8, |acc, (j, b)| acc | (u8::from(b) << j)))
        .collect()
}

impl KeyMaterial {
    pub fn new(stage: KeyStage, bits: BitVec<u8, Lsb0>) -> Self {
        Self { stage, bits, leaked_bits: 0, epsilon: 0.0 }
    }

    /// Key bytes; a trailing partial byte is zero-padded.
    pub fn key_bytes(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(KEY_HEADER_BYTES + self.bits.len().div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.stage as u8);
        out.push(0);
        out.extend_from_slice(&(self.bits.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.leaked_bits.to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend(self.key_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, KeyFileError> {
        let fmt = |s: &str| KeyFileError::Format(s.into());
        if buf.len() < KEY_HEADER_BYTES || &buf[..4] != MAGIC {
            return Err(fmt("missing QKEY header"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
        if u16::from_le_bytes([buf[4], buf[5]]) != VERSION {
            return Err(fmt("unsupported version"));
        }
        let stage = match buf[6] {
            1 => KeyStage::Sifted,
            2 => KeyStage::Reconciled,
            3 => KeyStage::Extracted,
            _ => return Err(fmt("unknown stage")),
        };
        let len = usize::try_from(u64_at(8)).map_err(|_| fmt("length overflow"))?;
        let body = &buf[KEY_HEADER_BYTES..];
        if body.len() != len.div_ceil(8) {
            return Err(fmt("body length does not match header"));
        }
        let mut bits = BitVec::<u8, Lsb0>::from_slice(body);
        bits.truncate(len);
        Ok(Self {
            stage,
            bits,
            leaked_bits: u64_at(16),
            epsilon: f64::from_le_bytes(buf[24..32].try_into().expect("8 bytes")),
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, KeyFileError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeyFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
