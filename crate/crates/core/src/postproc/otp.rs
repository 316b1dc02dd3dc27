//! One-time pad with a ledger of consumed key bytes. Any overlap with a
//! consumed range is refused.
//!
//! Ciphertext layout: `"QOTP" | key offset u64 LE | length u64 LE | data`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"QOTP";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OtpError {
    #[error("need {required} key bytes, {available} unused")]
    InsufficientKey { required: usize, available: usize },
    #[error("key bytes {0:?} were already used")]
    KeyReuse(Range<usize>),
    #[error("malformed ciphertext: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub key_offset: u64,
    pub data: Vec<u8>,
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.key_offset.to_le_bytes());
        out.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, OtpError> {
        if buf.len() < 20 || &buf[..4] != MAGIC {
            return Err(OtpError::Format("missing QOTP header".into()));
        }
        let key_offset = u64::from_le_bytes(buf[4..12].try_into().expect("8 bytes"));
        let len = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes"));
        if (buf.len() - 20) as u64 != len {
            return Err(OtpError::Format("length field does not match payload".into()));
        }
        Ok(Self { key_offset, data: buf[20..].to_vec() })
    }
}

pub fn xor_bytes(data: &[u8], key: &[u8]) -> Vec<u8> {
    assert_eq!(data.len(), key.len());
    data.iter().zip(key).map(|(d, k)| d ^ k).collect()
}

#[derive(Debug, Clone)]
pub struct KeyPad {
    key: Vec<u8>,
    /// Sorted, disjoint.
    used: Vec<Range<usize>>,
}

impl KeyPad {
    pub fn new(key: Vec<u8>) -> Self {
        Self { key, used: Vec::new() }
    }

    /// Resume a pad from a saved ledger of consumed ranges.
    pub fn restore(key: Vec<u8>, mut used: Vec<Range<usize>>) -> Result<Self, OtpError> {
        used.retain(|r| !r.is_empty());
        used.sort_by_key(|r| r.start);
        if used.windows(2).any(|w| w[0].end > w[1].start) || used.last().is_some_and(|r| r.end > key.len()) {
            return Err(OtpError::Format("ledger ranges overlap or exceed the key".into()));
        }
        Ok(Self { key, used })
    }

    pub fn len(&self) -> usize {
        self.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key.is_empty()
    }

    pub fn used(&self) -> &[Range<usize>] {
        &self.used
    }

    pub fn remaining(&self) -> usize {
        self.key.len() - self.used.iter().map(|r| r.len()).sum::<usize>()
    }

    /// Lowest offset with `len` contiguous unused bytes.
    pub fn next_free(&self, len: usize) -> Option<usize> {
        let mut cursor = 0;
        for r in &self.used {
            if r.start >= cursor + len {
                return Some(cursor);
            }
            cursor = cursor.max(r.end);
        }
        (cursor + len <= self.key.len()).then_some(cursor)
    }

    /// Mark `offset..offset+len` consumed and return those key bytes.
    pub fn take(&mut self, offset: usize, len: usize) -> Result<&[u8], OtpError> {
        let range = offset..offset.saturating_add(len);
        if range.end > self.key.len() {
            return Err(OtpError::InsufficientKey {
                required: len,
                available: self.key.len().saturating_sub(offset),
            });
        }
        if len > 0 {
            if let Some(r) = self.used.iter().find(|r| r.start < range.end && range.start < r.end) {
                return Err(OtpError::KeyReuse(r.start.max(range.start)..r.end.min(range.end)));
            }
            let at = self.used.partition_point(|r| r.start < range.start);
            self.used.insert(at, range.clone());
        }
        Ok(&self.key[range])
    }

    pub fn encrypt(&mut self, plaintext: &[u8]) -> Result<Ciphertext, OtpError> {
        let offset = self.next_free(plaintext.len()).ok_or(OtpError::InsufficientKey {
            required: plaintext.len(),
            available: self.remaining(),
        })?;
        self.encrypt_at(offset, plaintext)
    }

    pub fn encrypt_at(&mut self, offset: usize, plaintext: &[u8]) -> Result<Ciphertext, OtpError> {
        let key = self.take(offset, plaintext.len())?;
        Ok(Ciphertext { key_offset: offset as u64, data: xor_bytes(plaintext, key) })
    }

    pub fn decrypt(&mut self, c: &Ciphertext) -> Result<Vec<u8>, OtpError> {
        let offset = usize::try_from(c.key_offset).map_err(|_| OtpError::Format("offset overflow".into()))?;
        let key = self.take(offset, c.data.len())?;
        Ok(xor_bytes(&c.data, key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_reuse() {
        let key: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        let (mut alice, mut bob) = (KeyPad::new(key.clone()), KeyPad::new(key));
        let msg = b"attack at dawn".to_vec();
        let c = alice.encrypt(&msg).unwrap();
        assert_eq!(c.key_offset, 0);
        assert_ne!(c.data, msg);
        let wire = Ciphertext::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(bob.decrypt(&wire).unwrap(), msg);
        assert!(matches!(bob.decrypt(&wire), Err(OtpError::KeyReuse(_))));
        assert!(matches!(alice.encrypt_at(5, b"x"), Err(OtpError::KeyReuse(r)) if r == (5..6)));
        let c2 = alice.encrypt(b"second").unwrap();
        assert_eq!(c2.key_offset, msg.len() as u64);
        assert_eq!(alice.remaining(), 1000 - msg.len() - 6);
    }

    #[test]
    fn insufficient_key_and_gaps() {
        let mut pad = KeyPad::new(vec![0; 10]);
        pad.take(2, 3).unwrap();
        assert_eq!(pad.next_free(2), Some(0));
        assert_eq!(pad.next_free(3), Some(5));
        assert_eq!(pad.next_free(6), None);
        assert!(matches!(pad.encrypt(&[0; 6]), Err(OtpError::InsufficientKey { required: 6, available: 7 })));
        pad.encrypt(&[1, 2]).unwrap();
        assert_eq!(pad.used(), &[0..2, 2..5]);
        assert!(Ciphertext::from_bytes(b"QOTP").is_err());
    }

    #[test]
    fn all_zero_key_is_identity() {
        let mut pad = KeyPad::new(vec![0; 64]);
        let c = pad.encrypt(b"plaintext").unwrap();
        assert_eq!(c.data, b"plaintext");
    }

    #[test]
    fn restored_ledger_still_refuses_reuse() {
        let mut pad = KeyPad::new(vec![7; 32]);
        pad.encrypt(&[1; 10]).unwrap();
        let mut again = KeyPad::restore(vec![7; 32], pad.used().to_vec()).unwrap();
        assert!(matches!(again.encrypt_at(9, &[0]), Err(OtpError::KeyReuse(_))));
        assert_eq!(again.encrypt(&[0; 4]).unwrap().key_offset, 10);
        assert!(KeyPad::restore(vec![0; 8], vec![0..4, 3..6]).is_err());
        assert!(KeyPad::restore(vec![0; 8], std::iter::once(4..9).collect()).is_err());
    }
}
