//! One-bit extractor: a Reed-Solomon symbol of the input followed by a
//! Hadamard (inner-product) bit.

use bitvec::prelude::*;

use super::gf2::Gf2Field;
use super::trevisan::ExtractorError;

#[derive(Debug, Clone)]
pub struct OneBitExtractor {
    field: Gf2Field,
    n: usize,
}

/// Field degree `⌈log2 n + 2·log2(2/ε)⌉` for inputs of `n` bits and error `ε`.
pub fn symbol_bits(n: usize, epsilon: f64) -> u32 {
    ((n.max(2) as f64).log2() + 2.0 * (2.0 / epsilon).log2()).ceil() as u32
}

impl OneBitExtractor {
    pub fn new(n: usize, l: u32) -> Self {
        Self { field: Gf2Field::new(l), n }
    }

    pub fn for_error(n: usize, epsilon: f64) -> Self {
        Self::new(n, symbol_bits(n, epsilon).clamp(1, 64))
    }

    pub fn field(&self) -> &Gf2Field {
        &self.field
    }

    pub fn l(&self) -> u32 {
        self.field.degree()
    }

    pub fn seed_bits(&self) -> usize {
        2 * self.l() as usize
    }

    /// Cut the input into `l`-bit symbols, least significant bit first,
    /// zero-padding the last one.
    pub fn symbols(&self, input: &BitSlice<u8, Lsb0>) -> Vec<u64> {
        input
            .chunks(self.l() as usize)
            .map(|c| c.iter().by_vals().enumerate().fold(0u64, |acc, (j, b)| acc | (u64::from(b) << j)))
            .collect()
    }

    /// `⟨Σ_j x_j α^j, β⟩` over GF(2).
    pub fn extract_symbols(&self, symbols: &[u64], alpha: u64, beta: u64) -> bool {
        let code = symbols.iter().rev().fold(0u64, |acc, &x| self.field.mul(acc, alpha) ^ x);
        (code & beta).count_ones() & 1 == 1
    }

    /// `subseed` holds `α` then `β`, `l` bits each, least significant first.
    pub fn extract(&self, input: &BitSlice<u8, Lsb0>, subseed: &BitSlice<u8, Lsb0>) -> Result<bool, ExtractorError> {
        let l = self.l() as usize;
        if input.len() != self.n {
            return Err(ExtractorError::InputLength { expected: self.n, got: input.len() });
        }
        if subseed.len() != 2 * l {
            return Err(ExtractorError::SeedLength { expected: 2 * l, got: subseed.len() });
        }
        let word = |s: &BitSlice<u8, Lsb0>| s.iter().by_vals().enumerate().fold(0u64, |acc, (j, b)| acc | (u64::from(b) << j));
        Ok(self.extract_symbols(&self.symbols(input), word(&subseed[..l]), word(&subseed[l..])))
    }
}
