//! Trevisan's strong extractor: output bit `i` is the one-bit extractor
//! applied with the seed restricted to the `i`-th weak-design set.

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::next_prime_power;
use super::rsh::{symbol_bits, OneBitExtractor};
use super::weak_design::{DesignError, WeakDesign};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractorError {
    #[error("invalid extractor parameters: {0}")]
    Params(String),
    #[error("requested {m} bits but the entropy allows at most {max}")]
    EntropyBudget { m: usize, max: i64 },
    #[error("expected {expected} input bits, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("expected {expected} seed bits, got {got}")]
    SeedLength { expected: usize, got: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub input_bits: usize,
    pub output_bits: usize,
    /// Smooth min-entropy of the input, bits.
    pub min_entropy: f64,
    pub epsilon: f64,
}

impl ExtractorParams {
    /// Largest admissible output: `⌊k − 4·log2(1/ε) − 6⌋`.
    pub fn max_output(min_entropy: f64, epsilon: f64) -> i64 {
        (min_entropy - 4.0 * (1.0 / epsilon).log2() - 6.0).floor() as i64
    }
}

#[derive(Debug, Clone)]
pub struct Trevisan {
    params: ExtractorParams,
    one_bit: OneBitExtractor,
    design: WeakDesign,
}

impl Trevisan {
    pub fn new(params: ExtractorParams) -> Result<Self, ExtractorError> {
        let ExtractorParams { input_bits: n, output_bits: m, min_entropy, epsilon } = params;
        if n == 0 || m == 0 {
            return Err(ExtractorError::Params("input and output must be non-empty".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ExtractorError::Params(format!("ε = {epsilon} outside (0, 1)")));
        }
        let max = ExtractorParams::max_output(min_entropy, epsilon);
        if m as i64 > max {
            return Err(ExtractorError::EntropyBudget { m, max });
        }
        let l = symbol_bits(n, epsilon);
        if l > 64 {
            return Err(ExtractorError::Params(format!("symbol size {l} exceeds 64 bits")));
        }
        let t = next_prime_power(2 * l);
        Ok(Self {
            params,
            one_bit: OneBitExtractor::new(n, l),
            design: WeakDesign::new(m, t)?,
        })
    }

    pub fn params(&self) -> &ExtractorParams {
        &self.params
    }

    pub fn l(&self) -> u32 {
        self.one_bit.l()
    }

    pub fn t(&self) -> u32 {
        self.design.t()
    }

    pub fn seed_bits(&self) -> usize {
        self.design.seed_len()
    }

    /// Seed positions feeding output bit `i`: the first `2l` elements of set `i`.
    pub fn subseed_positions(&self, i: usize) -> Vec<u32> {
        let c = self.design.coefficients(i);
        (0..2 * self.l()).map(|a| self.design.element(&c, a)).collect()
    }

    pub fn extract(&self, input: &BitSlice<u8, Lsb0>, seed: &BitSlice<u8, Lsb0>) -> Result<BitVec<u8, Lsb0>, ExtractorError> {
        if input.len() != self.params.input_bits {
            return Err(ExtractorError::InputLength { expected: self.params.input_bits, got: input.len() });
        }
        if seed.len() < self.seed_bits() {
            return Err(ExtractorError::SeedLength { expected: self.seed_bits(), got: seed.len() });
        }
        let symbols = self.one_bit.symbols(input);
        let l = self.l() as usize;
        let mut out = BitVec::with_capacity(self.params.output_bits);
        for i in 0..self.params.output_bits {
            let pos = self.subseed_positions(i);
            let word = |p: &[u32]| p.iter().enumerate().fold(0u64, |acc, (j, &s)| acc | (u64::from(seed[s as usize]) << j));
            out.push(self.one_bit.extract_symbols(&symbols, word(&pos[..l]), word(&pos[l..])));
        }
        Ok(out)
    }
}

pub fn trevisan_extract(
    input: &BitSlice<u8, Lsb0>,
    params: ExtractorParams,
    seed: &BitSlice<u8, Lsb0>,
) -> Result<BitVec<u8, Lsb0>, ExtractorError> {
    Trevisan::new(params)?.extract(input, seed)
}
