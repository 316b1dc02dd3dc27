//! Fixtures shared by the benchmarks.

use bitvec::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sorted Alice and Bob timestamps: `pairs` correlated events shifted by
/// `offset_ps` with ±300 ps spread, plus as many uncorrelated tags per side.
pub fn tag_streams(pairs: usize, offset_ps: u64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = pairs as u64 * 1_000_000;
    let mut a = Vec::with_capacity(2 * pairs);
    let mut b = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let t = rng.random_range(10_000..span);
        a.push(t + offset_ps);
        b.push(t + rng.random_range(0..600) - 300);
        a.push(rng.random_range(0..span));
        b.push(rng.random_range(0..span));
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Alice's key and Bob's copy with independent bit flips at rate `q`.
pub fn noisy_keys(n: usize, q: f64, seed: u64) -> (BitVec<u8, Lsb0>, BitVec<u8, Lsb0>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: BitVec<u8, Lsb0> = (0..n).map(|_| rng.random::<bool>()).collect();
    let b = a.iter().by_vals().map(|x| x ^ rng.random_bool(q)).collect();
    (a, b)
}

pub fn random_bits(n: usize, seed: u64) -> BitVec<u8, Lsb0> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<bool>()).collect()
}
