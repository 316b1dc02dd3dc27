//! Cascade error reconciliation. Bob holds the noisy copy and drives the
//! binary searches; Alice only answers block-parity queries.

use std::collections::{HashMap, HashSet};

use bitvec::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Positions `[start, end)` of the key as reordered for `pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub pass: u8,
    pub start: u32,
    pub end: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CascadeError {
    #[error("keys have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("keys still differ after {passes} passes")]
    Unconverged { passes: u8, report: ReconcileReport },
    #[error("parity oracle failed: {0}")]
    Oracle(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub passes: u8,
    /// Extra passes allowed when verification still sees a difference.
    pub max_passes: u8,
    pub first_block: usize,
    /// Random-subset parities compared after the regular passes.
    pub verify_bits: u32,
}

impl CascadeParams {
    /// Four passes, first block `2^⌈log2(1/Q)⌉` (at most `n`), doubling each pass.
    pub fn for_qber(qber: f64, n: usize) -> Self {
        let first = if qber > 0.0 {
            (1.0 / qber).log2().ceil().exp2().min(n as f64) as usize
        } else {
            n
        };
        Self {
            passes: 4,
            max_passes: 8,
            first_block: first.max(1),
            verify_bits: 32,
        }
    }

    /// Doubles up to the last regular pass; extra passes keep that size.
    pub fn block_size(&self, pass: u8, n: usize) -> usize {
        let doublings = pass.min(self.passes.saturating_sub(1)).min(40);
        self.first_block.saturating_mul(1usize << doublings).clamp(1, n.max(1))
    }
}

/// Per-pass orderings shared by both parties. Pass 0 is the identity.
#[derive(Debug, Clone)]
pub struct Permutations {
    seed: u64,
    n: usize,
    order: Vec<Vec<u32>>,
    position: Vec<Vec<u32>>,
}

impl Permutations {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut p = Self {
            seed,
            n,
            order: Vec::new(),
            position: Vec::new(),
        };
        p.ensure(1);
        p
    }

    fn ensure(&mut self, passes: usize) {
        while self.order.len() < passes {
            let pass = self.order.len();
            let mut order: Vec<u32> = (0..self.n as u32).collect();
            if pass > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(pass as u64);
                order.shuffle(&mut rng);
            }
            let mut position = vec![0u32; self.n];
            for (pos, &idx) in order.iter().enumerate() {
                position[idx as usize] = pos as u32;
            }
            self.order.push(order);
            self.position.push(position);
        }
    }

    pub fn parity(&mut self, key: &BitSlice<u8, Lsb0>, block: BlockRef) -> bool {
        self.ensure(usize::from(block.pass) + 1);
        self.order[usize::from(block.pass)][block.start as usize..block.end as usize]
            .iter()
            .fold(false, |acc, &i| acc ^ key[i as usize])
    }
}

/// Parity of the `k`-th verification subset: each bit included with probability ½.
pub fn subset_parity(key: &BitSlice<u8, Lsb0>, seed: u64, k: u32) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(k) + 1_000);
    let mut acc = false;
    let mut word = 0u64;
    for (i, bit) in key.iter().by_vals().enumerate() {
        if i % 64 == 0 {
            word = rng.random();
        }
        acc ^= bit & (word >> (i % 64) & 1 == 1);
    }
    acc
}

/// Alice's side: answers parity and verification queries against her key.
pub trait ParityOracle {
    fn parities(&mut self, blocks: &[BlockRef]) -> Result<Vec<bool>, CascadeError>;
    fn verify(&mut self, seed: u64, bits: u32) -> Result<Vec<bool>, CascadeError>;
}

/// In-process oracle that also tallies what it disclosed.
pub struct LocalOracle<'a> {
    key: &'a BitSlice<u8, Lsb0>,
    perms: Permutations,
    pub disclosed: u64,
}

impl<'a> LocalOracle<'a> {
    pub fn new(key: &'a BitSlice<u8, Lsb0>, perm_seed: u64) -> Self {
        Self {
            key,
            perms: Permutations::new(key.len(), perm_seed),
            disclosed: 0,
        }
    }
}

impl ParityOracle for LocalOracle<'_> {
    fn parities(&mut self, blocks: &[BlockRef]) -> Result<Vec<bool>, CascadeError> {
        self.disclosed += blocks.len() as u64;
        Ok(blocks.iter().map(|&b| self.perms.parity(self.key, b)).collect())
    }

    fn verify(&mut self, seed: u64, bits: u32) -> Result<Vec<bool>, CascadeError> {
        Ok((0..bits).map(|k| subset_parity(self.key, seed, k)).collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileReport {
    /// Parity bits disclosed by the Cascade passes.
    pub leaked_bits: u64,
    /// Random-subset parities disclosed by verification.
    pub verification_bits: u64,
    pub corrections: u64,
    pub passes: u8,
    /// Query round trips.
    pub rounds: u32,
}

impl ReconcileReport {
    pub fn total_disclosed(&self) -> u64 {
        self.leaked_bits + self.verification_bits
    }
}

struct Search {
    pass: u8,
    block: u32,
    start: u32,
    end: u32,
    alice_parity: bool,
}

struct Driver<'k, O> {
    key: &'k mut BitVec<u8, Lsb0>,
    perms: Permutations,
    params: CascadeParams,
    oracle: O,
    known: HashMap<BlockRef, bool>,
    report: ReconcileReport,
    n: usize,
}

impl<O: ParityOracle> Driver<'_, O> {
    fn block_range(&self, pass: u8, block: u32) -> (u32, u32) {
        let k = self.params.block_size(pass, self.n);
        let start = block as usize * k;
        (start as u32, (start + k).min(self.n) as u32)
    }

    fn bob_parity(&mut self, pass: u8, start: u32, end: u32) -> bool {
        self.perms.parity(self.key, BlockRef { pass, start, end })
    }

    /// Fetch Alice's parities for the blocks not yet known, in one round trip.
    fn fetch(&mut self, blocks: &[BlockRef]) -> Result<(), CascadeError> {
        let mut missing: Vec<BlockRef> = blocks.iter().copied().filter(|b| !self.known.contains_key(b)).collect();
        missing.dedup();
        if missing.is_empty() {
            return Ok(());
        }
        let answers = self.oracle.parities(&missing)?;
        if answers.len() != missing.len() {
            return Err(CascadeError::Oracle("reply length differs from query".into()));
        }
        self.report.leaked_bits += missing.len() as u64;
        self.report.rounds += 1;
        self.known.extend(missing.into_iter().zip(answers));
        Ok(())
    }

    fn top(&self, pass: u8, block: u32) -> BlockRef {
        let (start, end) = self.block_range(pass, block);
        BlockRef { pass, start, end }
    }

    fn run_pass(&mut self, pass: u8) -> Result<(), CascadeError> {
        self.perms.ensure(usize::from(pass) + 1);
        let k = self.params.block_size(pass, self.n);
        let nblocks = self.n.div_ceil(k) as u32;
        let tops: Vec<BlockRef> = (0..nblocks).map(|b| self.top(pass, b)).collect();
        self.fetch(&tops)?;
        let mut searches = Vec::new();
        for b in 0..nblocks {
            let r = tops[b as usize];
            let alice = self.known[&r];
            if self.bob_parity(pass, r.start, r.end) != alice {
                searches.push(Search {
                    pass,
                    block: b,
                    start: r.start,
                    end: r.end,
                    alice_parity: alice,
                });
            }
        }
        self.resolve(searches, pass)
    }

    /// Run binary searches in lock-step, cascading every correction into
    /// the blocks of passes `0..=max_pass` that contain the flipped bit.
    fn resolve(&mut self, mut active: Vec<Search>, max_pass: u8) -> Result<(), CascadeError> {
        while !active.is_empty() {
            // Drop searches whose interval became even through other corrections.
            let mut still = Vec::with_capacity(active.len());
            let mut recheck: Vec<(u8, u32)> = Vec::new();
            for s in active {
                if self.bob_parity(s.pass, s.start, s.end) != s.alice_parity {
                    still.push(s);
                } else {
                    recheck.push((s.pass, s.block));
                }
            }
            active = still;

            let queries: Vec<BlockRef> = active
                .iter()
                .filter(|s| s.end - s.start > 1)
                .map(|s| BlockRef {
                    pass: s.pass,
                    start: s.start,
                    end: s.start + (s.end - s.start) / 2,
                })
                .collect();
            self.fetch(&queries)?;

            let mut next = Vec::with_capacity(active.len());
            let mut flipped = Vec::new();
            for mut s in active {
                if s.end - s.start == 1 {
                    // another search may have fixed this bit earlier in the round
                    if self.bob_parity(s.pass, s.start, s.end) == s.alice_parity {
                        recheck.push((s.pass, s.block));
                        continue;
                    }
                    let idx = self.perms.order[usize::from(s.pass)][s.start as usize] as usize;
                    let v = self.key[idx];
                    self.key.set(idx, !v);
                    self.report.corrections += 1;
                    flipped.push(idx);
                    recheck.push((s.pass, s.block));
                    continue;
                }
                let mid = s.start + (s.end - s.start) / 2;
                let left = BlockRef {
                    pass: s.pass,
                    start: s.start,
                    end: mid,
                };
                let alice_left = self.known[&left];
                if self.bob_parity(s.pass, s.start, mid) != alice_left {
                    s.end = mid;
                    s.alice_parity = alice_left;
                } else {
                    s.start = mid;
                    s.alice_parity ^= alice_left;
                }
                next.push(s);
            }

            for idx in flipped {
                for q in 0..=max_pass {
                    let pos = self.perms.position[usize::from(q)][idx] as usize;
                    recheck.push((q, (pos / self.params.block_size(q, self.n)) as u32));
                }
            }
            let busy: HashSet<(u8, u32)> = next.iter().map(|s| (s.pass, s.block)).collect();
            let mut seen = HashSet::new();
            for (q, b) in recheck {
                if busy.contains(&(q, b)) || !seen.insert((q, b)) {
                    continue;
                }
                let r = self.top(q, b);
                let alice = self.known[&r];
                if self.bob_parity(q, r.start, r.end) != alice {
                    next.push(Search {
                        pass: q,
                        block: b,
                        start: r.start,
                        end: r.end,
                        alice_parity: alice,
                    });
                }
            }
            active = next;
        }
        Ok(())
    }

    fn verified(&mut self, round: u8) -> Result<bool, CascadeError> {
        let bits = self.params.verify_bits;
        if bits == 0 {
            return Ok(true);
        }
        let seed = self.perms.seed ^ 0x5EED_0000_0000_0000 ^ u64::from(round);
        let theirs = self.oracle.verify(seed, bits)?;
        self.report.verification_bits += u64::from(bits);
        self.report.rounds += 1;
        Ok((0..bits).all(|k| subset_parity(self.key, seed, k) == theirs[k as usize]))
    }
}

/// Correct `key` towards the oracle's key. Leakage is tallied in the report.
pub fn cascade_correct<O: ParityOracle>(
    key: &mut BitVec<u8, Lsb0>,
    params: CascadeParams,
    perm_seed: u64,
    oracle: O,
) -> Result<ReconcileReport, CascadeError> {
    if params.passes == 0 || params.first_block == 0 {
        return Err(CascadeError::Params("need at least one pass and a positive block size".into()));
    }
    let n = key.len();
    let mut d = Driver {
        key,
        perms: Permutations::new(n, perm_seed),
        params,
        oracle,
        known: HashMap::new(),
        report: ReconcileReport::default(),
        n,
    };
    if n == 0 {
        return Ok(d.report);
    }
    let mut pass = 0u8;
    while pass < params.passes {
        d.run_pass(pass)?;
        pass += 1;
    }
    d.report.passes = pass;
    while !d.verified(pass)? {
        if pass >= params.max_passes {
            return Err(CascadeError::Unconverged { passes: pass, report: d.report });
        }
        d.run_pass(pass)?;
        pass += 1;
        d.report.passes = pass;
    }
    Ok(d.report)
}

/// Single-process reconciliation of `bob` against `alice`.
pub fn reconcile(
    alice: &BitSlice<u8, Lsb0>,
    bob: &mut BitVec<u8, Lsb0>,
    qber_estimate: f64,
    perm_seed: u64,
) -> Result<ReconcileReport, CascadeError> {
    if alice.len() != bob.len() {
        return Err(CascadeError::LengthMismatch(alice.len(), bob.len()));
    }
    let params = CascadeParams::for_qber(qber_estimate, bob.len());
    cascade_correct(bob, params, perm_seed, LocalOracle::new(alice, perm_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::binary_entropy;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    pub(crate) fn noisy_pair(n: usize, q: f64, seed: u64) -> (BitVec<u8, Lsb0>, BitVec<u8, Lsb0>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: BitVec<u8, Lsb0> = (0..n).map(|_| rng.random::<bool>()).collect();
        let b: BitVec<u8, Lsb0> = a.iter().by_vals().map(|x| x ^ rng.random_bool(q)).collect();
        (a, b)
    }

    #[test]
    fn identical_keys_leak_top_level_parities_only() {
        let (a, _) = noisy_pair(10_000, 0.0, 1);
        let mut b = a.clone();
        let r = reconcile(&a, &mut b, 0.03, 7).unwrap();
        assert_eq!(r.corrections, 0);
        let p = CascadeParams::for_qber(0.03, 10_000);
        let expected: u64 = (0..4).map(|pass| 10_000usize.div_ceil(p.block_size(pass, 10_000)) as u64).sum();
        assert_eq!(r.leaked_bits, expected);
        assert_eq!(r.verification_bits, 32);
    }

    #[test]
    fn schedule_is_power_of_two_and_stops_doubling() {
        let p = CascadeParams::for_qber(0.01, 10_000);
        let sizes: Vec<usize> = (0..7).map(|pass| p.block_size(pass, 10_000)).collect();
        assert_eq!(sizes, vec![128, 256, 512, 1024, 1024, 1024, 1024]);
        assert_eq!(CascadeParams::for_qber(0.05, 10_000).first_block, 32);
        assert_eq!(CascadeParams::for_qber(0.03, 40).first_block, 40);
        assert_eq!(CascadeParams::for_qber(0.0, 500).block_size(3, 500), 500);
    }

    #[test]
    fn corrects_typical_keys_within_budget() {
        for &q in &[0.01, 0.03, 0.05] {
            let mut total = 0;
            for seed in 0..10 {
                let (a, mut b) = noisy_pair(10_000, q, seed);
                let r = reconcile(&a, &mut b, q, seed).unwrap();
                assert_eq!(a, b, "q={q} seed={seed}");
                total += r.total_disclosed();
            }
            let bound = 1.2 * binary_entropy(q) * 10_000.0;
            assert!(total as f64 / 10.0 < bound, "q={q}: mean {} vs {bound}", total / 10);
        }
    }

    #[test]
    fn zero_estimate_with_errors_reports_failure() {
        let (a, mut b) = noisy_pair(2_000, 0.0, 3);
        *b.get_mut(10).unwrap() ^= true;
        *b.get_mut(20).unwrap() ^= true;
        let err = reconcile(&a, &mut b, 0.0, 1).unwrap_err();
        assert!(matches!(err, CascadeError::Unconverged { passes: 8, .. }), "{err:?}");
        assert!(reconcile(&a, &mut BitVec::new(), 0.01, 0).is_err());
    }

    /// Records every query so the disclosed-bit tally can be checked against the transcript.
    struct Transcript<'a> {
        inner: LocalOracle<'a>,
        parity_bits: u64,
        verify_bits: u64,
        queried: HashSet<BlockRef>,
    }

    impl ParityOracle for &mut Transcript<'_> {
        fn parities(&mut self, blocks: &[BlockRef]) -> Result<Vec<bool>, CascadeError> {
            self.parity_bits += blocks.len() as u64;
            for b in blocks {
                assert!(self.queried.insert(*b), "block {b:?} asked twice");
            }
            self.inner.parities(blocks)
        }

        fn verify(&mut self, seed: u64, bits: u32) -> Result<Vec<bool>, CascadeError> {
            self.verify_bits += u64::from(bits);
            self.inner.verify(seed, bits)
        }
    }

    #[test]
    fn leakage_equals_transcript() {
        let (a, mut b) = noisy_pair(10_000, 0.05, 11);
        let mut t = Transcript {
            inner: LocalOracle::new(&a, 99),
            parity_bits: 0,
            verify_bits: 0,
            queried: HashSet::new(),
        };
        let r = cascade_correct(&mut b, CascadeParams::for_qber(0.05, 10_000), 99, &mut t).unwrap();
        assert_eq!(r.leaked_bits, t.parity_bits);
        assert_eq!(r.verification_bits, t.verify_bits);
        assert_eq!(a, b);
    }

    #[test]
    fn pass_zero_is_identity_order() {
        let mut p = Permutations::new(100, 5);
        p.ensure(3);
        assert_eq!(p.order[0], (0..100).collect::<Vec<u32>>());
        assert_ne!(p.order[1], p.order[0]);
        assert_ne!(p.order[1], p.order[2]);
        assert_eq!(Permutations::new(100, 5).order[0], p.order[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn reconciled_keys_match(n in 1usize..3000, q in 0.005f64..0.08, seed in any::<u64>()) {
            let (a, mut b) = noisy_pair(n, q, seed);
            let r = reconcile(&a, &mut b, q, seed);
            if let Ok(r) = r {
                prop_assert_eq!(&a, &b);
                prop_assert!(r.leaked_bits as usize <= 4 * n + 64);
            }
        }
    }
}
