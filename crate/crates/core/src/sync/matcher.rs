use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::OffsetTrack;
use crate::detection::{ChannelMap, TimeTag};
use crate::qstate::Outcome;
use crate::scheme::Basis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub alice: TimeTag,
    pub bob: TimeTag,
    pub alice_basis: Basis,
    pub bob_basis: Basis,
    pub alice_outcome: Outcome,
    pub bob_outcome: Outcome,
    /// `t_a − t_b`, ps.
    pub delta: i64,
}

/// Pair Alice and Bob timestamps (both sorted) into index pairs.
///
/// Alice tags are visited in order. Each takes the unused Bob tag with the
/// smallest `|t_a − t_b − offset(t_a)|`, provided it is at most `window/2`;
/// exact ties go to the earlier Bob tag. The offset is rounded to whole ps
/// so acceptance is decided in integer arithmetic.
pub fn match_pairs<F>(a: &[u64], b: &[u64], offset: F, window_ps: u64) -> Vec<(usize, usize)>
where
    F: Fn(u64) -> f64,
{
    let w = i128::from(window_ps);
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let target = i128::from(ta) - offset(ta).round() as i128;
        let start = b.partition_point(|&tb| 2 * i128::from(tb) < 2 * target - w);
        let mut best: Option<(i128, usize)> = None;
        for (j, &tb) in b.iter().enumerate().skip(start) {
            let r = target - i128::from(tb);
            if 2 * -r > w {
                break;
            }
            if used[j] {
                continue;
            }
            if best.is_none_or(|(d, _)| r.abs() < d) {
                best = Some((r.abs(), j));
            }
        }
        if let Some((_, j)) = best {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Quadratic reference for [`match_pairs`]: scans every Bob tag for every Alice tag.
pub fn brute_force_pairs<F>(a: &[u64], b: &[u64], offset: F, window_ps: u64) -> Vec<(usize, usize)>
where
    F: Fn(u64) -> f64,
{
    let w = i128::from(window_ps);
    let mut used = vec![false; b.len()];
    let mut out = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        let off = offset(ta).round() as i128;
        let mut best: Option<(i128, usize)> = None;
        for (j, &tb) in b.iter().enumerate() {
            let d = (i128::from(ta) - i128::from(tb) - off).abs();
            if used[j] || 2 * d > w {
                continue;
            }
            match best {
                Some((bd, bj)) if bd < d || (bd == d && bj < j) => {}
                _ => best = Some((d, j)),
            }
        }
        if let Some((_, j)) = best {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

fn build_records<F>(a: &[TimeTag], b: &[TimeTag], offset: F, window_ps: u64, map: &ChannelMap) -> Vec<CoincidenceRecord>
where
    F: Fn(u64) -> f64,
{
    // Tags on unmapped channels never take part in a coincidence.
    let a: Vec<TimeTag> = a.iter().copied().filter(|t| map.lookup(t.channel).is_some()).collect();
    let b: Vec<TimeTag> = b.iter().copied().filter(|t| map.lookup(t.channel).is_some()).collect();
    let ta: Vec<u64> = a.iter().map(|t| t.timestamp).collect();
    let tb: Vec<u64> = b.iter().map(|t| t.timestamp).collect();
    match_pairs(&ta, &tb, offset, window_ps)
        .into_iter()
        .map(|(i, j)| {
            let (ia, ib) = (map.lookup(a[i].channel).unwrap(), map.lookup(b[j].channel).unwrap());
            CoincidenceRecord {
                alice: a[i],
                bob: b[j],
                alice_basis: ia.basis,
                bob_basis: ib.basis,
                alice_outcome: ia.outcome,
                bob_outcome: ib.outcome,
                delta: a[i].timestamp as i64 - b[j].timestamp as i64,
            }
        })
        .collect()
}

pub fn match_coincidences(
    a: &[TimeTag],
    b: &[TimeTag],
    offset_ps: f64,
    window_ps: u64,
    map: &ChannelMap,
) -> Vec<CoincidenceRecord> {
    build_records(a, b, |_| offset_ps, window_ps, map)
}

/// Matching against a piecewise offset recovered by [`super::track_offset`].
pub fn match_tracked(
    a: &[TimeTag],
    b: &[TimeTag],
    track: &OffsetTrack,
    window_ps: u64,
    map: &ChannelMap,
) -> Vec<CoincidenceRecord> {
    build_records(a, b, |t| track.offset_at(t), window_ps, map)
}

pub fn write_coincidence_csv<W: Write>(records: &[CoincidenceRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "t_a,t_b,delta,basis_a,basis_b,out_a,out_b")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.alice.timestamp,
            r.bob.timestamp,
            r.delta,
            r.alice_basis,
            r.bob_basis,
            r.alice_outcome.sign(),
            r.bob_outcome.sign()
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted_random(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<u64> {
        let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn single_pair_at_offset() {
        let p = match_pairs(&[1_000_500], &[500], |_| 1e6, 800);
        assert_eq!(p, vec![(0, 0)]);
    }

    #[test]
    fn window_boundary() {
        // residual 900 ps
        assert!(match_pairs(&[10_900], &[10_000], |_| 0.0, 1600).is_empty());
        assert_eq!(match_pairs(&[10_900], &[10_000], |_| 0.0, 2000), vec![(0, 0)]);
        assert_eq!(match_pairs(&[10_900], &[10_000], |_| 0.0, 1800), vec![(0, 0)]);
        assert!(match_pairs(&[10_900], &[10_000], |_| 0.0, 1799).is_empty());
    }

    #[test]
    fn nearest_wins_then_earlier() {
        assert_eq!(match_pairs(&[1000], &[700, 950, 1100], |_| 0.0, 800), vec![(0, 1)]);
        assert_eq!(match_pairs(&[1000], &[900, 1100], |_| 0.0, 800), vec![(0, 0)]);
        // second Alice tag gets the remaining candidate
        assert_eq!(match_pairs(&[1000, 1010], &[990], |_| 0.0, 800), vec![(0, 0)]);
        assert_eq!(match_pairs(&[1000, 1010], &[990, 1200], |_| 0.0, 800), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn sweep_equals_brute_force_on_dense_instances() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = sorted_random(&mut rng, 1000, 500_000);
            let b = sorted_random(&mut rng, 1000, 500_000);
            let off = rng.random_range(-2000.0..2000.0);
            assert_eq!(match_pairs(&a, &b, |_| off, 800), brute_force_pairs(&a, &b, |_| off, 800), "seed {seed}");
        }
    }

    #[test]
    fn accidental_rate_matches_product_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (rate, dur_ps, w) = (1e6, 2e12, 800u64);
        let n = (rate * dur_ps * 1e-12) as usize;
        let a = sorted_random(&mut rng, n, dur_ps as u64);
        let b = sorted_random(&mut rng, n, dur_ps as u64);
        let got = match_pairs(&a, &b, |_| 0.0, w).len() as f64;
        // +1 for the inclusive integer window
        let expected = rate * rate * (w + 1) as f64 * 1e-12 * dur_ps * 1e-12;
        assert!((got / expected - 1.0).abs() < 0.1, "{got} vs {expected}");
    }

    #[test]
    fn records_carry_channel_labels() {
        let map = ChannelMap::standard();
        let a = [TimeTag { timestamp: 5000, channel: 0 }, TimeTag { timestamp: 9000, channel: 99 }];
        let b = [TimeTag { timestamp: 4000, channel: 7 }, TimeTag { timestamp: 8000, channel: 6 }];
        let r = match_coincidences(&a, &b, 1000.0, 800, &map);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].delta, 1000);
        assert_eq!((r[0].alice_basis, r[0].bob_basis), (Basis::Ak, Basis::B0));
        assert_eq!((r[0].alice_outcome, r[0].bob_outcome), (Outcome::Plus, Outcome::Minus));
        let mut buf = Vec::new();
        write_coincidence_csv(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t_a,t_b,delta,basis_a,basis_b,out_a,out_b\n5000,4000,1000,Ak,B0,1,-1\n");
    }

    proptest! {
        #[test]
        fn matching_is_injective_and_within_window(
            mut a in prop::collection::vec(0u64..100_000, 0..200),
            mut b in prop::collection::vec(0u64..100_000, 0..200),
            off in -3000i64..3000,
            w in 1u64..3000,
        ) {
            a.sort_unstable();
            b.sort_unstable();
            let pairs = match_pairs(&a, &b, |_| off as f64, w);
            prop_assert_eq!(&pairs, &brute_force_pairs(&a, &b, |_| off as f64, w));
            let mut seen_b = std::collections::HashSet::new();
            let mut last_a = None;
            for &(i, j) in &pairs {
                prop_assert!(seen_b.insert(j));
                prop_assert!(last_a < Some(i));
                last_a = Some(i);
                let r = a[i] as i64 - b[j] as i64 - off;
                prop_assert!(2 * r.unsigned_abs() <= w);
            }
        }
    }
}
