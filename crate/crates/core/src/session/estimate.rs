use serde::{Deserialize, Serialize};

use crate::qstate::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("insufficient statistics: {what} has no counts")]
pub struct InsufficientStatistics {
    pub what: &'static str,
}

/// Joint outcome counts `N(sa, sb)` for one basis pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelatorCounts {
    pub pp: u64,
    pub mm: u64,
    pub pm: u64,
    pub mp: u64,
}

impl CorrelatorCounts {
    pub fn new(pp: u64, mm: u64, pm: u64, mp: u64) -> Self {
        Self { pp, mm, pm, mp }
    }

    pub fn record(&mut self, a: Outcome, b: Outcome) {
        match (a, b) {
            (Outcome::Plus, Outcome::Plus) => self.pp += 1,
            (Outcome::Minus, Outcome::Minus) => self.mm += 1,
            (Outcome::Plus, Outcome::Minus) => self.pm += 1,
            (Outcome::Minus, Outcome::Plus) => self.mp += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.pp + self.mm + self.pm + self.mp
    }

    pub fn agree(&self) -> u64 {
        self.pp + self.mm
    }

    pub fn disagree(&self) -> u64 {
        self.pm + self.mp
    }

    pub fn merge(&mut self, other: &CorrelatorCounts) {
        self.pp += other.pp;
        self.mm += other.mm;
        self.pm += other.pm;
        self.mp += other.mp;
    }

    pub fn correlation(&self) -> Result<f64, InsufficientStatistics> {
        correlation_from_counts(self.pp, self.mm, self.pm, self.mp)
    }

    /// Poisson-propagated standard error of [`Self::correlation`]: `√((1−E²)/N)`.
    pub fn correlation_error(&self) -> Result<f64, InsufficientStatistics> {
        let e = self.correlation()?;
        Ok(((1.0 - e * e) / self.total() as f64).sqrt())
    }
}

pub fn correlation_from_counts(pp: u64, mm: u64, pm: u64, mp: u64) -> Result<f64, InsufficientStatistics> {
    let total = pp + mm + pm + mp;
    if total == 0 {
        return Err(InsufficientStatistics { what: "correlator" });
    }
    Ok(((pp + mm) as f64 - (pm + mp) as f64) / total as f64)
}

/// `(1 − E)/2` from key-basis counts.
pub fn estimate_qber(key: &CorrelatorCounts) -> Result<f64, InsufficientStatistics> {
    key.correlation()
        .map(|e| (1.0 - e) / 2.0)
        .map_err(|_| InsufficientStatistics { what: "key sample" })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshEstimate {
    pub s: f64,
    pub s_err: f64,
    pub correlators: [f64; 4],
}

/// `S = E00 + E01 + E10 − E11` over `[(A0,B0), (A0,B1), (A1,B0), (A1,B1)]`,
/// with independent Poisson errors on every count.
pub fn estimate_chsh(counts: &[CorrelatorCounts; 4]) -> Result<ChshEstimate, InsufficientStatistics> {
    let mut correlators = [0.0; 4];
    let mut var = 0.0;
    for (i, c) in counts.iter().enumerate() {
        correlators[i] = c
            .correlation()
            .map_err(|_| InsufficientStatistics { what: "monitor correlator" })?;
        var += c.correlation_error()?.powi(2);
    }
    let s = correlators[0] + correlators[1] + correlators[2] - correlators[3];
    Ok(ChshEstimate {
        s,
        s_err: var.sqrt(),
        correlators,
    })
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{BasisAngle, PairState};
    use crate::scheme::{BasisScheme, MONITOR_PAIRS};
    use proptest::prelude::*;

    #[test]
    fn correlation_examples() {
        assert_eq!(correlation_from_counts(50, 50, 0, 0), Ok(1.0));
        assert_eq!(correlation_from_counts(25, 25, 25, 25), Ok(0.0));
        assert!((correlation_from_counts(483, 483, 17, 17).unwrap() - 0.932).abs() < 1e-12);
        assert!(correlation_from_counts(0, 0, 0, 0).is_err());
    }

    #[test]
    fn qber_examples() {
        let from_e = |e: f64| {
            let n = 1_000_000.0;
            let agree = ((1.0 + e) / 2.0 * n).round() as u64;
            estimate_qber(&CorrelatorCounts::new(agree / 2, agree - agree / 2, 0, 1_000_000 - agree)).unwrap()
        };
        assert_eq!(from_e(1.0), 0.0);
        assert!((from_e(0.9326) - 0.0337).abs() < 1e-6);
        assert!((from_e(0.920) - 0.040).abs() < 1e-6);
    }

    /// Counts proportional to the analytic joint probabilities.
    fn analytic_counts(state: &PairState, n: f64) -> [CorrelatorCounts; 4] {
        let scheme = BasisScheme::default();
        MONITOR_PAIRS.map(|(a, b)| {
            let (aa, bb): (BasisAngle, BasisAngle) = (scheme.angle(a), scheme.angle(b));
            let c = |sa, sb| (state.joint_probability(aa, bb, sa, sb) * n).round() as u64;
            CorrelatorCounts::new(
                c(Outcome::Plus, Outcome::Plus),
                c(Outcome::Minus, Outcome::Minus),
                c(Outcome::Plus, Outcome::Minus),
                c(Outcome::Minus, Outcome::Plus),
            )
        })
    }

    #[test]
    fn chsh_examples() {
        let n = 1e9;
        let s = |v: f64| estimate_chsh(&analytic_counts(&PairState::isotropic(v).unwrap(), n)).unwrap().s;
        assert!((s(1.0) - 2.828).abs() < 1e-3);
        assert!((s(0.9326) - 2.638).abs() < 1e-3);
        assert!((s(0.838) - 2.370).abs() < 1e-3);
        let mut c = analytic_counts(&PairState::ideal(), 100.0);
        c[2] = CorrelatorCounts::default();
        assert!(estimate_chsh(&c).is_err());
    }

    /// Error propagation done numerically over the sixteen counts.
    fn numeric_s_err(counts: &[CorrelatorCounts; 4]) -> f64 {
        let s_of = |c: &[[f64; 4]; 4]| {
            let e = |k: [f64; 4]| (k[0] + k[1] - k[2] - k[3]) / k.iter().sum::<f64>();
            e(c[0]) + e(c[1]) + e(c[2]) - e(c[3])
        };
        let base: [[f64; 4]; 4] = counts.map(|c| [c.pp as f64, c.mm as f64, c.pm as f64, c.mp as f64]);
        let mut var = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let h = 1e-3;
                let (mut up, mut dn) = (base, base);
                up[i][j] += h;
                dn[i][j] -= h;
                let d = (s_of(&up) - s_of(&dn)) / (2.0 * h);
                var += d * d * base[i][j];
            }
        }
        var.sqrt()
    }

    #[test]
    fn poisson_error_matches_numeric_propagation() {
        let counts = [
            CorrelatorCounts::new(420, 410, 40, 35),
            CorrelatorCounts::new(400, 395, 60, 70),
            CorrelatorCounts::new(380, 390, 61, 58),
            CorrelatorCounts::new(50, 48, 402, 399),
        ];
        let est = estimate_chsh(&counts).unwrap();
        assert!((est.s_err - numeric_s_err(&counts)).abs() < 1e-6);
    }

    #[test]
    fn entropy_values() {
        assert!((binary_entropy(0.03) - 0.1944).abs() < 1e-4);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-12);
        assert_eq!(binary_entropy(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn correlation_bounded(pp in 0u64..1000, mm in 0u64..1000, pm in 0u64..1000, mp in 0u64..1000) {
            prop_assume!(pp + mm + pm + mp > 0);
            let e = correlation_from_counts(pp, mm, pm, mp).unwrap();
            prop_assert!((-1.0..=1.0).contains(&e));
            let q = estimate_qber(&CorrelatorCounts::new(pp, mm, pm, mp)).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
        }
    }
}
