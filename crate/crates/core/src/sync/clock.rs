use serde::{Deserialize, Serialize};

use super::SyncError;

/// A free-running oscillator periodically re-anchored to a common reference.
///
/// Between anchors the local time runs fast or slow by `drift`; at every
/// multiple of `discipline_interval_s` (true time) the accumulated error is
/// reset, up to a Gaussian `discipline_jitter_ps` that is fixed per interval.
/// An interval of zero means the clock is never re-anchored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockModel {
    pub offset_ps: i64,
    pub drift: f64,
    pub discipline_interval_s: f64,
    pub discipline_jitter_ps: f64,
    /// Seeds the per-interval anchoring jitter.
    pub seed: u64,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl ClockModel {
    pub fn identity() -> Self {
        Self {
            offset_ps: 0,
            drift: 0.0,
            discipline_interval_s: 0.0,
            discipline_jitter_ps: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SyncError> {
        if !(self.drift.abs() < 1e-6) {
            return Err(SyncError::Config(format!("|drift| = {} must be below 1e-6", self.drift)));
        }
        if !(self.discipline_interval_s >= 0.0 && self.discipline_interval_s.is_finite()) {
            return Err(SyncError::Config("discipline_interval_s must be finite and non-negative".into()));
        }
        if !(self.discipline_jitter_ps >= 0.0) {
            return Err(SyncError::Config("discipline_jitter_ps must be non-negative".into()));
        }
        Ok(())
    }

    fn interval_ps(&self) -> u64 {
        (self.discipline_interval_s * 1e12).round() as u64
    }

    /// Deviation of the local clock from `true_time + offset`, in ps.
    pub fn error_at(&self, true_time: u64) -> f64 {
        let interval = self.interval_ps();
        if interval == 0 {
            return self.drift * true_time as f64;
        }
        let k = true_time / interval;
        let phase = true_time - k * interval;
        let anchor = if self.discipline_jitter_ps > 0.0 {
            self.discipline_jitter_ps * hashed_normal(self.seed, k)
        } else {
            0.0
        };
        self.drift * phase as f64 + anchor
    }

    /// Local timestamp of an event at `true_time` (ps). Saturates at zero.
    pub fn localize(&self, true_time: u64) -> u64 {
        let shift = self.offset_ps as f64 + self.error_at(true_time);
        let shifted = true_time as i128 + shift.round() as i128;
        shifted.max(0) as u64
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Standard normal deviate that is a pure function of `(seed, index)`.
fn hashed_normal(seed: u64, index: u64) -> f64 {
    let h1 = splitmix64(seed ^ splitmix64(index));
    let h2 = splitmix64(h1);
    let u1 = ((h1 >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_offset() {
        let c = ClockModel::identity();
        for t in [0, 1, 12_345_678_901] {
            assert_eq!(c.localize(t), t);
        }
        let c = ClockModel {
            offset_ps: 1_000_000,
            ..ClockModel::identity()
        };
        assert_eq!(c.localize(0), 1_000_000);
    }

    #[test]
    fn disciplined_error_bounded_by_drift_times_interval() {
        let c = ClockModel {
            drift: 1e-9,
            discipline_interval_s: 1.0,
            ..ClockModel::identity()
        };
        let just_before = 5 * 1_000_000_000_000 - 1;
        let err = c.localize(just_before) as i64 - just_before as i64;
        assert!((0..=1000).contains(&err), "{err}");
        assert!(err >= 999);
        // reset at the anchor
        assert_eq!(c.localize(5 * 1_000_000_000_000), 5 * 1_000_000_000_000);
        let mut worst = 0.0f64;
        for i in 0..10_000u64 {
            let t = i * 987_654_321;
            worst = worst.max(c.error_at(t).abs());
        }
        assert!(worst <= 1000.0);
    }

    #[test]
    fn free_running_drift_accumulates() {
        let c = ClockModel {
            drift: 1e-9,
            ..ClockModel::identity()
        };
        assert_eq!(c.localize(10_000_000_000_000), 10_000_000_010_000);
    }

    #[test]
    fn anchor_jitter_is_per_interval_and_reproducible() {
        let c = ClockModel {
            discipline_interval_s: 1e-3,
            discipline_jitter_ps: 100.0,
            seed: 9,
            ..ClockModel::identity()
        };
        // constant within an interval
        assert_eq!(c.error_at(10), c.error_at(999_999_999));
        let errs: Vec<f64> = (0..20_000u64).map(|k| c.error_at(k * 1_000_000_000)).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(mean.abs() < 3.0, "{mean}");
        assert!((sd - 100.0).abs() < 3.0, "{sd}");
        assert_eq!(c.clone().error_at(5_000_000_000), c.error_at(5_000_000_000));
    }

    #[test]
    fn negative_offsets_saturate() {
        let c = ClockModel {
            offset_ps: -500,
            ..ClockModel::identity()
        };
        assert_eq!(c.localize(100), 0);
        assert_eq!(c.localize(1500), 1000);
    }

    #[test]
    fn validation() {
        let bad = ClockModel {
            drift: 2e-6,
            ..ClockModel::identity()
        };
        assert!(bad.validate().is_err());
        ClockModel::identity().validate().unwrap();
    }
}
