use serde::{Deserialize, Serialize};

use super::SyncError;

/// Significance floor for a histogram peak, in counts.
const MIN_PEAK_COUNTS: u32 = 3;
/// Expected number of background bins reaching the threshold by chance.
const FALSE_PEAK_RATE: f64 = 1e-3;
/// Bins on each side of the peak used for the centroid.
const CENTROID_HALF_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Recovered `t_a − t_b`, ps.
    pub offset_ps: f64,
    pub peak_counts: u32,
    /// Mean counts per bin away from the peak.
    pub background: f64,
}

/// Peak of the `t_a − t_b` histogram over `[−span, span)`.
pub fn estimate_offset(a: &[u64], b: &[u64], search_span_ps: u64, bin_ps: u64) -> Result<OffsetEstimate, SyncError> {
    estimate_offset_around(a, b, 0.0, search_span_ps, bin_ps)
}

/// Like [`estimate_offset`] but searching `[center − span, center + span)`.
pub fn estimate_offset_around(
    a: &[u64],
    b: &[u64],
    center: f64,
    search_span_ps: u64,
    bin_ps: u64,
) -> Result<OffsetEstimate, SyncError> {
    if a.is_empty() || b.is_empty() {
        return Err(SyncError::EmptyStream);
    }
    if bin_ps == 0 || search_span_ps == 0 {
        return Err(SyncError::Config("search span and bin width must be positive".into()));
    }
    let span = search_span_ps as f64;
    let nbins = (2 * search_span_ps).div_ceil(bin_ps) as usize;
    let mut hist = vec![0u32; nbins];

    let mut lo = 0usize;
    for &ta in a {
        // residual = ta − tb − center; accept residual ∈ [−span, span)
        while lo < b.len() && (ta as i64 - b[lo] as i64) as f64 - center >= span {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() {
            let r = (ta as i64 - b[j] as i64) as f64 - center;
            if r < -span {
                break;
            }
            let bin = ((r + span) / bin_ps as f64) as usize;
            if bin < nbins {
                hist[bin] += 1;
            }
            j += 1;
        }
    }

    let (peak, &peak_counts) = hist
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
        .expect("at least one bin");

    let guard = CENTROID_HALF_WIDTH + (2_000 / bin_ps) as usize;
    let (mut bg_sum, mut bg_bins) = (0u64, 0usize);
    for (i, &c) in hist.iter().enumerate() {
        if i + guard < peak || i > peak + guard {
            bg_sum += u64::from(c);
            bg_bins += 1;
        }
    }
    let background = if bg_bins > 0 {
        bg_sum as f64 / bg_bins as f64
    } else {
        0.0
    };

    let threshold = (5.0 * background)
        .max(poisson_threshold(background, nbins) as f64)
        .max(f64::from(MIN_PEAK_COUNTS));
    if f64::from(peak_counts) < threshold {
        return Err(SyncError::NoPeak {
            peak: peak_counts,
            background,
        });
    }

    let lo_bin = peak.saturating_sub(CENTROID_HALF_WIDTH);
    let hi_bin = (peak + CENTROID_HALF_WIDTH).min(nbins - 1);
    let (mut wsum, mut xsum) = (0.0, 0.0);
    for (i, &count) in hist.iter().enumerate().take(hi_bin + 1).skip(lo_bin) {
        let w = (f64::from(count) - background).max(0.0);
        wsum += w;
        xsum += w * bin_center(i, span, bin_ps);
    }
    let rel = if wsum > 0.0 {
        xsum / wsum
    } else {
        bin_center(peak, span, bin_ps)
    };
    Ok(OffsetEstimate {
        offset_ps: center + rel,
        peak_counts,
        background,
    })
}

fn bin_center(i: usize, span: f64, bin_ps: u64) -> f64 {
    -span + (i as f64 + 0.5) * bin_ps as f64
}

/// Smallest `k` with `bins · P(Poisson(μ) ≥ k) < FALSE_PEAK_RATE`.
fn poisson_threshold(mu: f64, bins: usize) -> u32 {
    if mu <= 0.0 {
        return 1;
    }
    let target = FALSE_PEAK_RATE / bins as f64;
    let mut log_pmf = -mu;
    let mut cdf = 0.0;
    let mut k = 0u32;
    loop {
        cdf += log_pmf.exp();
        k += 1;
        if 1.0 - cdf < target || k > 100_000 {
            return k;
        }
        log_pmf += mu.ln() - f64::from(k).ln();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Half-width of the coarse offset search, ps.
    pub search_span_ps: u64,
    pub coarse_bin_ps: u64,
    /// Length of the segments that get their own offset, s.
    pub segment_s: f64,
    pub fine_span_ps: u64,
    pub fine_bin_ps: u64,
    /// Total coincidence window, ps.
    pub window_ps: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            search_span_ps: 5_000_000,
            coarse_bin_ps: 200,
            segment_s: 0.1,
            fine_span_ps: 5_000,
            fine_bin_ps: 200,
            window_ps: 800,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        if self.window_ps == 0 || self.coarse_bin_ps == 0 || self.fine_bin_ps == 0 {
            return Err(SyncError::Config("window and bin widths must be positive".into()));
        }
        if self.search_span_ps == 0 || self.fine_span_ps == 0 {
            return Err(SyncError::Config("search spans must be positive".into()));
        }
        if !(self.segment_s > 0.0) {
            return Err(SyncError::Config("segment_s must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant relative offset over Alice's local time axis.
///
/// Segments are aligned to multiples of the segment length, so with a
/// segment length dividing the clock discipline interval every re-anchoring
/// step falls on a segment boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetTrack {
    pub coarse: OffsetEstimate,
    pub origin_ps: u64,
    pub segment_ps: u64,
    pub offsets: Vec<f64>,
}

impl OffsetTrack {
    pub fn constant(offset_ps: f64) -> Self {
        Self {
            coarse: OffsetEstimate {
                offset_ps,
                peak_counts: 0,
                background: 0.0,
            },
            origin_ps: 0,
            segment_ps: u64::MAX,
            offsets: vec![offset_ps],
        }
    }

    pub fn offset_at(&self, t_a: u64) -> f64 {
        let idx = (t_a.saturating_sub(self.origin_ps) / self.segment_ps) as usize;
        self.offsets[idx.min(self.offsets.len() - 1)]
    }
}

/// Coarse offset over the whole stream, refined independently per segment.
/// Segments without a significant peak inherit the nearest refined value.
pub fn track_offset(a: &[u64], b: &[u64], cfg: &SyncConfig) -> Result<OffsetTrack, SyncError> {
    let coarse = estimate_offset(a, b, cfg.search_span_ps, cfg.coarse_bin_ps)?;
    let segment_ps = ((cfg.segment_s * 1e12).round() as u64).max(1);
    let first = a[0] / segment_ps;
    let last = a[a.len() - 1] / segment_ps;
    let mut refined: Vec<Option<f64>> = Vec::with_capacity((last - first + 1) as usize);
    let margin = (cfg.fine_span_ps + cfg.window_ps) as f64;
    for seg in first..=last {
        let (start, end) = (seg * segment_ps, (seg + 1) * segment_ps);
        let a_lo = a.partition_point(|&t| t < start);
        let a_hi = a.partition_point(|&t| t < end);
        if a_lo == a_hi {
            refined.push(None);
            continue;
        }
        let b_start = (start as f64 - coarse.offset_ps - margin).max(0.0) as u64;
        let b_end = (end as f64 - coarse.offset_ps + margin).max(0.0) as u64;
        let b_lo = b.partition_point(|&t| t < b_start);
        let b_hi = b.partition_point(|&t| t < b_end);
        let est = estimate_offset_around(&a[a_lo..a_hi], &b[b_lo..b_hi], coarse.offset_ps, cfg.fine_span_ps, cfg.fine_bin_ps);
        refined.push(est.ok().map(|e| e.offset_ps));
    }

    let offsets = fill_gaps(&refined, coarse.offset_ps);
    Ok(OffsetTrack {
        coarse,
        origin_ps: first * segment_ps,
        segment_ps,
        offsets,
    })
}

fn fill_gaps(values: &[Option<f64>], fallback: f64) -> Vec<f64> {
    let known: Vec<(usize, f64)> = values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    if known.is_empty() {
        return vec![fallback; values.len()];
    }
    (0..values.len())
        .map(|i| {
            let pos = known.partition_point(|&(k, _)| k < i);
            let right = known.get(pos);
            let left = pos.checked_sub(1).map(|p| known[p]);
            match (left, right) {
                (_, Some(&(k, v))) if k == i => v,
                (Some((l, lv)), Some(&(r, rv))) => {
                    if i - l <= r - i {
                        lv
                    } else {
                        rv
                    }
                }
                (Some((_, v)), None) | (None, Some(&(_, v))) => v,
                (None, None) => fallback,
            }
        })
        .collect()
}
