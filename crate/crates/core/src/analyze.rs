//! Offline analysis of QTAG streams: side-peak normalized `g²(0)`,
//! cross-correlation histogram, clock offset, QBER and CHSH.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{read_tags, ChannelMap, TagFileError, TimeTag};
use crate::scheme::{classify, Party, RoundUse};
use crate::session::{estimate_chsh, estimate_qber, ChshEstimate, CorrelatorCounts};
use crate::sync::{match_pairs, track_offset, SyncConfig, SyncError};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error("{path}: {source}")]
    TagFile {
        path: String,
        #[source]
        source: TagFileError,
    },
    #[error("synchronization: {0}")]
    Sync(#[from] SyncError),
    #[error("channel {channel} does not belong to {party}")]
    WrongParty { channel: u8, party: Party },
    #[error("no tags on channel {0}")]
    EmptyChannel(u8),
    #[error("side peaks are empty; g² is undefined")]
    NoSidePeaks,
    #[error("invalid analysis configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// The two detectors behind the 50:50 split.
    pub g2_channels: [u8; 2],
    pub pulse_period_ps: f64,
    /// Peaks are counted over `|τ − k·T| < g2_half_window_ps`.
    pub g2_half_window_ps: f64,
    /// Side peaks used on each side of zero delay.
    pub side_peaks: u32,
    pub histogram_span_ps: u64,
    pub histogram_bin_ps: u64,
    pub sync: SyncConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            g2_channels: [0, 1],
            pulse_period_ps: 3125.0,
            g2_half_window_ps: 800.0,
            side_peaks: 10,
            histogram_span_ps: 20_000,
            histogram_bin_ps: 100,
            sync: SyncConfig::default(),
        }
    }
}

impl AnalyzeConfig {
    pub fn validate(&self) -> Result<(), AnalyzeError> {
        if !(self.pulse_period_ps > 0.0) || !(self.g2_half_window_ps > 0.0) {
            return Err(AnalyzeError::Config("pulse period and g² window must be positive".into()));
        }
        if 2.0 * self.g2_half_window_ps > self.pulse_period_ps {
            return Err(AnalyzeError::Config("g² windows of neighbouring pulses overlap".into()));
        }
        if self.side_peaks == 0 || self.histogram_bin_ps == 0 {
            return Err(AnalyzeError::Config("side_peaks and histogram_bin_ps must be positive".into()));
        }
        Ok(self.sync.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2: f64,
    /// Poisson error on the ratio.
    pub g2_err: f64,
    pub center: u64,
    pub side_mean: f64,
    /// Counts at delays `−K·T … −T, T … K·T`.
    pub side_peaks: Vec<u64>,
}

/// Delays `t_b − t_a` binned over `[−span, span)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub start_ps: i64,
    pub bin_ps: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.start_ps as f64 + (i as f64 + 0.5) * self.bin_ps as f64
    }
}

/// Every pair with `|t_b − t_a − shift| < span`, binned.
pub fn cross_histogram(a: &[u64], b: &[u64], shift: f64, span_ps: u64, bin_ps: u64) -> Histogram {
    let span = span_ps as i64;
    let nbins = (2 * span_ps).div_ceil(bin_ps) as usize;
    let mut counts = vec![0u64; nbins];
    let shift = shift.round() as i64;
    let mut lo = 0usize;
    for &ta in a {
        let centre = ta as i64 + shift;
        while lo < b.len() && (b[lo] as i64) < centre - span {
            lo += 1;
        }
        for &tb in &b[lo..] {
            let d = tb as i64 - centre;
            if d >= span {
                break;
            }
            counts[((d + span) / bin_ps as i64) as usize] += 1;
        }
    }
    Histogram {
        start_ps: -span,
        bin_ps,
        counts,
    }
}

/// Side-peak normalized autocorrelation between two detectors of one station.
pub fn g2_side_peak(tags: &[TimeTag], cfg: &AnalyzeConfig) -> Result<G2Estimate, AnalyzeError> {
    cfg.validate()?;
    let [c0, c1] = cfg.g2_channels;
    let a: Vec<u64> = tags.iter().filter(|t| t.channel == c0).map(|t| t.timestamp).collect();
    let b: Vec<u64> = tags.iter().filter(|t| t.channel == c1).map(|t| t.timestamp).collect();
    if a.is_empty() {
        return Err(AnalyzeError::EmptyChannel(c0));
    }
    if b.is_empty() {
        return Err(AnalyzeError::EmptyChannel(c1));
    }
    let k = i64::from(cfg.side_peaks);
    let period = cfg.pulse_period_ps;
    let reach = (k as f64 + 0.5) * period;
    let mut peaks = vec![0u64; (2 * k + 1) as usize];
    let mut lo = 0usize;
    for &ta in &a {
        let ta = ta as f64;
        while lo < b.len() && (b[lo] as f64) < ta - reach {
            lo += 1;
        }
        for &tb in &b[lo..] {
            let d = tb as f64 - ta;
            if d >= reach {
                break;
            }
            let n = (d / period).round();
            if (d - n * period).abs() < cfg.g2_half_window_ps {
                peaks[(n as i64 + k) as usize] += 1;
            }
        }
    }
    let center = peaks[k as usize];
    let side_peaks: Vec<u64> = peaks.iter().enumerate().filter(|&(i, _)| i as i64 != k).map(|(_, &c)| c).collect();
    let side_total: u64 = side_peaks.iter().sum();
    if side_total == 0 {
        return Err(AnalyzeError::NoSidePeaks);
    }
    let side_mean = side_total as f64 / side_peaks.len() as f64;
    let g2 = center as f64 / side_mean;
    let rel = (1.0 / center.max(1) as f64 + 1.0 / side_total as f64).sqrt();
    Ok(G2Estimate {
        g2,
        g2_err: g2.max(1.0 / side_mean) * rel,
        center,
        side_mean,
        side_peaks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub g2: Option<G2Estimate>,
    /// Coarse `t_a − t_b` offset.
    pub offset_ps: Option<f64>,
    pub histogram: Option<Histogram>,
    pub coincidences: u64,
    pub key_counts: CorrelatorCounts,
    pub monitor_counts: [CorrelatorCounts; 4],
    pub qber: Option<f64>,
    pub chsh: Option<ChshEstimate>,
}

fn check_party(tags: &[TimeTag], map: &ChannelMap, party: Party) -> Result<(), AnalyzeError> {
    match tags.iter().find(|t| map.lookup(t.channel).is_none_or(|i| i.party != party)) {
        Some(t) => Err(AnalyzeError::WrongParty { channel: t.channel, party }),
        None => Ok(()),
    }
}

/// Analyze Alice's stream `a` and, when given, Bob's stream `b`. `g²` is
/// taken from `a`; the pair analysis needs both.
pub fn analyze(a: &[TimeTag], b: Option<&[TimeTag]>, map: &ChannelMap, cfg: &AnalyzeConfig) -> Result<AnalyzeReport, AnalyzeError> {
    cfg.validate()?;
    let mut report = AnalyzeReport {
        g2: g2_side_peak(a, cfg).ok(),
        offset_ps: None,
        histogram: None,
        coincidences: 0,
        key_counts: CorrelatorCounts::default(),
        monitor_counts: [CorrelatorCounts::default(); 4],
        qber: None,
        chsh: None,
    };
    let Some(b) = b else {
        return Ok(report);
    };
    check_party(a, map, Party::Alice)?;
    check_party(b, map, Party::Bob)?;
    let ta: Vec<u64> = a.iter().map(|t| t.timestamp).collect();
    let tb: Vec<u64> = b.iter().map(|t| t.timestamp).collect();
    let track = track_offset(&ta, &tb, &cfg.sync)?;
    let offset = track.coarse.offset_ps;
    report.offset_ps = Some(offset);
    report.histogram = Some(cross_histogram(&ta, &tb, -offset, cfg.histogram_span_ps, cfg.histogram_bin_ps));
    let pairs = match_pairs(&ta, &tb, |x| track.offset_at(x), cfg.sync.window_ps);
    report.coincidences = pairs.len() as u64;
    for (i, j) in pairs {
        let (ia, ib) = (map.lookup(a[i].channel).expect("checked"), map.lookup(b[j].channel).expect("checked"));
        match classify(ia.basis, ib.basis) {
            RoundUse::Key => report.key_counts.record(ia.outcome, ib.outcome),
            RoundUse::Monitor(k) => report.monitor_counts[k].record(ia.outcome, ib.outcome),
            RoundUse::Discard => {}
        }
    }
    report.qber = estimate_qber(&report.key_counts).ok();
    report.chsh = estimate_chsh(&report.monitor_counts).ok();
    Ok(report)
}

pub fn load_tags(path: &Path) -> Result<Vec<TimeTag>, AnalyzeError> {
    let wrap = |source| AnalyzeError::TagFile {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(|e| wrap(e.into()))?;
    read_tags(file).map(|(_, tags)| tags).map_err(wrap)
}

pub fn analyze_files(a: &Path, b: Option<&Path>, map: &ChannelMap, cfg: &AnalyzeConfig) -> Result<AnalyzeReport, AnalyzeError> {
    let ta = load_tags(a)?;
    let tb = b.map(load_tags).transpose()?;
    analyze(&ta, tb.as_deref(), map, cfg)
}
