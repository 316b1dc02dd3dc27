use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::estimate::CorrelatorCounts;
use super::gate::AbortReason;

/// Statistics of one acquisition packet, plus the cumulative values the
/// security gate acted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub packet_index: u64,
    /// End of the packet in Alice's local time, s.
    pub t: f64,
    pub duration_s: f64,
    /// `None` when the packet lacks the statistics for an estimate.
    pub qber: Option<f64>,
    pub s_value: Option<f64>,
    pub s_err: Option<f64>,
    pub raw_coincidences: u64,
    pub key_coincidences: u64,
    /// Key bits kept after removing the disclosed sample.
    pub sifted_bits: u64,
    pub key_sample: CorrelatorCounts,
    pub monitor: [CorrelatorCounts; 4],
    /// Coarse relative clock offset; `None` when synchronization failed.
    pub offset_ps: Option<f64>,
    pub cumulative_qber: Option<f64>,
    pub cumulative_s: Option<f64>,
    pub aborted: Option<AbortReason>,
}

impl SessionMetrics {
    pub fn raw_rate(&self) -> f64 {
        self.raw_coincidences as f64 / self.duration_s
    }

    pub fn key_rate(&self) -> f64 {
        self.sifted_bits as f64 / self.duration_s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// One row per packet: `t,qber,S,S_err,raw_rate,key_rate`. Missing estimates are empty cells.
pub fn write_metrics_csv<W: Write>(rows: &[SessionMetrics], mut w: W) -> io::Result<()> {
    writeln!(w, "t,qber,S,S_err,raw_rate,key_rate")?;
    for m in rows {
        writeln!(
            w,
            "{:.3},{},{},{},{:.3},{:.3}",
            m.t,
            opt(m.qber),
            opt(m.s_value),
            opt(m.s_err),
            m.raw_rate(),
            m.key_rate()
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = SessionMetrics {
            packet_index: 0,
            t: 1.2,
            duration_s: 1.2,
            qber: Some(0.03),
            s_value: None,
            s_err: None,
            raw_coincidences: 1200,
            key_coincidences: 300,
            sifted_bits: 270,
            key_sample: CorrelatorCounts::default(),
            monitor: [CorrelatorCounts::default(); 4],
            offset_ps: None,
            cumulative_qber: None,
            cumulative_s: None,
            aborted: None,
        };
        let mut out = Vec::new();
        write_metrics_csv(&[m], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "t,qber,S,S_err,raw_rate,key_rate\n1.200,0.030000,,,1000.000,225.000\n"
        );
    }
}
