//! Clock models, offset recovery and coincidence matching.

mod clock;
mod matcher;
mod offset;

pub use clock::ClockModel;
pub use matcher::{
    brute_force_pairs, match_coincidences, match_pairs, match_tracked, write_coincidence_csv, CoincidenceRecord,
};
pub use offset::{
    estimate_offset, estimate_offset_around, track_offset, OffsetEstimate, OffsetTrack, SyncConfig,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SyncError {
    #[error("tag stream is empty")]
    EmptyStream,
    #[error("no significant correlation peak (peak {peak} counts over background {background:.2})")]
    NoPeak { peak: u32, background: f64 },
    #[error("invalid sync configuration: {0}")]
    Config(String),
}
