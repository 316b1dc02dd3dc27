//! The asymmetric Ekert protocol: sifting, monitoring, security gating and
//! the classical channel it runs over.

mod estimate;
mod gate;
mod metrics;
mod protocol;
mod transport;
mod wire;

pub use estimate::{
    binary_entropy, correlation_from_counts, estimate_chsh, estimate_qber, ChshEstimate, CorrelatorCounts,
    InsufficientStatistics,
};
pub use gate::{security_gate, AbortReason, GateConfig, GateDecision};
pub use metrics::{write_metrics_csv, SessionMetrics};
pub use protocol::{
    run_alice, run_bob, run_session, Packet, SessionConfig, SessionError, SessionFailure, SessionOutcome, SessionParams,
    SiftedKey,
};
pub use transport::{
    connect, encode_frame, listen, memory_pair, FramedTransport, MemoryTransport, TcpTransport, Transport,
    TransportError, MAX_FRAME_BYTES,
};
pub use wire::{Message, PROTOCOL_VERSION};
