//! Distributed transient simulation over torn transmission lines.
//!
//! A partitioned circuit advances in windows no longer than the smallest
//! interfacial propagation delay. Each window every worker solves its own
//! subcircuit against delayed peer waveforms, then all port waveforms are
//! exchanged behind a barrier; one round per window yields the monolithic
//! answer. A waveform-relaxation baseline and the closed-form computation
//! counts are included for comparison, along with in-process and TCP
//! loopback transports that produce bit-identical results.

pub mod counts;
pub mod engine;
pub mod message;
pub mod transport;

pub use counts::{predict_counts, CountMethod};
pub use engine::{
    exchange, run_monolithic, run_mtm, run_mtm_lossy, run_wr_baseline, MtmConfig, MtmError,
    MtmOutcome, RunStats, WrOptions,
};
pub use message::{PortWaveformMessage, ProtocolError};
pub use transport::TransportKind;

/// Crude verbosity gate driven by the `MTM_LOG` environment variable
/// (`debug` or `info`; anything else is silent).
pub fn log_level() -> u8 {
    static LEVEL: std::sync::OnceLock<u8> = std::sync::OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("MTM_LOG").as_deref() {
        Ok("debug") => 2,
        Ok("info") => 1,
        _ => 0,
    })
}

#[macro_export]
macro_rules! log_info {
    ($($arg:tt)*) => {
        if $crate::log_level() >= 1 {
            eprintln!("[mtm] {}", format!($($arg)*));
        }
    };
}

#[macro_export]
macro_rules! log_debug {
    ($($arg:tt)*) => {
        if $crate::log_level() >= 2 {
            eprintln!("[mtm:debug] {}", format!($($arg)*));
        }
    };
}
