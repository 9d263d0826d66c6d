//! Sender and receiver state machines, threshold classification, raw-key
//! assembly and QBER estimation.
//!
//! A single basis (H/V) is used throughout, so there is no sifting step:
//! every non-erasure cycle yields a key bit. Bit convention is H = 0, V = 1.

mod classify;
mod qber;
mod session;

pub use classify::{
    calibrate_thresholds, classify, classify_count, classify_gated, ClassifiedBit, ClassifierThresholds, Decision,
};
pub use qber::{estimate_qber, revealed_indices, usable_key, QberEstimate};
pub use session::{
    alice_run, bob_run, bob_run_stream, run_session, run_session_with_key, CycleRecord, QberPoint, SessionConfig,
    SessionReport, StreamAnalysis,
};
