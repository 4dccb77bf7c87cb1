//! Key-establishment sessions.
//!
//! A session calibrates Bob's detector rows through the fiber with randomly
//! ordered probes, sends uniformly random symbols as focused wavefronts,
//! discards what Bob could not decode, and compares a random sample of the
//! raw keys. The key is released only if the sampled error rate stays close
//! to what the link parameters predict.

mod message;
mod session;
mod transcript;

pub use message::{ProbeId, ProtocolMessage};
pub use session::{
    empirical_eve_information, estimate_error_rate, release_keys, run_calibration_phase,
    run_communication_phase, run_session, CalibrationPhase, CommunicationPhase, ErrorEstimate,
    EveConfig, PassThrough, Phase, Postprocessor, SessionChannels, SessionConfig, SignalModel,
    Source,
};
pub use transcript::{KeyStatus, SessionOutcome, SessionTranscript};
