use rand::Rng;
use serde::{Deserialize, Serialize};

/// Messages exchanged over the authenticated classical channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolMessage {
    /// Bob's detector readings for one calibration probe. The id is a random
    /// nonce known only to Alice, so the log leaks nothing about which mask
    /// was displayed.
    CalibIntensityReport {
        probe_id: ProbeId,
        counts: Vec<f64>,
    },
    CalibComplete,
    /// Positions Bob could not decode.
    DiscardList {
        indices: Vec<usize>,
    },
    /// Kept positions Alice asks Bob to reveal.
    SampleRequest {
        indices: Vec<usize>,
    },
    SampleReveal {
        symbols: Vec<usize>,
    },
    ErrorEstimate {
        qer: f64,
    },
    Abort {
        reason: String,
    },
}

/// Opaque probe token, 64 random bits rendered as hex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeId(String);

impl ProbeId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ProbeId(format!("{:016x}", rng.random::<u64>()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl ProtocolMessage {
    /// Index lists must be strictly increasing.
    pub fn is_well_formed(&self) -> bool {
        match self {
            ProtocolMessage::DiscardList { indices }
            | ProtocolMessage::SampleRequest { indices } => indices.windows(2).all(|w| w[0] < w[1]),
            ProtocolMessage::ErrorEstimate { qer } => (0.0..=1.0).contains(qer),
            ProtocolMessage::CalibIntensityReport { counts, .. } => {
                counts.iter().all(|c| c.is_finite() && *c >= 0.0)
            }
            _ => true,
        }
    }
}
