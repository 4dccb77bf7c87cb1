use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::message::ProtocolMessage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStatus {
    Kept,
    Discarded,
    /// Revealed during error estimation and dropped from the key.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionOutcome {
    Released { key_length: usize },
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub messages: Vec<ProtocolMessage>,
    pub alice_key: Vec<usize>,
    /// Bob's decoded symbol per position; `None` where he discarded it.
    pub bob_key: Vec<Option<usize>>,
    pub status: Vec<KeyStatus>,
    pub estimated_qer: Option<f64>,
    /// Error rate expected from the link parameters without an eavesdropper.
    pub predicted_qer: Option<f64>,
    /// Mean focusing fidelity behind the prediction.
    pub shaping_fidelity: Option<f64>,
    pub eve_detected_in_calibration: bool,
    /// Number of pulses Eve measured.
    pub eve_observations: usize,
    pub outcome: Option<SessionOutcome>,
}

/// One line of the serialized transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
enum LogLine {
    Message(ProtocolMessage),
    Symbol {
        index: usize,
        alice: usize,
        bob: Option<usize>,
        status: KeyStatus,
    },
    Summary {
        estimated_qer: Option<f64>,
        predicted_qer: Option<f64>,
        #[serde(default)]
        shaping_fidelity: Option<f64>,
        eve_detected_in_calibration: bool,
        eve_observations: usize,
        outcome: Option<SessionOutcome>,
    },
}

impl SessionTranscript {
    pub fn is_aborted(&self) -> bool {
        matches!(self.outcome, Some(SessionOutcome::Aborted { .. }))
    }

    /// Alice's and Bob's symbols at the kept positions.
    pub fn final_keys(&self) -> (Vec<usize>, Vec<usize>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (i, st) in self.status.iter().enumerate() {
            if *st == KeyStatus::Kept {
                a.push(self.alice_key[i]);
                b.push(self.bob_key[i].expect("kept positions are decoded"));
            }
        }
        (a, b)
    }

    pub fn count(&self, status: KeyStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    /// Writes one tagged JSON object per line: messages in order, then one
    /// line per key position, then the summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut w, &LogLine::Message(m.clone()))?;
            w.write_all(b"\n")?;
        }
        for (index, (&alice, (&bob, &status))) in self
            .alice_key
            .iter()
            .zip(self.bob_key.iter().zip(&self.status))
            .enumerate()
        {
            serde_json::to_writer(
                &mut w,
                &LogLine::Symbol {
                    index,
                    alice,
                    bob,
                    status,
                },
            )?;
            w.write_all(b"\n")?;
        }
        let summary = LogLine::Summary {
            estimated_qer: self.estimated_qer,
            predicted_qer: self.predicted_qer,
            shaping_fidelity: self.shaping_fidelity,
            eve_detected_in_calibration: self.eve_detected_in_calibration,
            eve_observations: self.eve_observations,
            outcome: self.outcome.clone(),
        };
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut t = SessionTranscript::default();
        let mut summary_seen = false;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogLine = serde_json::from_str(&line)
                .map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?;
            match entry {
                LogLine::Message(m) => t.messages.push(m),
                LogLine::Symbol {
                    index,
                    alice,
                    bob,
                    status,
                } => {
                    if index != t.alice_key.len() {
                        return Err(Error::Malformed(format!(
                            "line {}: symbol {index} out of order",
                            n + 1
                        )));
                    }
                    t.alice_key.push(alice);
                    t.bob_key.push(bob);
                    t.status.push(status);
                }
                LogLine::Summary {
                    estimated_qer,
                    predicted_qer,
                    shaping_fidelity,
                    eve_detected_in_calibration,
                    eve_observations,
                    outcome,
                } => {
                    t.estimated_qer = estimated_qer;
                    t.predicted_qer = predicted_qer;
                    t.shaping_fidelity = shaping_fidelity;
                    t.eve_detected_in_calibration = eve_detected_in_calibration;
                    t.eve_observations = eve_observations;
                    t.outcome = outcome;
                    summary_seen = true;
                }
            }
        }
        if !summary_seen {
            return Err(Error::Malformed("transcript has no summary line".into()));
        }
        Ok(t)
    }
}
