//! Routing outcomes shared by every pipeline phase.

use serde::{Deserialize, Serialize};

/// Three-way routing decision produced by a phase.
///
/// Phase 2 never emits `Benign`; phase 4 never emits `Pass`. The variant
/// order encodes the severity ordering `Benign < Pass < Infected` used by
/// the threshold-monotonicity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Benign,
    Pass,
    Infected,
}

/// The definite outcome a packet leaves the pipeline with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalVerdict {
    Benign,
    Infected,
}

impl FinalVerdict {
    /// Binary label as used in labeled datasets: 0 benign, 1 infected.
    pub fn label(self) -> u8 {
        match self {
            FinalVerdict::Benign => 0,
            FinalVerdict::Infected => 1,
        }
    }
}

impl From<FinalVerdict> for Verdict {
    fn from(v: FinalVerdict) -> Self {
        match v {
            FinalVerdict::Benign => Verdict::Benign,
            FinalVerdict::Infected => Verdict::Infected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn severity_ordering() {
        assert!(Verdict::Benign < Verdict::Pass);
        assert!(Verdict::Pass < Verdict::Infected);
    }

    #[test]
    fn serializes_lowercase() {
        assert_eq!(
            serde_json::to_string(&Verdict::Infected).unwrap(),
            "\"infected\""
        );
        assert_eq!(
            serde_json::to_string(&FinalVerdict::Benign).unwrap(),
            "\"benign\""
        );
    }
}
