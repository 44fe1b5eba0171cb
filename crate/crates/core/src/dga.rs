//! Phase 3: DGA-likeness scoring of query names.
//!
//! A score in [0, 1] (0 = non-DGA, 1 = DGA-generated) is compared against
//! lower/upper thresholds: at or below the lower bound the packet is
//! accepted, at or above the upper bound it is rejected, anything between
//! passes to phase 4.
//!
//! The built-in scorer is a character-bigram model trained on a benign
//! corpus: the mean negative log-likelihood of the registered label is
//! mapped through a logistic calibration. A remote scorer can be configured
//! as the primary; when it fails, the pipeline falls back to the built-in
//! model.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fld::{sld_label, SuffixRules};
use crate::verdict::Verdict;

/// Scoring alphabet: boundary marker, a–z, 0–9, hyphen, and a reserved
/// symbol for anything else.
const BOUNDARY: usize = 0;
const UNKNOWN: usize = 38;
const ALPHABET: usize = 39;

pub const DEFAULT_LOWER: f64 = 0.1;
pub const DEFAULT_UPPER: f64 = 0.9;
pub const DEFAULT_SMOOTHING: f64 = 0.01;
pub const DEFAULT_CALIBRATION_QUANTILES: (f64, f64) = (0.5, 0.99);
pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 200;

const MODEL_MAGIC: &str = "MONDEO-DGA-v1";

/// A DGA-likeness score with the id of the scorer that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgaScore {
    pub value: f64,
    pub scorer_id: String,
}

/// Accept/reject boundaries for [`decide`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgaThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl DgaThresholds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, DgaError> {
        if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
            return Err(DgaError::InvalidThresholds { lower, upper });
        }
        Ok(Self { lower, upper })
    }
}

impl Default for DgaThresholds {
    fn default() -> Self {
        Self {
            lower: DEFAULT_LOWER,
            upper: DEFAULT_UPPER,
        }
    }
}

/// Routes a score: at or below `lower` is immediate acceptance, at or
/// above `upper` immediate rejection, in between passes to the next phase.
/// Both boundaries are closed.
pub fn decide(score: &DgaScore, thresholds: &DgaThresholds) -> Verdict {
    if score.value <= thresholds.lower {
        Verdict::Benign
    } else if score.value >= thresholds.upper {
        Verdict::Infected
    } else {
        Verdict::Pass
    }
}

#[derive(Debug, Error)]
pub enum DgaError {
    #[error("training corpus too small: {got} domains (minimum {min})")]
    CorpusTooSmall { got: usize, min: usize },
    #[error("invalid thresholds: lower={lower}, upper={upper}")]
    InvalidThresholds { lower: f64, upper: f64 },
    #[error("invalid smoothing constant: {0}")]
    InvalidSmoothing(f64),
    #[error("invalid calibration quantiles: ({0}, {1})")]
    InvalidQuantiles(f64, f64),
    #[error("model file format error: {0}")]
    ModelFormat(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Remote scorer failures. Both variants make the pipeline fall back to
/// the built-in scorer.
#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("remote scorer unavailable: {0}")]
    Unavailable(String),
    #[error("remote scorer returned a malformed payload: {0}")]
    Malformed(String),
}

pub const MIN_CORPUS: usize = 1000;

/// Upper bound on the calibration slope; see [`BigramModel::train`].
const MAX_STEEPNESS: f64 = 12.0;

/// Character-bigram domain scorer.
///
/// Immutable after training; scoring is safe from any number of threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    /// `log_probs[prev * ALPHABET + next]` = log P(next | prev), add-k
    /// smoothed so every row sums to 1 before the log.
    log_probs: Vec<f64>,
    smoothing: f64,
    /// Mean-NLL value mapped to 0.5 by the calibration.
    midpoint: f64,
    /// Logistic slope; positive, so the score increases with NLL.
    steepness: f64,
}

impl BigramModel {
    /// Trains an add-k smoothed bigram table on the registered labels of a
    /// benign corpus and calibrates the NLL→score mapping from the corpus's
    /// own NLL distribution: the upper quantile becomes the logistic
    /// midpoint, so roughly that fraction of benign domains scores below
    /// 0.5.
    pub fn train<I, S>(
        corpus: I,
        rules: &SuffixRules,
        smoothing: f64,
        calibration_quantiles: (f64, f64),
    ) -> Result<Self, DgaError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if !smoothing.is_finite() || smoothing <= 0.0 {
            return Err(DgaError::InvalidSmoothing(smoothing));
        }
        let (q_lo, q_hi) = calibration_quantiles;
        if !(0.0 < q_lo && q_lo < q_hi && q_hi <= 1.0) {
            return Err(DgaError::InvalidQuantiles(q_lo, q_hi));
        }

        let labels: Vec<String> = corpus
            .into_iter()
            .map(|d| sld_label(d.as_ref(), rules))
            .collect();
        if labels.len() < MIN_CORPUS {
            return Err(DgaError::CorpusTooSmall {
                got: labels.len(),
                min: MIN_CORPUS,
            });
        }

        let mut counts = vec![0u64; ALPHABET * ALPHABET];
        for label in &labels {
            for (prev, next) in transitions(label) {
                counts[prev * ALPHABET + next] += 1;
            }
        }
        let mut log_probs = vec![0f64; ALPHABET * ALPHABET];
        for prev in 0..ALPHABET {
            let row = &counts[prev * ALPHABET..(prev + 1) * ALPHABET];
            let total: u64 = row.iter().sum();
            let denom = total as f64 + smoothing * ALPHABET as f64;
            for next in 0..ALPHABET {
                log_probs[prev * ALPHABET + next] = ((row[next] as f64 + smoothing) / denom).ln();
            }
        }

        let mut model = Self {
            log_probs,
            smoothing,
            midpoint: 0.0,
            steepness: 1.0,
        };
        let mut nlls: Vec<f64> = labels.iter().map(|l| model.mean_nll(l)).collect();
        nlls.sort_unstable_by(f64::total_cmp);
        let midpoint = quantile(&nlls, q_hi);
        let spread = (midpoint - quantile(&nlls, q_lo)).max(1e-6);
        // Slope chosen so the lower calibration quantile maps to score 0.1,
        // capped so the logistic cannot saturate to exactly 0 or 1 over the
        // NLL range word-like labels produce (score ordering stays strict).
        model.midpoint = midpoint;
        model.steepness = (9f64.ln() / spread).min(MAX_STEEPNESS);
        Ok(model)
    }

    /// Scores a domain's registered label. Deterministic for a fixed model;
    /// characters outside the alphabet fall into the reserved
    /// low-probability symbol.
    pub fn score(&self, domain: &str, rules: &SuffixRules) -> DgaScore {
        let label = sld_label(domain, rules);
        let nll = self.mean_nll(&label);
        let value = logistic(self.steepness * (nll - self.midpoint));
        DgaScore {
            value,
            scorer_id: "builtin-bigram".to_string(),
        }
    }

    /// Mean per-transition negative log-likelihood of a label, including
    /// its boundary transitions.
    pub fn mean_nll(&self, label: &str) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (prev, next) in transitions(label) {
            sum -= self.log_probs[prev * ALPHABET + next];
            count += 1;
        }
        sum / count as f64
    }

    pub fn midpoint(&self) -> f64 {
        self.midpoint
    }

    pub fn steepness(&self) -> f64 {
        self.steepness
    }

    /// Writes the model as its versioned JSON blob.
    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), DgaError> {
        let file = BigramModelFile {
            magic: MODEL_MAGIC.to_string(),
            smoothing: self.smoothing,
            midpoint: self.midpoint,
            steepness: self.steepness,
            log_probs: self.log_probs.clone(),
        };
        serde_json::to_writer(&mut writer, &file)
            .map_err(|e| DgaError::ModelFormat(e.to_string()))?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<(), DgaError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load<R: io::Read>(reader: R) -> Result<Self, DgaError> {
        let file: BigramModelFile =
            serde_json::from_reader(reader).map_err(|e| DgaError::ModelFormat(e.to_string()))?;
        if file.magic != MODEL_MAGIC {
            return Err(DgaError::ModelFormat(format!("bad magic {:?}", file.magic)));
        }
        if file.log_probs.len() != ALPHABET * ALPHABET {
            return Err(DgaError::ModelFormat(format!(
                "bigram table has {} entries, expected {}",
                file.log_probs.len(),
                ALPHABET * ALPHABET
            )));
        }
        if file.log_probs.iter().any(|p| !p.is_finite() || *p > 0.0) {
            return Err(DgaError::ModelFormat(
                "log probabilities out of range".to_string(),
            ));
        }
        if !file.steepness.is_finite() || file.steepness <= 0.0 || !file.midpoint.is_finite() {
            return Err(DgaError::ModelFormat(
                "bad calibration parameters".to_string(),
            ));
        }
        Ok(Self {
            log_probs: file.log_probs,
            smoothing: file.smoothing,
            midpoint: file.midpoint,
            steepness: file.steepness,
        })
    }

    pub fn load_file(path: &Path) -> Result<Self, DgaError> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct BigramModelFile {
    magic: String,
    smoothing: f64,
    midpoint: f64,
    steepness: f64,
    log_probs: Vec<f64>,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn symbol(c: char) -> usize {
    match c {
        'a'..='z' => 1 + (c as usize - 'a' as usize),
        '0'..='9' => 27 + (c as usize - '0' as usize),
        '-' => 37,
        _ => UNKNOWN,
    }
}

/// Bigram path of a label, boundary-to-boundary.
fn transitions(label: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let symbols = std::iter::once(BOUNDARY)
        .chain(label.chars().map(symbol))
        .chain(std::iter::once(BOUNDARY));
    Windows2::new(symbols)
}

struct Windows2<I: Iterator<Item = usize>> {
    iter: I,
    prev: Option<usize>,
}

impl<I: Iterator<Item = usize>> Windows2<I> {
    fn new(mut iter: I) -> Self {
        let prev = iter.next();
        Self { iter, prev }
    }
}

impl<I: Iterator<Item = usize>> Iterator for Windows2<I> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        let prev = self.prev?;
        let next = self.iter.next()?;
        self.prev = Some(next);
        Some((prev, next))
    }
}

/// Nearest-rank quantile of a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// HTTP client for an external DGA scorer.
///
/// Wire contract: `POST {"domain": "<fqdn>"}` answered with HTTP 200 and
/// `{"score": <float in [0,1]>}`; any other status is unavailability.
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout)
            .timeout(timeout)
            .build();
        Self {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn score(&self, domain: &str) -> Result<DgaScore, RemoteError> {
        let response = self
            .agent
            .post(&self.url)
            .send_json(serde_json::json!({ "domain": domain }))
            .map_err(|e| RemoteError::Unavailable(e.to_string()))?;
        let payload: ScoreResponse = response
            .into_json()
            .map_err(|e| RemoteError::Malformed(e.to_string()))?;
        if !payload.score.is_finite() || !(0.0..=1.0).contains(&payload.score) {
            return Err(RemoteError::Malformed(format!(
                "score {} outside [0, 1]",
                payload.score
            )));
        }
        Ok(DgaScore {
            value: payload.score,
            scorer_id: "remote".to_string(),
        })
    }
}
