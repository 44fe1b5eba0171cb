//! MONDEO: a multistage DNS-request classification pipeline for detecting
//! DGA-based botnet traffic (FluBot-style command-and-control discovery).
//!
//! A DNS query travels through up to four phases, exiting at the first one
//! that reaches a definite verdict:
//!
//! 1. **Lists** — whitelist/blacklist lookup on the registered domain.
//! 2. **Query rate** — per-source burst detection over inter-arrival times.
//! 3. **DGA scoring** — character-statistics score of the queried name,
//!    with accept/reject thresholds and an optional remote scorer.
//! 4. **Random forest** — ensemble classification over an 8-feature
//!    encoding of the request; always definite.
//!
//! Verdicts from phases 3 and 4 can feed back into the phase-1 lists so
//! repeated traffic is resolved earlier on subsequent passes.

pub mod datagen;
pub mod dga;
pub mod fld;
pub mod forest;
pub mod ingest;
pub mod lists;
pub mod metrics;
pub mod pipeline;
pub mod rate;
pub mod record;
pub mod verdict;
pub mod wire;

pub use fld::{extract_fld, SuffixRules};
pub use pipeline::{Classification, Pipeline, PipelineConfig, PipelineStats};
pub use record::{
    extract_features, ip_to_u32, u32_to_ip, DnsRequestRecord, FeatureVector, QueryType,
};
pub use verdict::{FinalVerdict, Verdict};
