//! Synthetic evaluation corpora: benign wordlist traffic and FluBot-style
//! infected bursts, fully deterministic under a seed.
//!
//! Benign traffic queries popular-style domains with exponential
//! inter-arrival gaps well above the rate module's divergence interval.
//! Infected traffic queries fresh random-label domains in tight per-source
//! bursts. The labeled-dataset generator time-interleaves both classes so
//! a classifier cannot learn a trivial time split.

use std::io::{self, BufRead};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ingest::open_reader;
use crate::rate::DEFAULT_DELTA_F;
use crate::record::{DnsRequestRecord, QueryType};

/// The benign wordlist shipped with the crate: a 10k-domain popular-style
/// list standing in for a full top-sites dump.
const EMBEDDED_WORDLIST: &str = include_str!("../data/benign_wordlist.txt");

/// Smallest inter-arrival mean a benign profile will use, ten times the
/// default divergence interval.
pub const MIN_BENIGN_MEAN_GAP: f64 = 10.0 * DEFAULT_DELTA_F;

const RESOLVERS: [Ipv4Addr; 3] = [
    Ipv4Addr::new(8, 8, 8, 8),
    Ipv4Addr::new(1, 1, 1, 1),
    Ipv4Addr::new(9, 9, 9, 9),
];

const DGA_TLDS: [&str; 4] = ["top", "ru", "cn", "com"];

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("benign wordlist is empty")]
    EmptyWordlist,
    #[error("labeled dataset size must be even, got {0}")]
    OddCount(usize),
    #[error("invalid traffic profile: {0}")]
    InvalidProfile(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficKind {
    Benign,
    Infected,
    Mixed,
}

/// Burst shape for infected traffic: one source spamming
/// `queries_per_burst` queries `intra_burst_gap_secs` apart, bursts spaced
/// `inter_burst_gap_secs` apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurstParams {
    pub queries_per_burst: usize,
    pub intra_burst_gap_secs: f64,
    pub inter_burst_gap_secs: f64,
}

impl Default for BurstParams {
    fn default() -> Self {
        Self {
            queries_per_burst: 100,
            intra_burst_gap_secs: 0.01,
            inter_burst_gap_secs: 5.0,
        }
    }
}

/// Everything a generator run needs; the seed fully determines the output.
#[derive(Debug, Clone)]
pub struct TrafficProfile {
    pub kind: TrafficKind,
    pub n_packets: usize,
    pub seed: u64,
    pub wordlist: Vec<String>,
    pub burst: BurstParams,
    pub source_pool: Vec<Ipv4Addr>,
    pub time_span_secs: f64,
}

impl TrafficProfile {
    pub fn benign(n_packets: usize, seed: u64) -> Self {
        Self {
            kind: TrafficKind::Benign,
            n_packets,
            seed,
            wordlist: default_wordlist(),
            burst: BurstParams::default(),
            source_pool: (10..50).map(|h| Ipv4Addr::new(192, 168, 1, h)).collect(),
            time_span_secs: n_packets as f64,
        }
    }

    pub fn infected(n_packets: usize, seed: u64) -> Self {
        Self {
            kind: TrafficKind::Infected,
            n_packets,
            seed,
            wordlist: Vec::new(),
            burst: BurstParams::default(),
            source_pool: (50..58).map(|h| Ipv4Addr::new(192, 168, 1, h)).collect(),
            time_span_secs: 0.0, // derived from burst parameters
        }
    }

    fn validate(&self) -> Result<(), DatagenError> {
        if self.source_pool.is_empty() {
            return Err(DatagenError::InvalidProfile(
                "empty source pool".to_string(),
            ));
        }
        match self.kind {
            TrafficKind::Benign => {
                if self.wordlist.is_empty() {
                    return Err(DatagenError::EmptyWordlist);
                }
            }
            TrafficKind::Infected | TrafficKind::Mixed => {
                let b = &self.burst;
                if b.queries_per_burst == 0
                    || b.intra_burst_gap_secs < 0.0
                    || b.intra_burst_gap_secs >= b.inter_burst_gap_secs
                {
                    return Err(DatagenError::InvalidProfile(
                        "burst intra gap must be smaller than the inter gap".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The embedded 10k-domain wordlist.
pub fn default_wordlist() -> Vec<String> {
    EMBEDDED_WORDLIST.lines().map(str::to_string).collect()
}

/// Loads a custom wordlist: one domain per line, `#` comments allowed.
pub fn load_wordlist(path: &Path) -> Result<Vec<String>, DatagenError> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let domain = line.split('#').next().unwrap_or("").trim().to_lowercase();
        if !domain.is_empty() {
            out.push(domain);
        }
    }
    if out.is_empty() {
        return Err(DatagenError::EmptyWordlist);
    }
    Ok(out)
}

fn query_record(
    ts: f64,
    src: Ipv4Addr,
    dst: Ipv4Addr,
    qtype: QueryType,
    name: String,
) -> DnsRequestRecord {
    // Header (12) + encoded name (len + 2) + type/class (4).
    let payload_length = name.len() as u32 + 18;
    DnsRequestRecord {
        timestamp: ts,
        src_ip: src,
        dst_ip: dst,
        payload_length,
        flags: 0x0100,
        question_count: 1,
        query_type: qtype,
        query_name: Some(name),
    }
}

/// Generates benign traffic: wordlist domains, A/AAAA mix, exponential
/// gaps with mean `max(time_span/n, MIN_BENIGN_MEAN_GAP)`.
pub fn gen_benign(profile: &TrafficProfile) -> Result<Vec<DnsRequestRecord>, DatagenError> {
    profile.validate().map_err(|e| match e {
        DatagenError::InvalidProfile(_) => e,
        other => other,
    })?;
    if profile.wordlist.is_empty() {
        return Err(DatagenError::EmptyWordlist);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let n = profile.n_packets;
    let mean_gap = if n == 0 {
        MIN_BENIGN_MEAN_GAP
    } else {
        (profile.time_span_secs / n as f64).max(MIN_BENIGN_MEAN_GAP)
    };
    let gaps = Exp::new(1.0 / mean_gap).expect("positive rate");

    let mut out = Vec::with_capacity(n);
    let mut ts = 0.0f64;
    for i in 0..n {
        if i > 0 {
            ts += gaps.sample(&mut rng);
        }
        let base = &profile.wordlist[rng.gen_range(0..profile.wordlist.len())];
        let name = if rng.gen_bool(0.5) {
            format!("www.{base}")
        } else {
            base.clone()
        };
        let qtype = if rng.gen_bool(0.8) {
            QueryType::A
        } else {
            QueryType::Aaaa
        };
        let src = profile.source_pool[rng.gen_range(0..profile.source_pool.len())];
        let dst = RESOLVERS[rng.gen_range(0..RESOLVERS.len())];
        out.push(query_record(ts, src, dst, qtype, name));
    }
    Ok(out)
}

/// Random DGA-style label: 8–24 lowercase alphanumerics.
fn dga_domain(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(8..=24);
    let label: String = (0..len)
        .map(|_| {
            let c = rng.gen_range(0..36u8);
            if c < 26 {
                (b'a' + c) as char
            } else {
                (b'0' + c - 26) as char
            }
        })
        .collect();
    format!("{label}.{}", DGA_TLDS[rng.gen_range(0..DGA_TLDS.len())])
}

/// Generates infected traffic: per-source bursts of queries to fresh
/// random-label domains, intra-burst gaps below the divergence interval.
pub fn gen_infected(profile: &TrafficProfile) -> Result<Vec<DnsRequestRecord>, DatagenError> {
    let mut p = profile.clone();
    p.kind = TrafficKind::Infected;
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let b = profile.burst;

    let mut out = Vec::with_capacity(profile.n_packets);
    let mut burst_start = 0.0f64;
    while out.len() < profile.n_packets {
        let src = profile.source_pool[rng.gen_range(0..profile.source_pool.len())];
        let dst = RESOLVERS[rng.gen_range(0..RESOLVERS.len())];
        for q in 0..b.queries_per_burst {
            if out.len() >= profile.n_packets {
                break;
            }
            let ts = burst_start + q as f64 * b.intra_burst_gap_secs;
            out.push(query_record(
                ts,
                src,
                dst,
                QueryType::A,
                dga_domain(&mut rng),
            ));
        }
        burst_start += b.inter_burst_gap_secs;
    }
    Ok(out)
}

/// Generates a time-interleaved mixed capture: `n/2` benign and `n/2`
/// infected packets spanning the same time range, merged in timestamp
/// order. Labels ride along (0 benign, 1 infected).
pub fn gen_mixed_capture(
    n: usize,
    seed: u64,
    wordlist: Vec<String>,
) -> Result<Vec<(DnsRequestRecord, u8)>, DatagenError> {
    if !n.is_multiple_of(2) {
        return Err(DatagenError::OddCount(n));
    }
    let half = n / 2;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let benign_seed = master.next_u64();
    let infected_seed = master.next_u64();

    let mut benign_profile = TrafficProfile::benign(half, benign_seed);
    if !wordlist.is_empty() {
        benign_profile.wordlist = wordlist;
    }
    let benign = gen_benign(&benign_profile)?;

    // Stretch the infected burst schedule over the benign span so the two
    // classes overlap in time instead of separating into eras.
    let span = benign.last().map(|r| r.timestamp).unwrap_or(0.0);
    let mut infected_profile = TrafficProfile::infected(half, infected_seed);
    let n_bursts = half
        .div_ceil(infected_profile.burst.queries_per_burst)
        .max(1);
    infected_profile.burst.inter_burst_gap_secs = (span / n_bursts as f64)
        .max(infected_profile.burst.intra_burst_gap_secs * 2.0)
        .max(1.0);
    let infected = gen_infected(&infected_profile)?;

    let mut rows: Vec<(DnsRequestRecord, u8)> = benign
        .into_iter()
        .map(|r| (r, 0u8))
        .chain(infected.into_iter().map(|r| (r, 1u8)))
        .collect();
    rows.sort_by(|a, b| a.0.timestamp.total_cmp(&b.0.timestamp));
    Ok(rows)
}

/// Generates the labeled training dataset: a mixed capture with the row
/// order shuffled (timestamps intact).
pub fn gen_labeled_dataset(
    n: usize,
    seed: u64,
    wordlist: Vec<String>,
) -> Result<Vec<(DnsRequestRecord, u8)>, DatagenError> {
    let mut rows = gen_mixed_capture(n, seed, wordlist)?;
    // Distinct stream from the capture seeds so shuffling cannot correlate
    // with generation.
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5375_6666_6c65));
    for i in (1..rows.len()).rev() {
        let j = rng.gen_range(0..=i);
        rows.swap(i, j);
    }
    Ok(rows)
}
