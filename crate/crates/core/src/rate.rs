//! Phase 2: per-source query-rate analysis.
//!
//! Instead of a sliding window over all events, only the gap between two
//! contiguous packets of a source is measured: a gap of at most `delta_f`
//! extends the source's current fast run, anything larger resets it. Once
//! the run reaches `k` packets the packet is flagged. This phase only ever
//! answers `Infected` or `Pass`.

use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use dashmap::DashMap;
use thiserror::Error;

use crate::verdict::Verdict;

/// Sensitivity parameters for rate analysis.
///
/// `delta_f` is the divergence interval in the same time unit as record
/// timestamps (seconds); `k` is the run-length threshold in packets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    delta_f: f64,
    k: u32,
}

pub const DEFAULT_DELTA_F: f64 = 0.05;
pub const DEFAULT_K: u32 = 20;
pub const DEFAULT_MAX_IDLE_SECS: u64 = 3600;

#[derive(Debug, Error, PartialEq)]
pub enum RateConfigError {
    #[error("delta_f must be a non-negative finite number, got {0}")]
    InvalidDeltaF(f64),
    #[error("k must be at least 2, got {0}")]
    InvalidK(u32),
}

impl RateConfig {
    pub fn new(delta_f: f64, k: u32) -> Result<Self, RateConfigError> {
        if !delta_f.is_finite() || delta_f < 0.0 {
            return Err(RateConfigError::InvalidDeltaF(delta_f));
        }
        if k < 2 {
            return Err(RateConfigError::InvalidK(k));
        }
        Ok(Self { delta_f, k })
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    pub fn k(&self) -> u32 {
        self.k
    }
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            delta_f: DEFAULT_DELTA_F,
            k: DEFAULT_K,
        }
    }
}

/// Rate state for one source.
#[derive(Debug, Clone, Copy)]
struct SourceRateState {
    last_timestamp: f64,
    /// Length of the current fast run, counting the run's first packet.
    fast_count: u32,
    /// Wall-clock time of the last observe, for eviction.
    last_seen: Instant,
}

/// Per-source rate state store.
///
/// Observes for distinct sources proceed concurrently; observes for the
/// same source serialize on its entry. Eviction may run alongside observes.
#[derive(Debug, Default)]
pub struct RateStore {
    states: DashMap<Ipv4Addr, SourceRateState>,
}

impl RateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one packet through rate analysis.
    ///
    /// The first packet from a source always passes. An out-of-order
    /// timestamp is clamped to the source's last one, conservatively
    /// treating reordering as a fast arrival.
    pub fn observe(&self, src: Ipv4Addr, timestamp: f64, cfg: &RateConfig) -> Verdict {
        let now = Instant::now();
        let mut entry = self.states.entry(src).or_insert(SourceRateState {
            last_timestamp: f64::NEG_INFINITY,
            fast_count: 0,
            last_seen: now,
        });
        let state = entry.value_mut();
        state.last_seen = now;

        if state.fast_count == 0 {
            state.last_timestamp = timestamp;
            state.fast_count = 1;
            return Verdict::Pass;
        }

        let ts = timestamp.max(state.last_timestamp);
        let gap = ts - state.last_timestamp;
        state.last_timestamp = ts;
        if gap <= cfg.delta_f {
            state.fast_count += 1;
        } else {
            state.fast_count = 1;
        }
        if state.fast_count >= cfg.k {
            Verdict::Infected
        } else {
            Verdict::Pass
        }
    }

    /// Drops state for sources idle longer than `max_idle`; returns how
    /// many were evicted.
    pub fn evict_stale(&self, max_idle: Duration) -> usize {
        self.evict_stale_at(Instant::now(), max_idle)
    }

    fn evict_stale_at(&self, now: Instant, max_idle: Duration) -> usize {
        let before = self.states.len();
        self.states
            .retain(|_, state| now.saturating_duration_since(state.last_seen) <= max_idle);
        before - self.states.len()
    }

    pub fn tracked_sources(&self) -> usize {
        self.states.len()
    }
}
