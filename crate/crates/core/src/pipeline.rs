//! Pipeline orchestration: phases 1→4, three-verdict routing, the feedback
//! loop, and per-phase counters and latency statistics.
//!
//! A packet exits at the first phase that reaches a definite verdict. A
//! record without a query name has nothing to look up or score, so it
//! bypasses phases 1 and 3 and is routed rate check → forest.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dga::{decide, BigramModel, DgaThresholds, RemoteScorer, DEFAULT_REMOTE_TIMEOUT_MS};
use crate::fld::SuffixRules;
use crate::forest::ForestModel;
use crate::ingest::IngestError;
use crate::lists::{ListError, ListKind, ListStore, UpdateSource};
use crate::rate::{RateConfig, RateStore};
use crate::record::{extract_features, DnsRequestRecord};
use crate::verdict::{FinalVerdict, Verdict};

/// Latency samples retained per phase for median/p95; counters and means
/// keep updating past the cap.
const LATENCY_SAMPLE_CAP: usize = 100_000;

/// Everything needed to build a [`Pipeline`]. Model slots may stay empty:
/// without a DGA model phase 3 passes packets through unscored, and a
/// packet that then needs phase 4 without a forest yields
/// [`PipelineError::NotReady`].
pub struct PipelineConfig {
    pub rules: SuffixRules,
    pub rate: RateConfig,
    pub thresholds: DgaThresholds,
    pub feedback_enabled: bool,
    pub allow_feedback_whitelist: bool,
    pub dga_model: Option<BigramModel>,
    pub forest: Option<ForestModel>,
    pub remote_url: Option<String>,
    pub remote_timeout: Duration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            rules: SuffixRules::default(),
            rate: RateConfig::default(),
            thresholds: DgaThresholds::default(),
            feedback_enabled: false,
            allow_feedback_whitelist: false,
            dga_model: None,
            forest: None,
            remote_url: None,
            remote_timeout: Duration::from_millis(DEFAULT_REMOTE_TIMEOUT_MS),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline not ready: {0}")]
    NotReady(&'static str),
}

/// What the feedback loop did with a classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackAction {
    None,
    Blacklisted,
    Whitelisted,
}

/// Wall time spent inside each phase body the packet actually traversed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub phase1_ms: Option<f64>,
    pub phase2_ms: Option<f64>,
    pub phase3_ms: Option<f64>,
    pub phase4_ms: Option<f64>,
}

/// Final outcome for one packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: FinalVerdict,
    /// Phase that produced the verdict, 1–4.
    pub exit_phase: u8,
    /// Present when phase 3 scored the packet.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dga_score: Option<f64>,
    pub phase_times_ms: PhaseTimes,
    pub feedback_action: FeedbackAction,
}

/// Latency aggregate for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Counters for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: u8,
    /// Packets that entered the phase (bypassed no-ops included).
    pub processed: u64,
    pub exits_benign: u64,
    pub exits_infected: u64,
    pub latency: LatencySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackStats {
    pub blacklisted: u64,
    pub whitelisted: u64,
    /// Feedback whitelist inserts dropped by configuration, plus feedback
    /// inserts dropped in favor of manual entries.
    pub suppressed: u64,
}

/// Snapshot of pipeline counters. Key names are stable (documented in the
/// README); `to_csv` emits the per-phase report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub total_packets: u64,
    pub records_skipped: u64,
    pub phases: Vec<PhaseStats>,
    pub fallback_count: u64,
    pub feedback: FeedbackStats,
}

impl PipelineStats {
    /// Per-phase CSV: `phase,processed,exits_benign,exits_infected,median_ms,p95_ms`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("phase,processed,exits_benign,exits_infected,median_ms,p95_ms\n");
        for p in &self.phases {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                p.phase,
                p.processed,
                p.exits_benign,
                p.exits_infected,
                p.latency.median_ms,
                p.latency.p95_ms
            ));
        }
        out
    }
}

#[derive(Default)]
struct LatAgg {
    count: u64,
    sum_ms: f64,
    samples: Vec<f64>,
}

impl LatAgg {
    fn record(&mut self, ms: f64) {
        self.count += 1;
        self.sum_ms += ms;
        if self.samples.len() < LATENCY_SAMPLE_CAP {
            self.samples.push(ms);
        }
    }

    fn summary(&self) -> LatencySummary {
        let mut sorted = self.samples.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let median = percentile(&sorted, 0.5);
        let p95 = percentile(&sorted, 0.95);
        let mean = if self.count == 0 {
            0.0
        } else {
            self.sum_ms / self.count as f64
        };
        LatencySummary {
            count: self.count,
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

#[derive(Default)]
struct StatsCollector {
    total: AtomicU64,
    skipped: AtomicU64,
    processed: [AtomicU64; 4],
    exits_benign: [AtomicU64; 4],
    exits_infected: [AtomicU64; 4],
    fallbacks: AtomicU64,
    fb_blacklisted: AtomicU64,
    fb_whitelisted: AtomicU64,
    fb_suppressed: AtomicU64,
    latency: [Mutex<LatAgg>; 4],
}

impl StatsCollector {
    fn record_latency(&self, phase: usize, ms: f64) {
        self.latency[phase].lock().unwrap().record(ms);
    }

    fn snapshot(&self) -> PipelineStats {
        let phases = (0..4)
            .map(|i| PhaseStats {
                phase: (i + 1) as u8,
                processed: self.processed[i].load(Ordering::Relaxed),
                exits_benign: self.exits_benign[i].load(Ordering::Relaxed),
                exits_infected: self.exits_infected[i].load(Ordering::Relaxed),
                latency: self.latency[i].lock().unwrap().summary(),
            })
            .collect();
        PipelineStats {
            total_packets: self.total.load(Ordering::Relaxed),
            records_skipped: self.skipped.load(Ordering::Relaxed),
            phases,
            fallback_count: self.fallbacks.load(Ordering::Relaxed),
            feedback: FeedbackStats {
                blacklisted: self.fb_blacklisted.load(Ordering::Relaxed),
                whitelisted: self.fb_whitelisted.load(Ordering::Relaxed),
                suppressed: self.fb_suppressed.load(Ordering::Relaxed),
            },
        }
    }

    fn merge(&self, other: &StatsCollector) {
        let add = |dst: &AtomicU64, src: &AtomicU64| {
            dst.fetch_add(src.load(Ordering::Relaxed), Ordering::Relaxed);
        };
        add(&self.total, &other.total);
        add(&self.skipped, &other.skipped);
        for i in 0..4 {
            add(&self.processed[i], &other.processed[i]);
            add(&self.exits_benign[i], &other.exits_benign[i]);
            add(&self.exits_infected[i], &other.exits_infected[i]);
            let src = other.latency[i].lock().unwrap();
            let mut dst = self.latency[i].lock().unwrap();
            dst.count += src.count;
            dst.sum_ms += src.sum_ms;
            let room = LATENCY_SAMPLE_CAP.saturating_sub(dst.samples.len());
            dst.samples.extend(src.samples.iter().take(room));
        }
        add(&self.fallbacks, &other.fallbacks);
        add(&self.fb_blacklisted, &other.fb_blacklisted);
        add(&self.fb_whitelisted, &other.fb_whitelisted);
        add(&self.fb_suppressed, &other.fb_suppressed);
    }
}

/// The four-phase classification engine. All methods take `&self`; shared
/// state (lists, rate store, counters) is internally synchronized, so a
/// pipeline can serve concurrent callers.
pub struct Pipeline {
    lists: ListStore,
    rate_store: RateStore,
    rate_cfg: RateConfig,
    thresholds: DgaThresholds,
    feedback_enabled: bool,
    dga_model: Option<BigramModel>,
    remote: Option<RemoteScorer>,
    forest: Option<ForestModel>,
    rules: SuffixRules,
    stats: StatsCollector,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let remote = config
            .remote_url
            .as_ref()
            .map(|url| RemoteScorer::new(url.clone(), config.remote_timeout));
        Self {
            lists: ListStore::new(config.rules.clone(), config.allow_feedback_whitelist),
            rate_store: RateStore::new(),
            rate_cfg: config.rate,
            thresholds: config.thresholds,
            feedback_enabled: config.feedback_enabled,
            dga_model: config.dga_model,
            remote,
            forest: config.forest,
            rules: config.rules,
            stats: StatsCollector::default(),
        }
    }

    pub fn lists(&self) -> &ListStore {
        &self.lists
    }

    pub fn rate_store(&self) -> &RateStore {
        &self.rate_store
    }

    pub fn rules(&self) -> &SuffixRules {
        &self.rules
    }

    /// True when both models are loaded and every packet can be classified.
    pub fn is_ready(&self) -> bool {
        self.dga_model.is_some() && self.forest.is_some()
    }

    /// Lifetime stats snapshot.
    pub fn stats(&self) -> PipelineStats {
        self.stats.snapshot()
    }

    /// Classifies one record against the shared pipeline state.
    pub fn process(&self, record: &DnsRequestRecord) -> Result<Classification, PipelineError> {
        self.process_collect(record, &self.stats)
    }

    /// Classifies an ordered stream. Ingest errors and not-ready packets
    /// are counted as skips, never fatal. Returns the classifications in
    /// input order and the stats for this run; lifetime stats accumulate
    /// as well.
    pub fn process_stream<I>(&self, records: I) -> (Vec<Classification>, PipelineStats)
    where
        I: IntoIterator<Item = Result<DnsRequestRecord, IngestError>>,
    {
        let local = StatsCollector::default();
        let mut classifications = Vec::new();
        for item in records {
            match item {
                Ok(record) => match self.process_collect(&record, &local) {
                    Ok(c) => classifications.push(c),
                    Err(_) => {
                        local.skipped.fetch_add(1, Ordering::Relaxed);
                    }
                },
                Err(_) => {
                    local.skipped.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        let run_stats = local.snapshot();
        self.stats.merge(&local);
        (classifications, run_stats)
    }

    /// [`process_stream`](Self::process_stream) over already-parsed records.
    pub fn process_records<'a, I>(&self, records: I) -> (Vec<Classification>, PipelineStats)
    where
        I: IntoIterator<Item = &'a DnsRequestRecord>,
    {
        self.process_stream(records.into_iter().map(|r| Ok(r.clone())))
    }

    fn process_collect(
        &self,
        record: &DnsRequestRecord,
        stats: &StatsCollector,
    ) -> Result<Classification, PipelineError> {
        let name = record.query_name.as_deref().filter(|n| !n.is_empty());
        let mut times = PhaseTimes::default();
        let mut dga_score = None;

        // Phase 1: list check. Nothing to look up without a name.
        stats.processed[0].fetch_add(1, Ordering::Relaxed);
        if let Some(domain) = name {
            let start = Instant::now();
            let verdict = self.lists.check(domain);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            times.phase1_ms = Some(ms);
            stats.record_latency(0, ms);
            match verdict {
                Verdict::Infected => {
                    return Ok(self.finish(
                        FinalVerdict::Infected,
                        1,
                        name,
                        dga_score,
                        times,
                        stats,
                    ))
                }
                Verdict::Benign => {
                    return Ok(self.finish(FinalVerdict::Benign, 1, name, dga_score, times, stats))
                }
                Verdict::Pass => {}
            }
        }

        // Phase 2: query-rate analysis. Never answers benign.
        stats.processed[1].fetch_add(1, Ordering::Relaxed);
        let start = Instant::now();
        let verdict = self
            .rate_store
            .observe(record.src_ip, record.timestamp, &self.rate_cfg);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        times.phase2_ms = Some(ms);
        stats.record_latency(1, ms);
        if verdict == Verdict::Infected {
            return Ok(self.finish(FinalVerdict::Infected, 2, name, dga_score, times, stats));
        }

        // Phase 3: DGA scoring, remote first when configured.
        stats.processed[2].fetch_add(1, Ordering::Relaxed);
        if let (Some(domain), Some(model)) = (name, self.dga_model.as_ref()) {
            let start = Instant::now();
            let score = match &self.remote {
                Some(remote) => remote.score(domain).unwrap_or_else(|_| {
                    stats.fallbacks.fetch_add(1, Ordering::Relaxed);
                    model.score(domain, &self.rules)
                }),
                None => model.score(domain, &self.rules),
            };
            let verdict = decide(&score, &self.thresholds);
            let ms = start.elapsed().as_secs_f64() * 1e3;
            times.phase3_ms = Some(ms);
            stats.record_latency(2, ms);
            dga_score = Some(score.value);
            match verdict {
                Verdict::Infected => {
                    return Ok(self.finish(
                        FinalVerdict::Infected,
                        3,
                        name,
                        dga_score,
                        times,
                        stats,
                    ))
                }
                Verdict::Benign => {
                    return Ok(self.finish(FinalVerdict::Benign, 3, name, dga_score, times, stats))
                }
                Verdict::Pass => {}
            }
        }

        // Phase 4: forest evaluation; always definite.
        stats.processed[3].fetch_add(1, Ordering::Relaxed);
        let forest = self
            .forest
            .as_ref()
            .ok_or(PipelineError::NotReady("forest model not loaded"))?;
        let start = Instant::now();
        let label = forest.predict(&extract_features(record));
        let ms = start.elapsed().as_secs_f64() * 1e3;
        times.phase4_ms = Some(ms);
        stats.record_latency(3, ms);
        let verdict = if label == 1 {
            FinalVerdict::Infected
        } else {
            FinalVerdict::Benign
        };
        Ok(self.finish(verdict, 4, name, dga_score, times, stats))
    }

    fn finish(
        &self,
        verdict: FinalVerdict,
        exit_phase: u8,
        name: Option<&str>,
        dga_score: Option<f64>,
        phase_times_ms: PhaseTimes,
        stats: &StatsCollector,
    ) -> Classification {
        let idx = usize::from(exit_phase - 1);
        match verdict {
            FinalVerdict::Benign => stats.exits_benign[idx].fetch_add(1, Ordering::Relaxed),
            FinalVerdict::Infected => stats.exits_infected[idx].fetch_add(1, Ordering::Relaxed),
        };
        stats.total.fetch_add(1, Ordering::Relaxed);

        // Only phases 3 and 4 feed the lists; a rate burst identifies a
        // source, not a domain.
        let feedback_action = match name {
            Some(domain) if self.feedback_enabled && exit_phase >= 3 => {
                self.apply_feedback(verdict, domain, stats)
            }
            _ => FeedbackAction::None,
        };

        Classification {
            verdict,
            exit_phase,
            dga_score,
            phase_times_ms,
            feedback_action,
        }
    }

    fn apply_feedback(
        &self,
        verdict: FinalVerdict,
        domain: &str,
        stats: &StatsCollector,
    ) -> FeedbackAction {
        match verdict {
            FinalVerdict::Infected => {
                match self
                    .lists
                    .update(ListKind::Blacklist, domain, UpdateSource::Feedback)
                {
                    Ok(outcome) if outcome.applied => {
                        stats.fb_blacklisted.fetch_add(1, Ordering::Relaxed);
                        FeedbackAction::Blacklisted
                    }
                    _ => {
                        stats.fb_suppressed.fetch_add(1, Ordering::Relaxed);
                        FeedbackAction::None
                    }
                }
            }
            FinalVerdict::Benign => {
                match self
                    .lists
                    .update(ListKind::Whitelist, domain, UpdateSource::Feedback)
                {
                    Ok(outcome) if outcome.applied => {
                        stats.fb_whitelisted.fetch_add(1, Ordering::Relaxed);
                        FeedbackAction::Whitelisted
                    }
                    Err(ListError::FeedbackWhitelistDisabled) | Ok(_) | Err(_) => {
                        stats.fb_suppressed.fetch_add(1, Ordering::Relaxed);
                        FeedbackAction::None
                    }
                }
            }
        }
    }
}
