//! Phase 1: whitelist/blacklist verdicts over registered domains.
//!
//! Entries are stored FLD-normalized in hash sets, so a lookup costs a
//! constant number of probes regardless of list size. The two lists stay
//! disjoint under any interleaving of manual and feedback mutations.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use thiserror::Error;

use crate::fld::{extract_fld, SuffixRules};
use crate::record::validate_domain_name;
use crate::verdict::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ListKind {
    Whitelist,
    Blacklist,
}

impl fmt::Display for ListKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ListKind::Whitelist => write!(f, "whitelist"),
            ListKind::Blacklist => write!(f, "blacklist"),
        }
    }
}

/// Who asked for a mutation. Manual entries outrank feedback entries: a
/// feedback insert never displaces a manual entry in the opposite list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSource {
    Manual,
    Feedback,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ListError {
    #[error("feedback whitelist inserts are disabled")]
    FeedbackWhitelistDisabled,
    #[error("invalid domain: {0:?}")]
    InvalidDomain(String),
    #[error("unknown list kind: {0:?}")]
    UnknownKind(String),
}

/// One domain list: FLD entries tagged with their source, plus a revision
/// counter bumped on every applied mutation.
#[derive(Debug, Clone)]
pub struct DomainList {
    kind: ListKind,
    entries: HashMap<String, UpdateSource>,
    revision: u64,
}

impl DomainList {
    pub fn new(kind: ListKind) -> Self {
        Self {
            kind,
            entries: HashMap::new(),
            revision: 0,
        }
    }

    pub fn kind(&self) -> ListKind {
        self.kind
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Membership probe for an already-normalized FLD.
    pub fn contains(&self, fld: &str) -> bool {
        self.entries.contains_key(fld)
    }

    pub fn source_of(&self, fld: &str) -> Option<UpdateSource> {
        self.entries.get(fld).copied()
    }

    /// Entries in sorted order, for stable display and persistence.
    pub fn entries_sorted(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.keys().cloned().collect();
        out.sort();
        out
    }

    fn insert(&mut self, fld: String, source: UpdateSource) {
        let slot = self.entries.entry(fld).or_insert(source);
        // A manual insert upgrades a feedback entry; feedback never
        // downgrades a manual one.
        if source == UpdateSource::Manual {
            *slot = UpdateSource::Manual;
        }
        self.revision += 1;
    }

    fn remove(&mut self, fld: &str) -> bool {
        if self.entries.remove(fld).is_some() {
            self.revision += 1;
            true
        } else {
            false
        }
    }
}

/// Result of an applied (or dropped) list mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateOutcome {
    /// The target list's revision after the call.
    pub revision: u64,
    /// False when a feedback insert was dropped in favor of a manual entry
    /// in the opposite list.
    pub applied: bool,
}

/// Totals reported by [`load_list`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Distinct FLDs loaded.
    pub loaded: usize,
    /// Lines skipped as unparseable.
    pub skipped: usize,
}

/// Loads a newline-delimited domain file (`#` comments allowed); entries
/// are FLD-stripped, lowercased, and deduplicated. Parse failures are
/// counted and skipped.
pub fn load_list<R: BufRead>(
    reader: R,
    kind: ListKind,
    rules: &SuffixRules,
) -> io::Result<(DomainList, LoadReport)> {
    let mut list = DomainList::new(kind);
    let mut report = LoadReport::default();
    for line in reader.lines() {
        let line = line?;
        let text = line.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if validate_domain_name(text).is_err() {
            report.skipped += 1;
            continue;
        }
        let fld = extract_fld(text, rules);
        if !list.entries.contains_key(&fld) {
            list.insert(fld, UpdateSource::Manual);
        }
    }
    report.loaded = list.len();
    Ok((list, report))
}

/// Convenience wrapper over [`load_list`] for a filesystem path.
pub fn load_list_file(
    path: &Path,
    kind: ListKind,
    rules: &SuffixRules,
) -> io::Result<(DomainList, LoadReport)> {
    load_list(BufReader::new(File::open(path)?), kind, rules)
}

/// Writes a list back out, one FLD per line, sorted.
pub fn save_list(list: &DomainList, path: &Path) -> io::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for entry in list.entries_sorted() {
        writeln!(writer, "{entry}")?;
    }
    Ok(())
}

/// The phase-1 state: both lists behind a single lock so mutations are
/// atomic with respect to checks and disjointness can be enforced.
///
/// Many concurrent readers, single writer; a check observes either the
/// pre- or post-mutation state, never a torn one.
pub struct ListStore {
    inner: RwLock<Lists>,
    rules: SuffixRules,
    allow_feedback_whitelist: bool,
}

#[derive(Debug)]
struct Lists {
    whitelist: DomainList,
    blacklist: DomainList,
}

impl ListStore {
    pub fn new(rules: SuffixRules, allow_feedback_whitelist: bool) -> Self {
        Self {
            inner: RwLock::new(Lists {
                whitelist: DomainList::new(ListKind::Whitelist),
                blacklist: DomainList::new(ListKind::Blacklist),
            }),
            rules,
            allow_feedback_whitelist,
        }
    }

    /// Replaces one list wholesale (initial load). Disjointness is restored
    /// by dropping the other list's conflicting entries; the blacklist wins.
    pub fn install(&self, list: DomainList) {
        let mut inner = self.inner.write().unwrap();
        match list.kind() {
            ListKind::Whitelist => {
                let mut list = list;
                for fld in inner.blacklist.entries.keys() {
                    list.entries.remove(fld);
                }
                inner.whitelist = list;
            }
            ListKind::Blacklist => {
                let conflicts: Vec<String> = list
                    .entries
                    .keys()
                    .filter(|fld| inner.whitelist.contains(fld))
                    .cloned()
                    .collect();
                for fld in conflicts {
                    inner.whitelist.remove(&fld);
                }
                inner.blacklist = list;
            }
        }
    }

    /// Phase-1 verdict for a query name. The blacklist is consulted first,
    /// so a conflicting entry fails closed.
    pub fn check(&self, domain: &str) -> Verdict {
        let fld = extract_fld(domain, &self.rules);
        let inner = self.inner.read().unwrap();
        if inner.blacklist.contains(&fld) {
            Verdict::Infected
        } else if inner.whitelist.contains(&fld) {
            Verdict::Benign
        } else {
            Verdict::Pass
        }
    }

    /// Inserts the FLD of `domain` into the given list, returning the list's
    /// revision and whether the insert was applied.
    ///
    /// Feedback whitelist inserts are rejected with
    /// [`ListError::FeedbackWhitelistDisabled`] unless the store was built
    /// with the flag enabled; the caller counts the drop. A feedback insert
    /// that conflicts with a manual entry in the opposite list is dropped
    /// (revision unchanged, `applied` false).
    pub fn update(
        &self,
        kind: ListKind,
        domain: &str,
        source: UpdateSource,
    ) -> Result<UpdateOutcome, ListError> {
        if domain.trim().is_empty() {
            return Err(ListError::InvalidDomain(domain.to_string()));
        }
        if kind == ListKind::Whitelist
            && source == UpdateSource::Feedback
            && !self.allow_feedback_whitelist
        {
            return Err(ListError::FeedbackWhitelistDisabled);
        }
        let fld = extract_fld(domain, &self.rules);
        if fld.is_empty() {
            return Err(ListError::InvalidDomain(domain.to_string()));
        }

        let mut guard = self.inner.write().unwrap();
        let inner = &mut *guard;
        let (target, other) = match kind {
            ListKind::Whitelist => (&mut inner.whitelist, &mut inner.blacklist),
            ListKind::Blacklist => (&mut inner.blacklist, &mut inner.whitelist),
        };
        if source == UpdateSource::Feedback && other.source_of(&fld) == Some(UpdateSource::Manual) {
            return Ok(UpdateOutcome {
                revision: target.revision(),
                applied: false,
            });
        }
        other.remove(&fld);
        target.insert(fld, source);
        Ok(UpdateOutcome {
            revision: target.revision(),
            applied: true,
        })
    }

    /// Removes the FLD of `domain` from the given list.
    pub fn remove(&self, kind: ListKind, domain: &str) -> Result<bool, ListError> {
        if domain.trim().is_empty() {
            return Err(ListError::InvalidDomain(domain.to_string()));
        }
        let fld = extract_fld(domain, &self.rules);
        let mut inner = self.inner.write().unwrap();
        let target = match kind {
            ListKind::Whitelist => &mut inner.whitelist,
            ListKind::Blacklist => &mut inner.blacklist,
        };
        Ok(target.remove(&fld))
    }

    /// Snapshot of one list (entries sorted, revision).
    pub fn snapshot(&self, kind: ListKind) -> (Vec<String>, u64) {
        let inner = self.inner.read().unwrap();
        let list = match kind {
            ListKind::Whitelist => &inner.whitelist,
            ListKind::Blacklist => &inner.blacklist,
        };
        (list.entries_sorted(), list.revision())
    }

    pub fn revision(&self, kind: ListKind) -> u64 {
        let inner = self.inner.read().unwrap();
        match kind {
            ListKind::Whitelist => inner.whitelist.revision(),
            ListKind::Blacklist => inner.blacklist.revision(),
        }
    }

    pub fn rules(&self) -> &SuffixRules {
        &self.rules
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;
    use std::time::{Duration, Instant};

    fn store() -> ListStore {
        ListStore::new(SuffixRules::default(), false)
    }

    #[test]
    fn whitelist_hit_is_benign() {
        let s = store();
        s.update(ListKind::Whitelist, "netflix.com", UpdateSource::Manual)
            .unwrap();
        assert_eq!(s.check("api-global.netflix.com"), Verdict::Benign);
    }

    #[test]
    fn empty_lists_pass() {
        assert_eq!(store().check("anything.example.com"), Verdict::Pass);
    }

    #[test]
    fn blacklist_consulted_first() {
        let s = store();
        // Force the conflict through the internals: both lists hold the FLD.
        {
            let mut inner = s.inner.write().unwrap();
            inner
                .whitelist
                .insert("evil-dga.top".into(), UpdateSource::Manual);
            inner
                .blacklist
                .insert("evil-dga.top".into(), UpdateSource::Manual);
        }
        assert_eq!(s.check("x.evil-dga.top"), Verdict::Infected);
    }

    #[test]
    fn insert_then_hit() {
        let s = store();
        s.update(ListKind::Blacklist, "c2domain.ru", UpdateSource::Feedback)
            .unwrap();
        assert_eq!(s.check("c2domain.ru"), Verdict::Infected);
        assert_eq!(s.check("sub.c2domain.ru"), Verdict::Infected);
    }

    #[test]
    fn feedback_whitelist_disabled_by_default() {
        let s = store();
        let err = s
            .update(ListKind::Whitelist, "good.com", UpdateSource::Feedback)
            .unwrap_err();
        assert_eq!(err, ListError::FeedbackWhitelistDisabled);
        assert_eq!(s.check("good.com"), Verdict::Pass);
    }

    #[test]
    fn feedback_whitelist_allowed_when_enabled() {
        let s = ListStore::new(SuffixRules::default(), true);
        s.update(ListKind::Whitelist, "good.com", UpdateSource::Feedback)
            .unwrap();
        assert_eq!(s.check("good.com"), Verdict::Benign);
    }

    #[test]
    fn manual_whitelist_overrides_blacklist_entry() {
        let s = store();
        s.update(ListKind::Blacklist, "rescued.com", UpdateSource::Feedback)
            .unwrap();
        s.update(ListKind::Whitelist, "rescued.com", UpdateSource::Manual)
            .unwrap();
        assert_eq!(s.check("rescued.com"), Verdict::Benign);
    }

    #[test]
    fn feedback_blacklist_never_displaces_manual_whitelist() {
        let s = store();
        s.update(ListKind::Whitelist, "pinned.com", UpdateSource::Manual)
            .unwrap();
        s.update(ListKind::Blacklist, "pinned.com", UpdateSource::Feedback)
            .unwrap();
        assert_eq!(s.check("pinned.com"), Verdict::Benign);
    }

    #[test]
    fn lookup_is_fld_invariant() {
        let s = store();
        s.update(ListKind::Blacklist, "bad.top", UpdateSource::Manual)
            .unwrap();
        for prefix in ["a", "deep.sub", "x-y-z"] {
            assert_eq!(s.check(&format!("{prefix}.bad.top")), Verdict::Infected);
        }
    }

    #[test]
    fn disjoint_after_interleaved_updates() {
        let s = ListStore::new(SuffixRules::default(), true);
        let domains = ["a.com", "b.net", "c.org", "d.top", "e.ru"];
        let plan = [
            (ListKind::Blacklist, UpdateSource::Feedback),
            (ListKind::Whitelist, UpdateSource::Manual),
            (ListKind::Blacklist, UpdateSource::Manual),
            (ListKind::Whitelist, UpdateSource::Feedback),
        ];
        for (i, d) in domains.iter().cycle().take(40).enumerate() {
            let (kind, source) = plan[i % plan.len()];
            let _ = s.update(kind, d, source);
        }
        let inner = s.inner.read().unwrap();
        for fld in inner.whitelist.entries.keys() {
            assert!(
                !inner.blacklist.contains(fld),
                "{fld} present in both lists"
            );
        }
    }

    #[test]
    fn load_normalizes_and_dedups() {
        let input = "Netflix.COM\n# comment\nftl.netflix.com\n";
        let (list, report) = load_list(
            Cursor::new(input),
            ListKind::Whitelist,
            &SuffixRules::default(),
        )
        .unwrap();
        assert_eq!(list.entries_sorted(), vec!["netflix.com".to_string()]);
        assert_eq!(report.loaded, 1);
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn load_empty_file() {
        let (list, report) = load_list(
            Cursor::new(""),
            ListKind::Blacklist,
            &SuffixRules::default(),
        )
        .unwrap();
        assert!(list.is_empty());
        assert_eq!(report.loaded, 0);
    }

    #[test]
    fn load_counts_bad_lines() {
        let long = "x".repeat(300);
        let input = format!("ok.com\n{long}\n");
        let (list, report) = load_list(
            Cursor::new(input),
            ListKind::Blacklist,
            &SuffixRules::default(),
        )
        .unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn unreadable_path_is_io_error() {
        let err = load_list_file(
            Path::new("/nonexistent/lists/block.txt"),
            ListKind::Blacklist,
            &SuffixRules::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn revision_advances_per_mutation() {
        let s = store();
        let r1 = s
            .update(ListKind::Blacklist, "a.com", UpdateSource::Manual)
            .unwrap();
        let r2 = s
            .update(ListKind::Blacklist, "b.com", UpdateSource::Manual)
            .unwrap();
        assert!(r1.applied && r2.applied);
        assert_eq!(r2.revision, r1.revision + 1);
    }

    #[test]
    fn dropped_feedback_insert_reports_not_applied() {
        let s = store();
        s.update(ListKind::Whitelist, "pinned.com", UpdateSource::Manual)
            .unwrap();
        let outcome = s
            .update(ListKind::Blacklist, "pinned.com", UpdateSource::Feedback)
            .unwrap();
        assert!(!outcome.applied);
    }

    #[test]
    fn save_and_reload_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.txt");
        let s = store();
        s.update(ListKind::Blacklist, "b.com", UpdateSource::Manual)
            .unwrap();
        s.update(ListKind::Blacklist, "a.com", UpdateSource::Manual)
            .unwrap();
        {
            let inner = s.inner.read().unwrap();
            save_list(&inner.blacklist, &path).unwrap();
        }
        let (list, _) =
            load_list_file(&path, ListKind::Blacklist, &SuffixRules::default()).unwrap();
        assert_eq!(
            list.entries_sorted(),
            vec!["a.com".to_string(), "b.com".to_string()]
        );
    }

    // Empirical constant-time property: growing the list 1000x must not
    // grow the median check latency more than 2x. Lookups are batched so
    // each sample is well above timer resolution.
    #[test]
    fn check_latency_flat_under_growth() {
        fn median_batch_nanos(store: &ListStore, probes: &[String]) -> u128 {
            let mut samples = Vec::with_capacity(101);
            for _ in 0..101 {
                let start = Instant::now();
                for probe in probes {
                    std::hint::black_box(store.check(probe));
                }
                samples.push(start.elapsed().as_nanos());
            }
            samples.sort_unstable();
            samples[samples.len() / 2]
        }

        fn filled(n: usize) -> ListStore {
            let s = ListStore::new(SuffixRules::default(), false);
            let mut list = DomainList::new(ListKind::Blacklist);
            for i in 0..n {
                list.insert(format!("domain-{i}.com"), UpdateSource::Manual);
            }
            s.install(list);
            s
        }

        let probes: Vec<String> = (0..64)
            .map(|i| {
                if i % 2 == 0 {
                    format!("sub.domain-{i}.com")
                } else {
                    format!("missing-{i}.net")
                }
            })
            .collect();

        let small = filled(1_000);
        let large = filled(1_000_000);
        // Warmup both before measuring.
        median_batch_nanos(&small, &probes);
        median_batch_nanos(&large, &probes);
        let m_small = median_batch_nanos(&small, &probes);
        let m_large = median_batch_nanos(&large, &probes);
        assert!(
            m_large <= m_small * 2,
            "median check latency grew more than 2x: {m_small}ns -> {m_large}ns"
        );
        // Sanity floor so the assertion above is about real work.
        assert!(Duration::from_nanos(m_small as u64) > Duration::ZERO);
    }
}
