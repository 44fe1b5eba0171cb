//! Registered-domain extraction.
//!
//! Lists and the DGA scorer both key on the registered domain rather than
//! the full query name, so `a.b.example.com` and `example.com` resolve to
//! the same entry.

use std::collections::HashSet;

/// Public-suffix rules used to find the registered domain.
///
/// The embedded default covers the common single- and two-label suffixes;
/// anything unmatched falls back to the last two labels. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct SuffixRules {
    suffixes: HashSet<String>,
    max_suffix_labels: usize,
}

const DEFAULT_SUFFIXES: &[&str] = &[
    "com", "net", "org", "edu", "gov", "mil", "int", "info", "biz", "io", "co", "ai", "app", "dev",
    "top", "xyz", "online", "site", "shop", "club", "ru", "cn", "uk", "de", "fr", "nl", "br", "jp",
    "kr", "in", "it", "es", "pl", "se", "ch", "at", "be", "pt", "tv", "me", "cc", "us", "ca", "au",
    "eu", "co.uk", "org.uk", "ac.uk", "gov.uk", "co.jp", "ne.jp", "or.jp", "com.au", "net.au",
    "org.au", "com.br", "com.cn", "com.tr", "co.in", "co.za", "com.mx", "com.ar",
];

impl SuffixRules {
    /// Builds rules from explicit suffix strings (lowercase, no leading dot).
    ///
    /// Returns `None` when the set would be empty or an entry is malformed.
    pub fn new<I, S>(suffixes: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = HashSet::new();
        for suffix in suffixes {
            let s = suffix.as_ref();
            if s.is_empty() || s.starts_with('.') || s.ends_with('.') || s != s.to_lowercase() {
                return None;
            }
            set.insert(s.to_string());
        }
        if set.is_empty() {
            return None;
        }
        let max_suffix_labels = set.iter().map(|s| s.split('.').count()).max().unwrap_or(1);
        Some(Self {
            suffixes: set,
            max_suffix_labels,
        })
    }

    pub fn contains(&self, suffix: &str) -> bool {
        self.suffixes.contains(suffix)
    }

    pub fn len(&self) -> usize {
        self.suffixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suffixes.is_empty()
    }

    /// Longest suffix of `labels` present in the rules, as a label count.
    fn longest_match(&self, labels: &[&str]) -> Option<usize> {
        let upper = self.max_suffix_labels.min(labels.len());
        for take in (1..=upper).rev() {
            let candidate = labels[labels.len() - take..].join(".");
            if self.suffixes.contains(&candidate) {
                return Some(take);
            }
        }
        None
    }
}

impl Default for SuffixRules {
    fn default() -> Self {
        Self::new(DEFAULT_SUFFIXES).expect("embedded suffix list is valid")
    }
}

/// Extracts the registered domain: the longest matching public suffix plus
/// one preceding label, or the last two labels when no suffix matches.
///
/// Output is lowercase with any trailing dot removed. A single-label input
/// (or a bare public suffix) is returned as-is, so the function is
/// idempotent.
pub fn extract_fld(fqdn: &str, rules: &SuffixRules) -> String {
    let normalized = fqdn.trim().trim_end_matches('.').to_lowercase();
    let labels: Vec<&str> = normalized.split('.').filter(|l| !l.is_empty()).collect();
    if labels.len() <= 1 {
        return labels.first().copied().unwrap_or_default().to_string();
    }
    let keep = match rules.longest_match(&labels) {
        Some(suffix_labels) if suffix_labels < labels.len() => suffix_labels + 1,
        Some(_) => labels.len(),
        None => 2,
    };
    labels[labels.len() - keep..].join(".")
}

/// The registered domain's own label, with the public suffix stripped
/// (`ftl.netflix.com` → `netflix`). This is the unit the DGA scorer reads.
pub fn sld_label(fqdn: &str, rules: &SuffixRules) -> String {
    let fld = extract_fld(fqdn, rules);
    fld.split('.').next().unwrap_or_default().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_subdomains() {
        let rules = SuffixRules::default();
        assert_eq!(extract_fld("ftl.netflix.com", &rules), "netflix.com");
        assert_eq!(extract_fld("api-global.netflix.com", &rules), "netflix.com");
    }

    #[test]
    fn registered_domain_is_fixed_point() {
        let rules = SuffixRules::default();
        assert_eq!(extract_fld("netflix.com", &rules), "netflix.com");
    }

    #[test]
    fn longest_suffix_wins() {
        let rules = SuffixRules::new(["uk", "co.uk"]).unwrap();
        assert_eq!(extract_fld("a.b.example.co.uk", &rules), "example.co.uk");
    }

    #[test]
    fn unknown_suffix_falls_back_to_two_labels() {
        let rules = SuffixRules::default();
        assert_eq!(
            extract_fld("deep.sub.host.internal", &rules),
            "host.internal"
        );
    }

    #[test]
    fn single_label_returns_itself() {
        let rules = SuffixRules::default();
        assert_eq!(extract_fld("localhost", &rules), "localhost");
        assert_eq!(extract_fld("com", &rules), "com");
    }

    #[test]
    fn bare_public_suffix_unchanged() {
        let rules = SuffixRules::default();
        assert_eq!(extract_fld("co.uk", &rules), "co.uk");
    }

    #[test]
    fn normalizes_case_and_trailing_dot() {
        let rules = SuffixRules::default();
        assert_eq!(extract_fld("WWW.Example.COM.", &rules), "example.com");
    }

    #[test]
    fn idempotent_over_assorted_inputs() {
        let rules = SuffixRules::default();
        for domain in [
            "a.b.c.d.example.com",
            "example.co.uk",
            "x.y.z.unknowntld",
            "single",
            "weird..dots.com",
            "UPPER.Case.ORG.",
        ] {
            let once = extract_fld(domain, &rules);
            assert_eq!(
                extract_fld(&once, &rules),
                once,
                "not idempotent for {domain}"
            );
        }
    }

    #[test]
    fn sld_label_strips_suffix() {
        let rules = SuffixRules::default();
        assert_eq!(sld_label("ftl.netflix.com", &rules), "netflix");
        assert_eq!(sld_label("example.co.uk", &rules), "example");
        assert_eq!(sld_label("localhost", &rules), "localhost");
    }

    #[test]
    fn rejects_malformed_rule_sets() {
        assert!(SuffixRules::new(Vec::<String>::new()).is_none());
        assert!(SuffixRules::new([".com"]).is_none());
        assert!(SuffixRules::new(["COM"]).is_none());
    }
}
