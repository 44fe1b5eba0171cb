//! Canonical DNS request model and its numeric feature encoding.
//!
//! A [`DnsRequestRecord`] is the pipeline's unit of work: one observed DNS
//! query with its capture context. [`extract_features`] turns it into the
//! fixed 8-component [`FeatureVector`] consumed by the forest classifier.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Maximum length of a fully qualified domain name.
pub const MAX_NAME_LEN: usize = 253;
/// Maximum length of a single DNS label.
pub const MAX_LABEL_LEN: usize = 63;

/// Resource-record type of a DNS question, carrying the standard type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryType {
    A,
    Aaaa,
    Cname,
    Ptr,
    Other(u16),
}

impl QueryType {
    /// Standard resource-record type code (A=1, CNAME=5, PTR=12, AAAA=28).
    pub fn code(self) -> u16 {
        match self {
            QueryType::A => 1,
            QueryType::Cname => 5,
            QueryType::Ptr => 12,
            QueryType::Aaaa => 28,
            QueryType::Other(code) => code,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code {
            1 => QueryType::A,
            5 => QueryType::Cname,
            12 => QueryType::Ptr,
            28 => QueryType::Aaaa,
            other => QueryType::Other(other),
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryType::A => write!(f, "A"),
            QueryType::Aaaa => write!(f, "AAAA"),
            QueryType::Cname => write!(f, "CNAME"),
            QueryType::Ptr => write!(f, "PTR"),
            QueryType::Other(code) => write!(f, "{code}"),
        }
    }
}

impl FromStr for QueryType {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" => Ok(QueryType::A),
            "AAAA" => Ok(QueryType::Aaaa),
            "CNAME" => Ok(QueryType::Cname),
            "PTR" => Ok(QueryType::Ptr),
            other => other
                .parse::<u16>()
                .map(QueryType::from_code)
                .map_err(|_| RecordError::InvalidQueryType(other.to_string())),
        }
    }
}

// On the wire format ("qtype") the four named types serialize as strings and
// anything else as its numeric code; both shapes are accepted on input.
impl Serialize for QueryType {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            QueryType::Other(code) => ser.serialize_u16(*code),
            named => ser.serialize_str(&named.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for QueryType {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct QtypeVisitor;

        impl serde::de::Visitor<'_> for QtypeVisitor {
            type Value = QueryType;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(
                    f,
                    "\"A\", \"AAAA\", \"CNAME\", \"PTR\", or an integer type code"
                )
            }

            fn visit_str<E: DeError>(self, v: &str) -> Result<QueryType, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_u64<E: DeError>(self, v: u64) -> Result<QueryType, E> {
                u16::try_from(v)
                    .map(QueryType::from_code)
                    .map_err(|_| E::custom(format!("query type code {v} out of range")))
            }

            fn visit_i64<E: DeError>(self, v: i64) -> Result<QueryType, E> {
                u16::try_from(v)
                    .map(QueryType::from_code)
                    .map_err(|_| E::custom(format!("query type code {v} out of range")))
            }
        }

        de.deserialize_any(QtypeVisitor)
    }
}

/// One observed DNS query.
///
/// Wire field names follow the JSON Lines ingestion schema: `ts`, `src_ip`,
/// `dst_ip`, `length`, `flags`, `questions`, `qtype`, `qname`. Records are
/// validated on deserialization; an empty `qname` normalizes to `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct DnsRequestRecord {
    /// Seconds since epoch (or capture start), fractional.
    #[serde(rename = "ts")]
    pub timestamp: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    /// Payload size in bytes.
    #[serde(rename = "length")]
    pub payload_length: u32,
    /// 16-bit DNS header flags word.
    pub flags: u16,
    /// QDCOUNT.
    #[serde(rename = "questions")]
    pub question_count: u16,
    #[serde(rename = "qtype")]
    pub query_type: QueryType,
    /// First question's name; `None` models a NULL name.
    #[serde(rename = "qname")]
    pub query_name: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    ts: f64,
    src_ip: Ipv4Addr,
    dst_ip: Ipv4Addr,
    length: u32,
    flags: u16,
    questions: u16,
    qtype: QueryType,
    #[serde(default)]
    qname: Option<String>,
}

impl TryFrom<RawRecord> for DnsRequestRecord {
    type Error = RecordError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let record = DnsRequestRecord {
            timestamp: raw.ts,
            src_ip: raw.src_ip,
            dst_ip: raw.dst_ip,
            payload_length: raw.length,
            flags: raw.flags,
            question_count: raw.questions,
            query_type: raw.qtype,
            query_name: raw.qname,
        };
        record.validated()
    }
}

impl DnsRequestRecord {
    /// Checks the record invariants, normalizing an empty name to `None`.
    pub fn validated(mut self) -> Result<Self, RecordError> {
        if !self.timestamp.is_finite() || self.timestamp < 0.0 {
            return Err(RecordError::NegativeTimestamp(self.timestamp));
        }
        if let Some(name) = &self.query_name {
            if name.is_empty() {
                self.query_name = None;
            } else {
                validate_domain_name(name)?;
            }
        }
        Ok(self)
    }

    /// True when the Recursion-Desired header bit is set.
    pub fn recursion_desired(&self) -> bool {
        self.flags & 0x0100 != 0
    }
}

/// Checks FQDN shape: non-empty, ≤ 253 chars, labels 1–63 chars each.
pub fn validate_domain_name(name: &str) -> Result<(), RecordError> {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.is_empty() || trimmed.len() > MAX_NAME_LEN {
        return Err(RecordError::InvalidDomainName(name.to_string()));
    }
    for label in trimmed.split('.') {
        if label.is_empty() || label.len() > MAX_LABEL_LEN {
            return Err(RecordError::InvalidDomainName(name.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("timestamp must be a non-negative finite number, got {0}")]
    NegativeTimestamp(f64),
    #[error("invalid domain name: {0:?}")]
    InvalidDomainName(String),
    #[error("invalid query type: {0:?}")]
    InvalidQueryType(String),
    #[error("invalid IPv4 address: {0:?}")]
    InvalidIp(String),
}

/// The 8-feature numeric encoding of a request, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub src_ip_num: u32,
    pub dst_ip_num: u32,
    pub length: u32,
    /// Recursion-Desired bit as 0/1.
    pub dns_flag: u8,
    pub questions: u16,
    pub query_type_code: u16,
    /// 1 when the query name is absent or empty.
    pub qry_name_null: u8,
    pub timestamp: f64,
}

/// Number of components in a [`FeatureVector`].
pub const FEATURE_COUNT: usize = 8;

/// Column names in feature order, for reports.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "src_ip_num",
    "dst_ip_num",
    "length",
    "dns_flag",
    "questions",
    "query_type_code",
    "qry_name_null",
    "timestamp",
];

impl FeatureVector {
    /// Components in fixed order: src, dst, length, flag, questions, type,
    /// name-null, timestamp.
    pub fn as_array(&self) -> [f64; FEATURE_COUNT] {
        [
            f64::from(self.src_ip_num),
            f64::from(self.dst_ip_num),
            f64::from(self.length),
            f64::from(self.dns_flag),
            f64::from(self.questions),
            f64::from(self.query_type_code),
            f64::from(self.qry_name_null),
            self.timestamp,
        ]
    }
}

/// Converts a dotted-quad IPv4 string to its 32-bit value, most significant
/// octet first.
pub fn ip_to_u32(ip: &str) -> Result<u32, RecordError> {
    let addr: Ipv4Addr = ip
        .parse()
        .map_err(|_| RecordError::InvalidIp(ip.to_string()))?;
    Ok(u32::from(addr))
}

/// Inverse of [`ip_to_u32`].
pub fn u32_to_ip(value: u32) -> String {
    Ipv4Addr::from(value).to_string()
}

/// Encodes a record as its deterministic feature vector.
pub fn extract_features(record: &DnsRequestRecord) -> FeatureVector {
    let name_null = match &record.query_name {
        Some(name) if !name.is_empty() => 0,
        _ => 1,
    };
    FeatureVector {
        src_ip_num: u32::from(record.src_ip),
        dst_ip_num: u32::from(record.dst_ip),
        length: record.payload_length,
        dns_flag: u8::from(record.recursion_desired()),
        questions: record.question_count,
        query_type_code: record.query_type.code(),
        qry_name_null: name_null,
        timestamp: record.timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_record() -> DnsRequestRecord {
        DnsRequestRecord {
            timestamp: 0.0,
            src_ip: "0.0.0.1".parse().unwrap(),
            dst_ip: "0.0.0.2".parse().unwrap(),
            payload_length: 60,
            flags: 0x0100,
            question_count: 1,
            query_type: QueryType::A,
            query_name: Some("a.com".to_string()),
        }
    }

    #[test]
    fn ip_to_u32_known_values() {
        assert_eq!(ip_to_u32("0.0.0.0").unwrap(), 0);
        assert_eq!(ip_to_u32("0.0.0.1").unwrap(), 1);
        // 192*2^24 + 168*2^16 + 1*2^8 + 1
        assert_eq!(ip_to_u32("192.168.1.1").unwrap(), 3_232_235_777);
    }

    #[test]
    fn ip_to_u32_rejects_bad_shapes() {
        for bad in ["", "1.2.3", "1.2.3.4.5", "256.0.0.1", "a.b.c.d", "1.2.3.-4"] {
            assert!(ip_to_u32(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn ip_roundtrip_is_bijective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let v: u32 = rng.gen();
            let s = u32_to_ip(v);
            assert_eq!(ip_to_u32(&s).unwrap(), v);
        }
        // And string-side: formatting the parsed value reproduces the input.
        for _ in 0..2000 {
            let octets: [u8; 4] = rng.gen();
            let s = format!("{}.{}.{}.{}", octets[0], octets[1], octets[2], octets[3]);
            assert_eq!(u32_to_ip(ip_to_u32(&s).unwrap()), s);
        }
    }

    #[test]
    fn feature_vector_field_by_field() {
        let fv = extract_features(&sample_record());
        assert_eq!(fv.as_array(), [1.0, 2.0, 60.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn null_name_sets_flag() {
        let mut record = sample_record();
        record.query_name = None;
        assert_eq!(extract_features(&record).qry_name_null, 1);
    }

    #[test]
    fn aaaa_uses_standard_code() {
        let mut record = sample_record();
        record.query_type = QueryType::Aaaa;
        assert_eq!(extract_features(&record).query_type_code, 28);
    }

    #[test]
    fn type_codes_match_registry() {
        assert_eq!(QueryType::A.code(), 1);
        assert_eq!(QueryType::Cname.code(), 5);
        assert_eq!(QueryType::Ptr.code(), 12);
        assert_eq!(QueryType::Aaaa.code(), 28);
        assert_eq!(QueryType::Other(16).code(), 16);
        assert_eq!(QueryType::from_code(28), QueryType::Aaaa);
    }

    #[test]
    fn record_json_schema_roundtrip() {
        let line = r#"{"ts":1.5,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":70,"flags":256,"questions":1,"qtype":"AAAA","qname":"x.example.com"}"#;
        let record: DnsRequestRecord = serde_json::from_str(line).unwrap();
        assert_eq!(record.query_type, QueryType::Aaaa);
        assert_eq!(record.query_name.as_deref(), Some("x.example.com"));
        let back = serde_json::to_value(&record).unwrap();
        assert_eq!(back["qtype"], "AAAA");
        assert_eq!(back["ts"], 1.5);
    }

    #[test]
    fn numeric_qtype_and_null_qname_accepted() {
        let line = r#"{"ts":0,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":60,"flags":256,"questions":1,"qtype":16,"qname":null}"#;
        let record: DnsRequestRecord = serde_json::from_str(line).unwrap();
        assert_eq!(record.query_type, QueryType::Other(16));
        assert!(record.query_name.is_none());
        assert_eq!(serde_json::to_value(&record).unwrap()["qtype"], 16);
    }

    #[test]
    fn validation_rejects_bad_records() {
        let negative_ts = r#"{"ts":-1,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":60,"flags":256,"questions":1,"qtype":"A","qname":"a.com"}"#;
        assert!(serde_json::from_str::<DnsRequestRecord>(negative_ts).is_err());

        let long_label = format!(
            r#"{{"ts":0,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":60,"flags":256,"questions":1,"qtype":"A","qname":"{}.com"}}"#,
            "a".repeat(64)
        );
        assert!(serde_json::from_str::<DnsRequestRecord>(&long_label).is_err());

        let ipv6 = r#"{"ts":0,"src_ip":"::1","dst_ip":"8.8.8.8","length":60,"flags":256,"questions":1,"qtype":"A","qname":"a.com"}"#;
        assert!(serde_json::from_str::<DnsRequestRecord>(ipv6).is_err());
    }

    #[test]
    fn empty_qname_normalizes_to_none() {
        let line = r#"{"ts":0,"src_ip":"10.0.0.1","dst_ip":"8.8.8.8","length":60,"flags":0,"questions":0,"qtype":"A","qname":""}"#;
        let record: DnsRequestRecord = serde_json::from_str(line).unwrap();
        assert!(record.query_name.is_none());
        assert_eq!(extract_features(&record).qry_name_null, 1);
    }
}
