//! Parsing of raw DNS query messages (header plus first question).
//!
//! Only queries are accepted; responses and names using compression
//! pointers are rejected. Every malformed input maps to an error so a bad
//! packet costs one skip, never a crash.

use thiserror::Error;

use crate::record::{QueryType, MAX_NAME_LEN};

/// DNS header size in octets.
pub const HEADER_LEN: usize = 12;

const QR_MASK: u16 = 0x8000;

/// Fields recoverable from a raw query message; capture context (timestamp,
/// endpoints, payload length) comes from the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireQuery {
    pub flags: u16,
    pub question_count: u16,
    /// Type of the first question; `Other(0)` when the question section is
    /// empty.
    pub query_type: QueryType,
    /// First question's name; `None` for an empty section or the root name.
    pub query_name: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message shorter than its declared structure")]
    TruncatedMessage,
    #[error("malformed label encoding")]
    MalformedLabel,
    #[error("message is a response, not a query")]
    NotAQuery,
}

/// Decodes the header and first question of a DNS query message.
pub fn parse_wire_query(bytes: &[u8]) -> Result<WireQuery, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::TruncatedMessage);
    }
    let flags = u16::from_be_bytes([bytes[2], bytes[3]]);
    if flags & QR_MASK != 0 {
        return Err(WireError::NotAQuery);
    }
    let question_count = u16::from_be_bytes([bytes[4], bytes[5]]);
    if question_count == 0 {
        return Ok(WireQuery {
            flags,
            question_count,
            query_type: QueryType::Other(0),
            query_name: None,
        });
    }

    let mut pos = HEADER_LEN;
    let mut name = String::new();
    loop {
        let len = *bytes.get(pos).ok_or(WireError::TruncatedMessage)? as usize;
        pos += 1;
        if len == 0 {
            break;
        }
        // A length over 63 is either a compression pointer (top bits 11) or
        // garbage; queries use neither.
        if len > 63 {
            return Err(WireError::MalformedLabel);
        }
        let label = bytes.get(pos..pos + len).ok_or(WireError::MalformedLabel)?;
        pos += len;
        if !name.is_empty() {
            name.push('.');
        }
        name.push_str(&String::from_utf8_lossy(label));
        if name.len() > MAX_NAME_LEN {
            return Err(WireError::MalformedLabel);
        }
    }
    let type_class = bytes.get(pos..pos + 4).ok_or(WireError::TruncatedMessage)?;
    let qtype = u16::from_be_bytes([type_class[0], type_class[1]]);

    Ok(WireQuery {
        flags,
        question_count,
        query_type: QueryType::from_code(qtype),
        query_name: (!name.is_empty()).then_some(name),
    })
}

/// Encodes a query message: header plus, when a name is given, a single
/// question in standard label format (class IN).
///
/// Returns `None` when the name violates label or total-length limits.
pub fn encode_query(id: u16, flags: u16, question: Option<(&str, QueryType)>) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 16);
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&(flags & !QR_MASK).to_be_bytes());
    let qdcount: u16 = question.is_some() as u16;
    out.extend_from_slice(&qdcount.to_be_bytes());
    out.extend_from_slice(&[0u8; 6]); // ANCOUNT, NSCOUNT, ARCOUNT

    if let Some((name, qtype)) = question {
        let trimmed = name.strip_suffix('.').unwrap_or(name);
        if trimmed.len() > MAX_NAME_LEN {
            return None;
        }
        if !trimmed.is_empty() {
            for label in trimmed.split('.') {
                if label.is_empty() || label.len() > 63 {
                    return None;
                }
                out.push(label.len() as u8);
                out.extend_from_slice(label.as_bytes());
            }
        }
        out.push(0);
        out.extend_from_slice(&qtype.code().to_be_bytes());
        out.extend_from_slice(&1u16.to_be_bytes()); // class IN
    }
    Some(out)
}
