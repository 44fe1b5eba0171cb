//! Record ingestion: JSON Lines, CSV, and raw wire-message streams.
//!
//! Every reader yields per-record `Result`s so a malformed line costs one
//! counted skip. Files ending in `.gz` are transparently (de)compressed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{DnsRequestRecord, RecordError};
use crate::wire::{parse_wire_query, WireError};

/// Largest frame accepted from a raw message stream (the DNS maximum).
pub const MAX_RAW_MESSAGE: usize = 65_535;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("record {index}: {source}")]
    BadRecord { index: usize, source: RecordError },
    #[error("message {index}: {source}")]
    BadMessage { index: usize, source: WireError },
    #[error("message {index}: no matching sidecar entry")]
    SidecarExhausted { index: usize },
    #[error("message {index}: frame length {len} exceeds {MAX_RAW_MESSAGE}")]
    OversizedFrame { index: usize, len: usize },
    #[error("line {line}: label must be 0 or 1, got {label}")]
    BadLabel { line: usize, label: i64 },
}

/// A labeled dataset row on the wire: the record schema plus a `label`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledLine {
    #[serde(flatten)]
    pub record: DnsRequestRecord,
    pub label: u8,
}

/// Parses JSON Lines records; blank lines are ignored.
pub fn jsonl_records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<DnsRequestRecord, IngestError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(idx, line)| match line {
            Err(e) => Some(Err(IngestError::Io(e))),
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(parse_record_line(idx + 1, &text)),
        })
}

/// Parses one JSON record line (1-based line number used in errors).
pub fn parse_record_line(line: usize, text: &str) -> Result<DnsRequestRecord, IngestError> {
    serde_json::from_str(text).map_err(|e| IngestError::BadLine {
        line,
        message: e.to_string(),
    })
}

/// Parses labeled JSON Lines rows (`label` ∈ {0, 1}).
pub fn labeled_jsonl_records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(DnsRequestRecord, u8), IngestError>> {
    reader.lines().enumerate().filter_map(|(idx, line)| {
        let line_no = idx + 1;
        match line {
            Err(e) => Some(Err(IngestError::Io(e))),
            Ok(text) if text.trim().is_empty() => None,
            Ok(text) => Some(
                serde_json::from_str::<LabeledLine>(&text)
                    .map_err(|e| IngestError::BadLine {
                        line: line_no,
                        message: e.to_string(),
                    })
                    .and_then(|row| {
                        if row.label > 1 {
                            Err(IngestError::BadLabel {
                                line: line_no,
                                label: i64::from(row.label),
                            })
                        } else {
                            Ok((row.record, row.label))
                        }
                    }),
            ),
        }
    })
}

/// Parses the CSV alternative: header row, columns in the JSON field order
/// `ts,src_ip,dst_ip,length,flags,questions,qtype,qname`.
pub fn csv_records<R: Read>(
    reader: R,
) -> impl Iterator<Item = Result<DnsRequestRecord, IngestError>> {
    csv::Reader::from_reader(reader)
        .into_deserialize::<DnsRequestRecord>()
        .enumerate()
        .map(|(idx, row)| {
            row.map_err(|e| IngestError::BadLine {
                line: idx + 2,
                message: e.to_string(),
            })
        })
}

/// Capture context for one raw wire message, carried in a JSON Lines
/// sidecar alongside the message stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub ts: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    /// Payload length override; defaults to the wire message length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<u32>,
}

/// Reads a binary stream of length-prefixed DNS query messages (4-byte
/// big-endian length, then message octets) merged with its sidecar.
///
/// Per-message parse failures yield `Err` items; a corrupt frame length
/// ends the stream after its error since framing can no longer be trusted.
pub fn raw_records<M: Read, S: BufRead>(
    messages: M,
    sidecar: S,
) -> impl Iterator<Item = Result<DnsRequestRecord, IngestError>> {
    RawReader {
        messages,
        sidecar_lines: sidecar.lines(),
        index: 0,
        poisoned: false,
    }
}

struct RawReader<M: Read, L> {
    messages: M,
    sidecar_lines: L,
    index: usize,
    poisoned: bool,
}

impl<M: Read, L: Iterator<Item = io::Result<String>>> RawReader<M, L> {
    fn next_sidecar(&mut self) -> Result<SidecarEntry, IngestError> {
        for line in self.sidecar_lines.by_ref() {
            let text = line?;
            if text.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&text).map_err(|e| IngestError::BadLine {
                line: self.index,
                message: format!("sidecar: {e}"),
            });
        }
        Err(IngestError::SidecarExhausted { index: self.index })
    }
}

impl<M: Read, L: Iterator<Item = io::Result<String>>> Iterator for RawReader<M, L> {
    type Item = Result<DnsRequestRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.poisoned {
            return None;
        }
        let mut len_buf = [0u8; 4];
        match read_exact_or_eof(&mut self.messages, &mut len_buf) {
            Ok(false) => return None,
            Ok(true) => {}
            Err(e) => {
                self.poisoned = true;
                return Some(Err(e.into()));
            }
        }
        self.index += 1;
        let len = u32::from_be_bytes(len_buf) as usize;
        if len > MAX_RAW_MESSAGE {
            self.poisoned = true;
            return Some(Err(IngestError::OversizedFrame {
                index: self.index,
                len,
            }));
        }
        let mut body = vec![0u8; len];
        if let Err(e) = self.messages.read_exact(&mut body) {
            self.poisoned = true;
            return Some(Err(e.into()));
        }

        let index = self.index;
        let item = self.next_sidecar().and_then(|ctx| {
            let wire = parse_wire_query(&body)
                .map_err(|source| IngestError::BadMessage { index, source })?;
            DnsRequestRecord {
                timestamp: ctx.ts,
                src_ip: ctx.src_ip,
                dst_ip: ctx.dst_ip,
                payload_length: ctx.length.unwrap_or(body.len() as u32),
                flags: wire.flags,
                question_count: wire.question_count,
                query_type: wire.query_type,
                query_name: wire.query_name,
            }
            .validated()
            .map_err(|source| IngestError::BadRecord { index, source })
        });
        Some(item)
    }
}

/// Writes records as JSON Lines.
pub fn write_jsonl<W: Write>(writer: &mut W, records: &[DnsRequestRecord]) -> io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes labeled rows as JSON Lines with a `label` field.
pub fn write_labeled_jsonl<W: Write>(
    writer: &mut W,
    rows: &[(DnsRequestRecord, u8)],
) -> io::Result<()> {
    for (record, label) in rows {
        let line = LabeledLine {
            record: record.clone(),
            label: *label,
        };
        serde_json::to_writer(&mut *writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads into `buf`; `Ok(false)` on clean EOF before the first byte.
fn read_exact_or_eof<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "partial frame",
                ))
            }
            n => filled += n,
        }
    }
    Ok(true)
}

/// Writes a length-prefixed raw message frame.
pub fn write_raw_frame<W: Write>(writer: &mut W, message: &[u8]) -> io::Result<()> {
    writer.write_all(&(message.len() as u32).to_be_bytes())?;
    writer.write_all(message)
}

/// Opens a buffered reader, decompressing when the path ends in `.gz`.
pub fn open_reader(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Creates a buffered writer, compressing when the path ends in `.gz`.
pub fn create_writer(path: &Path) -> io::Result<Box<dyn Write>> {
    let file = File::create(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufWriter::new(GzEncoder::new(
            file,
            Compression::default(),
        ))))
    } else {
        Ok(Box::new(BufWriter::new(file)))
    }
}

/// Reads records from a path, dispatching on extension: `.csv` for CSV,
/// anything else JSON Lines (`.gz` handled for both).
pub fn read_records_file(path: &Path) -> io::Result<(Vec<DnsRequestRecord>, u64)> {
    let is_csv = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".csv") || n.ends_with(".csv.gz"));
    let reader = open_reader(path)?;
    let mut records = Vec::new();
    let mut skipped = 0u64;
    let items: Box<dyn Iterator<Item = Result<DnsRequestRecord, IngestError>>> = if is_csv {
        Box::new(csv_records(reader))
    } else {
        Box::new(jsonl_records(reader))
    };
    for item in items {
        match item {
            Ok(record) => records.push(record),
            Err(_) => skipped += 1,
        }
    }
    Ok((records, skipped))
}

/// Reads a labeled JSON Lines dataset from a path.
pub fn read_labeled_file(path: &Path) -> io::Result<(Vec<(DnsRequestRecord, u8)>, u64)> {
    let reader = open_reader(path)?;
    let mut rows = Vec::new();
    let mut skipped = 0u64;
    for item in labeled_jsonl_records(reader) {
        match item {
            Ok(row) => rows.push(row),
            Err(_) => skipped += 1,
        }
    }
    Ok((rows, skipped))
}
