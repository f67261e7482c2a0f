//! Line-delimited JSON transcript records.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ActionKind, LogEntry};
use crate::graph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RecordKind {
    Ask,
    Skip,
    User,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    /// Milliseconds since the Unix epoch; omitted in simulated transcripts so
    /// they stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
    pub session: String,
    pub seq: usize,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub degraded: bool,
}

pub fn transcript_records(session: &str, log: &[LogEntry], timestamp_ms: Option<u64>) -> Vec<TranscriptRecord> {
    log.iter()
        .enumerate()
        .map(|(seq, entry)| {
            let (kind, node, text, degraded) = match entry {
                LogEntry::Action(a) => (
                    match a.kind {
                        ActionKind::Ask => RecordKind::Ask,
                        ActionKind::Skip => RecordKind::Skip,
                    },
                    Some(a.node.clone()),
                    a.rendered_text.clone(),
                    false,
                ),
                LogEntry::UserInput { text } => (RecordKind::User, None, Some(text.clone()), false),
                LogEntry::Flag { flag } => (RecordKind::Flag, None, Some(flag.to_string()), flag.is_degrading()),
            };
            TranscriptRecord {
                timestamp_ms,
                session: session.to_string(),
                seq,
                kind,
                node,
                text,
                degraded,
            }
        })
        .collect()
}

pub fn write_transcript<W: Write>(mut w: W, records: &[TranscriptRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records back, skipping blank lines.
pub fn read_transcript<R: BufRead>(r: R) -> io::Result<Vec<TranscriptRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}
