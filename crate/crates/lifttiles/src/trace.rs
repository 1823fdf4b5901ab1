//! Newline-delimited trace files and replay verification.

use lifttiles_core::sim::{replay, ReplayError, TraceRecord};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// One JSON record per line, fields in declaration order.
pub fn write_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceError::Parse { line: i + 1, source }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Identical { records: usize },
    /// First differing line (1-based) and the two texts.
    Diverged {
        line: usize,
        recorded: String,
        replayed: String,
    },
}

/// Re-runs the trace from its header and inputs and compares the state
/// records byte for byte.
pub fn verify(text: &str) -> Result<Verdict, TraceError> {
    let recorded = read_jsonl(text)?;
    let replayed = replay(&recorded)?;
    let strip = |rs: &[TraceRecord]| -> Vec<String> {
        rs.iter()
            .filter(|r| !matches!(r, TraceRecord::Summary { .. }))
            .map(|r| serde_json::to_string(r).expect("trace records serialize"))
            .collect()
    };
    let (a, b) = (strip(&recorded), strip(&replayed));
    for i in 0..a.len().max(b.len()) {
        let (x, y) = (a.get(i), b.get(i));
        if x != y {
            return Ok(Verdict::Diverged {
                line: i + 1,
                recorded: x.cloned().unwrap_or_default(),
                replayed: y.cloned().unwrap_or_default(),
            });
        }
    }
    Ok(Verdict::Identical { records: a.len() })
}
