//! Episode log: one JSON record per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{EpisodeRecord, RolloutError};

pub fn write_episodes(records: &[EpisodeRecord], path: &Path) -> Result<(), RolloutError> {
    let io = |e: std::io::Error| RolloutError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| RolloutError::Io(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads records back. Blank lines are skipped; a malformed line is
/// reported with its 1-based line number.
pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, RolloutError> {
    let f = std::fs::File::open(path).map_err(|e| RolloutError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RolloutError::Parse { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RolloutError::Parse { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}
