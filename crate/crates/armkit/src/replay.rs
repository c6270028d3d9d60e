//! Re-drives a saved session CSV as a frame stream.

use std::io::{self, Write};
use std::path::Path;

use armkit_core::protocol::{ImuFrame, Record, PROTOCOL_VERSION};

use crate::session_csv::{read_file, CsvError, SessionRow};
use crate::transport::write_paced;

#[derive(Debug, Clone)]
pub struct Replay {
    rows: Vec<SessionRow>,
    speed: f64,
}

/// Loads the whole file up front so a malformed row fails before anything
/// is emitted. `speed` scales the original pacing; `0` means no pacing.
pub fn replay_file(path: &Path, speed: f64) -> Result<Replay, CsvError> {
    Ok(Replay { rows: read_file(path)?, speed: if speed.is_finite() && speed > 0.0 { speed } else { 0.0 } })
}

impl Replay {
    pub fn rows(&self) -> &[SessionRow] {
        &self.rows
    }

    pub fn frames(&self) -> impl Iterator<Item = [ImuFrame; 2]> + '_ {
        self.rows.iter().map(SessionRow::frames)
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        std::iter::once(Record::Hello { version: PROTOCOL_VERSION })
            .chain(self.frames().flat_map(|p| p.map(Record::Sample)))
            .chain(std::iter::once(Record::Bye))
    }

    /// Writes the wire stream with the configured pacing.
    pub fn play<W: Write>(&self, out: W) -> io::Result<usize> {
        write_paced(out, self.records(), self.speed)
    }
}
