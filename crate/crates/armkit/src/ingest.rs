//! Line-level ingest: decodes wire records, fuses raw frames and feeds the
//! session driver.

use std::io::{self, BufRead};

use armkit_core::orientation::{FilterConfig, RawFusion};
use armkit_core::protocol::{decode_record, Record};
use armkit_core::SAMPLE_RATE_HZ;

use crate::driver::{DriverError, SessionDriver};

#[derive(Debug)]
pub struct LineIngest {
    fusion: RawFusion,
    bad_lines: usize,
}

impl Default for LineIngest {
    fn default() -> Self {
        LineIngest { fusion: RawFusion::new(FilterConfig::default(), SAMPLE_RATE_HZ), bad_lines: 0 }
    }
}

impl LineIngest {
    pub fn bad_lines(&self) -> usize {
        self.bad_lines
    }

    /// Malformed lines are counted and reported on the live channel, not fatal.
    pub fn feed(&mut self, driver: &mut SessionDriver, line: &str) -> Result<(), DriverError> {
        if line.trim().is_empty() {
            return Ok(());
        }
        match decode_record(line) {
            Ok(Record::Raw(raw)) => match self.fusion.push(&raw) {
                Ok(frame) => driver.push_frame(frame),
                Err(e) => driver.warn(format!("raw frame rejected: {e}")),
            },
            Ok(record) => driver.push_record(&record)?,
            Err(e) => {
                self.bad_lines += 1;
                driver.warn(format!("malformed line `{}`: {e}", line.trim_end()));
            }
        }
        Ok(())
    }
}

/// Reads lines until the session leaves the streaming states or the input
/// ends. A read timeout counts as link silence; `on_line` sees the driver
/// after every line.
pub fn run_blocking<R: BufRead>(
    driver: &mut SessionDriver,
    mut input: R,
    mut on_line: impl FnMut(&mut SessionDriver),
) -> Result<LineIngest, DriverError> {
    let mut ingest = LineIngest::default();
    let mut line = String::new();
    while driver.is_streaming() {
        line.clear();
        match input.read_line(&mut line) {
            Ok(0) => {
                driver.end_of_stream();
                break;
            }
            Ok(_) => ingest.feed(driver, &line)?,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => driver.dropout(),
            Err(e) => {
                driver.warn(format!("read failed: {e}"));
                driver.end_of_stream();
                break;
            }
        }
        on_line(driver);
    }
    on_line(driver);
    Ok(ingest)
}
