//! Session CSV: one row per 50 Hz tick with both sensors' angles and the
//! therapy's primary angle.

use std::io::{self, Read, Write};
use std::path::Path;

use armkit_core::orientation::Euler;
use armkit_core::protocol::{write_centidegrees, Device, ImuFrame};
use thiserror::Error;

pub const HEADER: &str = "t_ms,yaw1,pitch1,roll1,yaw2,pitch2,roll2,theta_deg";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionRow {
    pub t_ms: u64,
    pub imu1: Euler,
    pub imu2: Euler,
    pub theta_deg: f64,
}

impl SessionRow {
    pub fn frames(&self) -> [ImuFrame; 2] {
        [ImuFrame::new(self.t_ms, Device::Imu1, self.imu1), ImuFrame::new(self.t_ms, Device::Imu2, self.imu2)]
    }

    /// The row as written, without a newline.
    pub fn to_line(&self) -> String {
        let mut s = self.t_ms.to_string();
        for e in [self.imu1, self.imu2] {
            for v in [e.yaw_deg, e.pitch_deg, e.roll_deg] {
                s.push(',');
                write_centidegrees(&mut s, v);
            }
        }
        s.push_str(&format!(",{:.4}", self.theta_deg));
        s
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot read {path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("bad header: expected `{HEADER}`, found `{0}`")]
    Header(String),
    /// `row` counts data rows from 1; the header is not a row.
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

pub fn write_rows<W: Write>(out: W, rows: &[SessionRow]) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    writeln!(out, "{HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_line())?;
    }
    out.flush()
}

pub fn read_file(path: &Path) -> Result<Vec<SessionRow>, CsvError> {
    let f = std::fs::File::open(path).map_err(|source| CsvError::Open { path: path.display().to_string(), source })?;
    read_rows(f)
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<SessionRow>, CsvError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = reader.headers().map_err(|e| CsvError::Header(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(CsvError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows: Vec<SessionRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let bad = |msg: String| CsvError::Row { row, msg };
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", record.len())));
        }
        let num = |k: usize| -> Result<f64, CsvError> {
            let field = record[k].trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{} is not numeric: `{field}`", header_name(k))))
        };
        let t_ms: u64 = record[0].trim().parse().map_err(|_| bad(format!("t_ms is not an integer: `{}`", &record[0])))?;
        if rows.last().is_some_and(|prev| t_ms < prev.t_ms) {
            return Err(bad(format!("t_ms {t_ms} goes backwards")));
        }
        let mut angles = [0.0; 6];
        for (k, a) in angles.iter_mut().enumerate() {
            *a = num(k + 1)?;
            let limit = if matches!(k, 1 | 4) { 90.0 } else { 180.0 };
            if !(-limit..=limit).contains(a) {
                return Err(bad(format!("{} out of range: {a}", header_name(k + 1))));
            }
        }
        rows.push(SessionRow {
            t_ms,
            imu1: Euler::new(angles[0], angles[1], angles[2]),
            imu2: Euler::new(angles[3], angles[4], angles[5]),
            theta_deg: num(7)?,
        });
    }
    Ok(rows)
}

fn header_name(k: usize) -> &'static str {
    HEADER.split(',').nth(k).unwrap_or("field")
}
