//! Embedded per-patient score tables (system and therapist).

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use thiserror::Error;

use crate::therapy::TherapyCode;

pub const SYSTEM_SCORES_CSV: &str = include_str!("../../fixtures/table2_system_scores.csv");
pub const PT_SCORES_CSV: &str = include_str!("../../fixtures/table3_pt_scores.csv");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("table has no `{0}` row")]
    MissingRow(&'static str),
}

/// Therapy rows by patient columns; `None` where a therapy was not administered.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub patients: Vec<String>,
    pub cells: Vec<(TherapyCode, Vec<Option<f64>>)>,
    pub score: Vec<f64>,
    pub max_score: Vec<f64>,
}

impl ScoreTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TableError::Malformed { line: 1, msg: "empty table".into() })?;
        let patients: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut cells = Vec::new();
        let (mut score, mut max_score) = (None, None);
        for (i, line) in lines {
            let bad = |msg: String| TableError::Malformed { line: i + 1, msg };
            let mut fields = line.split(',').map(str::trim);
            let label = fields.next().unwrap_or_default();
            let values: Vec<Option<f64>> = fields
                .map(|f| match f {
                    "-" => Ok(None),
                    _ => f.parse::<f64>().map(Some).map_err(|_| bad(alloc::format!("`{f}` is not a number"))),
                })
                .collect::<Result<_, _>>()?;
            if values.len() != patients.len() {
                return Err(bad(alloc::format!("expected {} cells, found {}", patients.len(), values.len())));
            }
            match label {
                "Score" | "Max Score" => {
                    let totals = values
                        .iter()
                        .map(|v| v.ok_or_else(|| bad(alloc::format!("{label} cannot be `-`"))))
                        .collect::<Result<Vec<f64>, _>>()?;
                    if label == "Score" {
                        score = Some(totals);
                    } else {
                        max_score = Some(totals);
                    }
                }
                code => {
                    let code = TherapyCode::from_str(code).map_err(|e| bad(e.to_string()))?;
                    cells.push((code, values));
                }
            }
        }
        Ok(ScoreTable {
            patients,
            cells,
            score: score.ok_or(TableError::MissingRow("Score"))?,
            max_score: max_score.ok_or(TableError::MissingRow("Max Score"))?,
        })
    }

    pub fn system() -> Self {
        Self::parse(SYSTEM_SCORES_CSV).expect("embedded system table parses")
    }

    pub fn therapist() -> Self {
        Self::parse(PT_SCORES_CSV).expect("embedded therapist table parses")
    }

    /// Administered (therapy, score) pairs of one patient column.
    pub fn column(&self, patient: usize) -> Vec<(TherapyCode, f64)> {
        self.cells.iter().filter_map(|(code, row)| row[patient].map(|v| (*code, v))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_tables() {
        let sys = ScoreTable::system();
        let pt = ScoreTable::therapist();
        assert_eq!(sys.patients.len(), 16);
        assert_eq!(sys.cells.len(), 16);
        assert_eq!(sys.patients, pt.patients);
        assert_eq!(sys.max_score, pt.max_score);
        // Max score is two per administered therapy in both tables.
        for p in 0..16 {
            assert_eq!(sys.column(p).len() as f64 * 2.0, sys.max_score[p]);
            assert_eq!(pt.column(p).len() as f64 * 2.0, pt.max_score[p]);
        }
    }

    #[test]
    fn rejects_bad_cells() {
        let bad = "therapy,p1\nWF,abc\nScore,1\nMax Score,2\n";
        assert!(matches!(ScoreTable::parse(bad), Err(TableError::Malformed { line: 2, .. })));
        let unknown = "therapy,p1\nXX,1\nScore,1\nMax Score,2\n";
        assert!(ScoreTable::parse(unknown).is_err());
        assert_eq!(ScoreTable::parse("therapy,p1\nWF,1\n"), Err(TableError::MissingRow("Score")));
    }
}
