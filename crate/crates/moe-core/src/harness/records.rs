//! Per-replicate loss records and their CSV round trip.
//!
//! The column set and order are part of the output contract: runs with the
//! same configuration must produce byte-identical files regardless of thread
//! count or resume boundaries. Floats are therefore formatted with the
//! shortest round-trip representation (`{:?}`) rather than locale- or
//! precision-dependent formatting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "scenario",
    "n",
    "replicate",
    "loss_name",
    "r",
    "loss_value",
    "objective",
    "converged",
    "winner_start",
    "wall_ms",
];

/// One loss evaluation of one fitted replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordRow {
    pub scenario: String,
    pub n: u64,
    pub replicate: u64,
    pub loss_name: String,
    /// Order of the loss, when the loss family has one.
    pub r: Option<f64>,
    /// NaN when the fit failed and the loss could not be evaluated.
    pub loss_value: f64,
    pub objective: f64,
    pub converged: bool,
    pub winner_start: u64,
    /// Zero unless timing capture was requested; timing is outside the
    /// determinism contract.
    pub wall_ms: u64,
}

impl RecordRow {
    fn to_fields(&self) -> [String; 10] {
        [
            self.scenario.clone(),
            self.n.to_string(),
            self.replicate.to_string(),
            self.loss_name.clone(),
            self.r.map(|r| format!("{r:?}")).unwrap_or_default(),
            format!("{:?}", self.loss_value),
            format!("{:?}", self.objective),
            self.converged.to_string(),
            self.winner_start.to_string(),
            self.wall_ms.to_string(),
        ]
    }
}

fn parse<T: std::str::FromStr>(field: &str, name: &'static str, line: u64) -> Result<T> {
    field.parse().map_err(|_| Error::InvalidConfig {
        reason: format!("records line {line}: cannot parse {name} from `{field}`"),
    })
}

/// Serialize rows to CSV bytes, header first, rows in the given order.
pub fn records_to_csv(rows: &[RecordRow]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.write_record(row.to_fields())?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Write rows to `path` atomically (temp file in the same directory, then
/// rename), so an interrupted run can never leave a half-written table.
pub fn write_records(path: &Path, rows: &[RecordRow]) -> Result<()> {
    let bytes = records_to_csv(rows)?;
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a records table written by [`write_records`]. The header must match
/// the contract exactly.
pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidConfig {
            reason: format!(
                "records file {} has header {:?}, expected {:?}",
                path.display(),
                header.iter().collect::<Vec<_>>(),
                CSV_HEADER
            ),
        });
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx as u64 + 2;
        if record.len() != CSV_HEADER.len() {
            return Err(Error::InvalidConfig {
                reason: format!("records line {line}: expected 10 fields, got {}", record.len()),
            });
        }
        let r_field = &record[4];
        rows.push(RecordRow {
            scenario: record[0].to_string(),
            n: parse(&record[1], "n", line)?,
            replicate: parse(&record[2], "replicate", line)?,
            loss_name: record[3].to_string(),
            r: if r_field.is_empty() {
                None
            } else {
                Some(parse(r_field, "r", line)?)
            },
            loss_value: parse(&record[5], "loss_value", line)?,
            objective: parse(&record[6], "objective", line)?,
            converged: parse(&record[7], "converged", line)?,
            winner_start: parse(&record[8], "winner_start", line)?,
            wall_ms: parse(&record[9], "wall_ms", line)?,
        });
    }
    Ok(rows)
}
