//! CSV export, one UTF-8 file per table with a header row.

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::Dataset;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error on {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// File name for a catalog table, e.g. `dbo.MinuteDataNW` → `MinuteDataNW.csv`.
pub fn table_file_name(table: &str) -> String {
    let bare = table.strip_prefix("dbo.").unwrap_or(table);
    format!("{bare}.csv")
}

fn write_table<T: Serialize>(dir: &Path, table: &str, rows: &[T]) -> Result<(), CsvError> {
    let path = dir.join(table_file_name(table));
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(&path).map_err(|source| CsvError::Csv { path: display.clone(), source })?;
    for row in rows {
        writer.serialize(row).map_err(|source| CsvError::Csv { path: display.clone(), source })?;
    }
    writer.flush().map_err(|source| CsvError::Io { path: display, source })
}

impl Dataset {
    /// Writes the six tables into `dir`, creating it if needed.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<(), CsvError> {
        fs::create_dir_all(dir).map_err(|source| CsvError::Io { path: dir.display().to_string(), source })?;
        write_table(dir, "dbo.cabinets", &self.detectors)?;
        write_table(dir, "dbo.cabinfo", &self.cabinets)?;
        write_table(dir, "dbo.MinuteDataNW", &self.observations)?;
        write_table(dir, "dbo.Segments", &self.segments)?;
        write_table(dir, "dbo.SegmentTrafficIndex", &self.segment_index)?;
        write_table(dir, "dbo.TrafficIndex", &self.daily_stats)?;
        Ok(())
    }
}
