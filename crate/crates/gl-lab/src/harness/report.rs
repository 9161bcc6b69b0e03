//! Artifact persistence: fixed-schema CSV tables and a versioned JSON
//! summary, written atomically (temp file + rename) so a killed run never
//! leaves a partial table under its final name.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// In-memory CSV table with a fixed header.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        CsvTable {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::usage(format!(
                "row width {} does not match header width {} in table {}",
                row.len(),
                self.header.len(),
                self.name
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Format a float for CSV with full round-trip precision.
pub fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::usage("output path has no parent directory"))?;
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("table")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// The complete output of one `run` invocation.
#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub out_dir: PathBuf,
    pub config_snapshot: String,
    pub tables: Vec<CsvTable>,
    pub summary: serde_json::Value,
    pub wall_secs: f64,
    /// (check name, passed) pairs; drives the process exit code.
    pub verdicts: Vec<(String, bool)>,
}

impl RunArtifact {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|(_, ok)| *ok)
    }

    /// Persist config snapshot, every table, and the summary.
    pub fn write(&self) -> Result<()> {
        write_atomic(&self.out_dir.join("config.toml"), self.config_snapshot.as_bytes())?;
        for t in &self.tables {
            write_atomic(
                &self.out_dir.join(format!("{}.csv", t.name)),
                t.to_csv().as_bytes(),
            )?;
        }
        let mut summary = self.summary.clone();
        if let Some(obj) = summary.as_object_mut() {
            obj.insert(
                "schema_version".into(),
                serde_json::json!(SUMMARY_SCHEMA_VERSION),
            );
            obj.insert("wall_secs".into(), serde_json::json!(self.wall_secs));
            obj.insert(
                "verdicts".into(),
                serde_json::json!(self
                    .verdicts
                    .iter()
                    .map(|(k, v)| serde_json::json!({"check": k, "pass": v}))
                    .collect::<Vec<_>>()),
            );
        }
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::numeric(format!("summary serialization: {e}")))?;
        write_atomic(&self.out_dir.join("summary.json"), text.as_bytes())?;
        Ok(())
    }
}
