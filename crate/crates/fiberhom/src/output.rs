//! CSV tables, run manifests and the calibration file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fiberhom_core::bessel::{BoundId, Calibration};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A table whose first column is always `config_hash`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.to_string(), header: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k].as_str()).collect())
    }

    pub fn write(&self, dir: &Path, config_hash: &str) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut header = vec!["config_hash".to_string()];
        header.extend(self.header.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![config_hash.to_string()];
            rec.extend(r.iter().cloned());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip formatting, stable across runs.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn flag(b: bool) -> String {
    if b { "pass" } else { "fail" }.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub files: Vec<String>,
    /// Wall time per stage in seconds.
    pub wall_times: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

/// Hex SHA-256 of the little-endian bytes of a grid.
pub fn grid_hash(grid: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in grid {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One line per bound: `bound_id constant grid_hash`.
pub fn format_calibration(cals: &[Calibration]) -> String {
    let mut s = String::from("# bound_id constant grid_sha256\n");
    for c in cals {
        let _ = writeln!(s, "{} {:e} {}", c.id.name(), c.constant, grid_hash(&c.grid));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationEntry {
    pub id: BoundId,
    pub constant: f64,
    pub grid_hash: String,
}

pub fn parse_calibration(text: &str) -> anyhow::Result<Vec<CalibrationEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        anyhow::ensure!(parts.len() == 3, "calibration line {} has {} fields", n + 1, parts.len());
        let id = BoundId::from_name(parts[0]).with_context(|| format!("unknown bound id {:?}", parts[0]))?;
        out.push(CalibrationEntry { id, constant: parts[1].parse()?, grid_hash: parts[2].to_string() });
    }
    Ok(out)
}
