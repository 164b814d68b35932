//! Sweep result tables and their serialized forms.
//!
//! A sweep produces one row per grid point. The same table round-trips
//! through JSON and RFC 4180 CSV without loss: floats are written in the
//! shortest form that parses back to the identical bits, so downstream
//! tooling can treat either file as the source of truth.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One grid point of a sweep, flattened for tabular output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub strategy: String,
    pub prune_method: String,
    pub fraction: f64,
    pub t1: usize,
    pub t2: usize,
    pub threshold_n: usize,
    pub seed: u64,
    /// Test loss of the dense base model.
    pub loss_dense: f64,
    /// Test loss right after the structural stages, before retraining.
    pub loss_pruned: f64,
    /// Test loss after retraining.
    pub loss_final: f64,
    pub zero_tiles: usize,
    pub total_tiles: usize,
    pub zero_tile_fraction: f64,
    pub add: u64,
    pub mul: u64,
    pub rot: u64,
    pub relin: u64,
    pub memory_bytes: u64,
    pub latency_proxy: f64,
    /// Marks the grid point the objective selected.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

pub fn emit_json(table: &SweepTable) -> Result<String> {
    Ok(serde_json::to_string_pretty(table)?)
}

pub fn parse_json(text: &str) -> Result<SweepTable> {
    Ok(serde_json::from_str(text)?)
}

pub fn emit_csv(table: &SweepTable) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &table.rows {
        writer.serialize(row).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<SweepTable> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| {
            Error::Format { offset: 0, message: format!("bad sweep CSV row: {e}") }
        })?);
    }
    Ok(SweepTable { rows })
}
