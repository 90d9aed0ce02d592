//! CSV output for campaigns.
//!
//! Per-trial files have the header
//! `trial,n,sigma_deg,alpha,algorithm,err,inlier_count,ml_cost,failed`.
//! Metric files have one row per `(n, sigma, alpha)` cell.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::campaign::{CellMetrics, TrialRecord};
use crate::error::Result;

pub const TRIAL_HEADER: &str = "trial,n,sigma_deg,alpha,algorithm,err,inlier_count,ml_cost,failed";

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_records<W: Write>(writer: W, records: &[TrialRecord]) -> Result<()> {
    write_rows(writer, records)
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TrialRecord>> {
    read_rows(reader)
}

pub fn write_metrics<W: Write>(writer: W, cells: &[CellMetrics]) -> Result<()> {
    write_rows(writer, cells)
}

pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<CellMetrics>> {
    read_rows(reader)
}
