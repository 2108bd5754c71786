//! Per-run summary rows, CSV schema checks and the report table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a reported number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Computed in closed form from the potential's constants.
    Derived,
    /// Monte Carlo or transport estimate.
    Measured,
    /// Taken from the config.
    Configured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Pass,
    Fail,
    Inconclusive,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subcommand: String,
    pub quantity: String,
    pub value: String,
    pub provenance: Provenance,
    pub status: RowStatus,
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 5] = ["subcommand", "quantity", "value", "provenance", "status"];

/// First record of a CSV byte buffer.
pub fn csv_header(bytes: &[u8]) -> Result<Vec<String>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    match rd.records().next() {
        Some(rec) => Ok(rec?.iter().map(String::from).collect()),
        None => Ok(Vec::new()),
    }
}

/// Fail unless `actual` equals `expected` column for column.
pub fn check_header(name: &str, expected: &[String], actual: &[String]) -> Result<()> {
    if expected != actual {
        return Err(Error::Config(format!(
            "{name}: header mismatch, expected [{}] found [{}]",
            expected.join(","),
            actual.join(",")
        )));
    }
    Ok(())
}

/// Append rows to `summary.csv`, creating it with a header if absent and
/// refusing if the existing header differs.
pub fn append_summary(dir: &Path, rows: &[SummaryRow]) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    let expected: Vec<String> = SUMMARY_HEADER.iter().map(|s| s.to_string()).collect();
    let exists = path.exists();
    if exists {
        let bytes = std::fs::read(&path)?;
        check_header(SUMMARY_FILE, &expected, &csv_header(&bytes)?)?;
    }
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !exists {
        wr.write_record(SUMMARY_HEADER)?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join(SUMMARY_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = std::fs::read(&path)?;
    let expected: Vec<String> = SUMMARY_HEADER.iter().map(|s| s.to_string()).collect();
    check_header(SUMMARY_FILE, &expected, &csv_header(&bytes)?)?;
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for r in rd.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

fn status_str(s: RowStatus) -> &'static str {
    match s {
        RowStatus::Pass => "pass",
        RowStatus::Fail => "FAIL",
        RowStatus::Inconclusive => "INCONCLUSIVE",
        RowStatus::Info => "",
    }
}

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Derived => "derived",
        Provenance::Measured => "measured",
        Provenance::Configured => "configured",
    }
}

/// Render the summary table of an output directory.
pub fn emit_report(dir: &Path) -> Result<String> {
    let rows = read_summary(dir)?;
    if rows.is_empty() {
        return Ok(format!("no artifacts in {}\n", dir.display()));
    }
    let head = ["subcommand", "quantity", "value", "provenance", "status"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.subcommand.clone(),
                r.quantity.clone(),
                r.value.clone(),
                provenance_str(r.provenance).to_string(),
                status_str(r.status).to_string(),
            ]
        })
        .collect();
    let mut widths = head.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, c: &[&str]| {
        let parts: Vec<String> = c.iter().zip(widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &head);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for c in &cells {
        line(&mut out, &c.each_ref().map(String::as_str));
    }
    let n_incon = rows.iter().filter(|r| r.status == RowStatus::Inconclusive).count();
    let n_fail = rows.iter().filter(|r| r.status == RowStatus::Fail).count();
    let _ = writeln!(out, "\n{} rows, {n_fail} failed, {n_incon} inconclusive", rows.len());
    Ok(out)
}
