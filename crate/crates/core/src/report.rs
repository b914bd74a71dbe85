//! Serialization of tables, rankings, and coverage reports to CSV and JSON.
//!
//! All outputs are deterministic: byte-identical for identical inputs, with
//! the run manifest's timestamp as the single exception. CSV is UTF-8, LF
//! line endings, no BOM, no quoting.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cwe_model::{CoverageReport, CweCountTable, CweId, RankedEntry};
use crate::fetcher::FeedDescriptor;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed writing report: {0}")]
    SinkFailure(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChartFormat {
    Csv,
    Structured,
}

/// Rows ordered by count descending, then by id (weakness numbers
/// ascending, special markers after them alphabetically by raw token).
fn ordered_rows(counts: &BTreeMap<CweId, u64>) -> Vec<(&CweId, u64)> {
    let mut rows: Vec<(&CweId, u64)> = counts.iter().map(|(c, n)| (c, *n)).collect();
    rows.sort_by(|(ca, na), (cb, nb)| nb.cmp(na).then_with(|| ca.cmp(cb)));
    rows
}

/// Unrecognized tokens may contain characters the CSV dialect forbids;
/// percent-encode those so no field ever needs quoting.
fn csv_safe(label: &str) -> String {
    if !label.contains(['%', ',', '"', '\n', '\r']) {
        return label.to_string();
    }
    let mut out = String::with_capacity(label.len());
    for ch in label.chars() {
        match ch {
            '%' => out.push_str("%25"),
            ',' => out.push_str("%2C"),
            '"' => out.push_str("%22"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            other => out.push(other),
        }
    }
    out
}

/// Writes `cwe,count` rows for every key in the table.
pub fn emit_counts_csv(table: &CweCountTable, mut sink: impl Write) -> Result<(), ReportError> {
    writeln!(sink, "cwe,count")?;
    for (cwe, count) in ordered_rows(&table.counts) {
        writeln!(sink, "{},{count}", csv_safe(&cwe.raw()))?;
    }
    Ok(())
}

/// Per-year matrix variant: `cwe,<year>...,total`, one column per table.
/// Rows ordered by total descending, then id.
pub fn emit_counts_by_year_csv(
    tables: &[CweCountTable],
    mut sink: impl Write,
) -> Result<(), ReportError> {
    write!(sink, "cwe")?;
    for table in tables {
        write!(sink, ",{}", table.year_range.0)?;
    }
    writeln!(sink, ",total")?;

    let mut totals: BTreeMap<CweId, u64> = BTreeMap::new();
    for table in tables {
        for (cwe, n) in &table.counts {
            *totals.entry(cwe.clone()).or_insert(0) += n;
        }
    }
    for (cwe, total) in ordered_rows(&totals) {
        write!(sink, "{}", csv_safe(&cwe.raw()))?;
        for table in tables {
            write!(sink, ",{}", table.count(cwe))?;
        }
        writeln!(sink, ",{total}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    label: &'a str,
    count: u64,
}

/// Bar-chart series for a ranking: one `(label,count)` row per entry.
pub fn emit_rank_chart(
    ranked: &[RankedEntry],
    mut sink: impl Write,
    format: ChartFormat,
) -> Result<(), ReportError> {
    match format {
        ChartFormat::Csv => {
            writeln!(sink, "label,count")?;
            for entry in ranked {
                writeln!(sink, "{},{}", csv_safe(&entry.cwe.raw()), entry.count)?;
            }
        }
        ChartFormat::Structured => {
            let labels: Vec<String> = ranked.iter().map(|e| e.cwe.raw()).collect();
            let series: Vec<SeriesRow> = labels
                .iter()
                .zip(ranked)
                .map(|(label, e)| SeriesRow {
                    label,
                    count: e.count,
                })
                .collect();
            serde_json::to_writer_pretty(&mut sink, &serde_json::json!({ "series": series }))
                .map_err(std::io::Error::other)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}

/// Chart data for a coverage report: the covered/uncovered/special summary
/// triple followed by the per-covered-CWE series.
pub fn emit_coverage_chart(
    report: &CoverageReport,
    mut sink: impl Write,
    format: ChartFormat,
) -> Result<(), ReportError> {
    let series = ordered_rows(&report.per_cwe_covered);
    match format {
        ChartFormat::Csv => {
            writeln!(sink, "label,count")?;
            writeln!(sink, "covered,{}", report.covered_assignments)?;
            writeln!(sink, "uncovered,{}", report.uncovered_assignments)?;
            writeln!(sink, "special,{}", report.special_assignments)?;
            for (cwe, count) in series {
                writeln!(sink, "{},{count}", csv_safe(&cwe.raw()))?;
            }
        }
        ChartFormat::Structured => {
            let labels: Vec<String> = series.iter().map(|(c, _)| c.raw()).collect();
            let rows: Vec<SeriesRow> = labels
                .iter()
                .zip(&series)
                .map(|(label, (_, count))| SeriesRow {
                    label,
                    count: *count,
                })
                .collect();
            let doc = serde_json::json!({
                "summary": {
                    "covered": report.covered_assignments,
                    "uncovered": report.uncovered_assignments,
                    "special": report.special_assignments,
                },
                "series": rows,
            });
            serde_json::to_writer_pretty(&mut sink, &doc).map_err(std::io::Error::other)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}

/// Everything needed to trace a report back to its inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// The one nondeterministic field in any output.
    pub generated_at_unix: Option<u64>,
    pub catalog: Option<String>,
    pub feeds: Vec<ManifestFeed>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFeed {
    pub year: u16,
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<u64>,
}

impl From<&FeedDescriptor> for ManifestFeed {
    fn from(d: &FeedDescriptor) -> ManifestFeed {
        ManifestFeed {
            year: d.year,
            path: d.cache_path.display().to_string(),
            url: if d.url.is_empty() {
                None
            } else {
                Some(d.url.clone())
            },
            sha256: d.sha256.clone(),
            size: d.size,
        }
    }
}

impl RunManifest {
    pub fn new(feeds: Vec<ManifestFeed>, catalog: Option<String>) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .ok()
                .map(|d| d.as_secs()),
            catalog,
            feeds,
        }
    }
}

pub fn emit_run_manifest(manifest: &RunManifest, mut sink: impl Write) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut sink, manifest).map_err(std::io::Error::other)?;
    writeln!(sink)?;
    Ok(())
}
