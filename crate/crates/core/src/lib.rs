//! Ingests NVD per-year JSON 1.1 data feeds, counts CVE→CWE weakness
//! assignments, ranks the most frequent weaknesses, and measures how well a
//! guideline catalog (built-in: the OWASP Top 10 2017 CWE mapping) covers
//! the observed population.

pub mod aggregator;
pub mod cli;
pub mod cwe_model;
pub mod feed_parser;
pub mod fetcher;
pub mod guideline;
pub mod report;

pub use cwe_model::{
    CoverageReport, CveRecord, CweCountTable, CweId, GuidelineCatalog, GuidelineCategory,
    RankedEntry,
};
