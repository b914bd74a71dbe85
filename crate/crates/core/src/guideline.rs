//! Guideline catalogs and the coverage / rank-1 analyses computed against an
//! observed count table. The built-in catalog is the OWASP Top 10 2017
//! category→CWE mapping.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregator::rank;
use crate::cwe_model::{
    CoverageReport, CweCountTable, CweId, GuidelineCatalog, GuidelineCategory,
};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog document is not parseable: {0}")]
    CatalogSyntax(String),
    #[error("invalid catalog: {0}")]
    CatalogInvalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComparisonError {
    #[error("count table has no weakness entries to rank")]
    EmptyTable,
    #[error("catalog has no categories")]
    EmptyCatalog,
}

/// The OWASP Top 10 2017 category→CWE mapping. Ten categories A1..A10;
/// A9 owns no CWE and is flagged accordingly.
pub fn builtin_owasp_2017() -> GuidelineCatalog {
    fn cat(id: &str, title: &str, cwes: &[u32]) -> GuidelineCategory {
        GuidelineCategory {
            id: id.to_string(),
            title: title.to_string(),
            cwes: cwes.iter().map(|n| CweId::Weakness(*n)).collect(),
            no_single_cwe: false,
        }
    }
    GuidelineCatalog {
        name: "OWASP Top 10 2017".to_string(),
        categories: vec![
            cat("A1", "Injection", &[77, 78, 88, 89, 90, 91, 564, 917, 943]),
            cat(
                "A2",
                "Broken Authentication",
                &[287, 256, 308, 384, 522, 523, 613, 620, 640],
            ),
            cat(
                "A3",
                "Sensitive Data Exposure",
                &[220, 295, 311, 312, 319, 320, 325, 326, 327, 328, 359],
            ),
            cat("A4", "XML External Entities", &[611, 776]),
            cat("A5", "Broken Access Control", &[22, 284, 285, 425, 639]),
            cat("A6", "Security Misconfiguration", &[16, 209, 548]),
            cat("A7", "Cross Site Scripting", &[79]),
            cat("A8", "Insecure Deserialization", &[502]),
            GuidelineCategory {
                id: "A9".to_string(),
                title: "Using Components with known vulnerabilities".to_string(),
                cwes: Default::default(),
                no_single_cwe: true,
            },
            cat("A10", "Insufficient Logging and Monitoring", &[223, 778]),
        ],
    }
}

/// Catalog file format: a single JSON document with `name` and
/// `categories[]` of `{id, title, cwes: ["CWE-N", ...], no_single_cwe?}`.
#[derive(Serialize, Deserialize)]
struct CatalogDoc {
    name: String,
    categories: Vec<CategoryDoc>,
}

#[derive(Serialize, Deserialize)]
struct CategoryDoc {
    id: String,
    title: String,
    #[serde(default)]
    cwes: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    no_single_cwe: bool,
}

/// A validated catalog plus any non-fatal findings (CWEs shared between
/// categories).
#[derive(Debug, Clone)]
pub struct LoadedCatalog {
    pub catalog: GuidelineCatalog,
    pub warnings: Vec<String>,
}

/// Parses and validates a catalog document.
pub fn load_catalog(source: impl Read) -> Result<LoadedCatalog, CatalogError> {
    let doc: CatalogDoc =
        serde_json::from_reader(source).map_err(|e| CatalogError::CatalogSyntax(e.to_string()))?;
    let mut categories = Vec::with_capacity(doc.categories.len());
    let mut seen_ids = BTreeMap::new();
    for cat in doc.categories {
        if seen_ids.insert(cat.id.clone(), ()).is_some() {
            return Err(CatalogError::CatalogInvalid(format!(
                "duplicate category id {}",
                cat.id
            )));
        }
        let mut cwes = std::collections::BTreeSet::new();
        for token in &cat.cwes {
            match CweId::parse(token) {
                CweId::Weakness(n) => {
                    cwes.insert(CweId::Weakness(n));
                }
                _ => {
                    return Err(CatalogError::CatalogInvalid(format!(
                        "category {}: {token:?} is not a CWE token",
                        cat.id
                    )))
                }
            }
        }
        categories.push(GuidelineCategory {
            id: cat.id,
            title: cat.title,
            cwes,
            no_single_cwe: cat.no_single_cwe,
        });
    }
    let catalog = GuidelineCatalog {
        name: doc.name,
        categories,
    };
    let warnings = catalog
        .duplicate_cwes()
        .into_iter()
        .map(|c| format!("{c} appears in more than one category"))
        .collect();
    Ok(LoadedCatalog { catalog, warnings })
}

/// Serializes a catalog in the file format accepted by [`load_catalog`].
pub fn save_catalog(catalog: &GuidelineCatalog) -> String {
    let doc = CatalogDoc {
        name: catalog.name.clone(),
        categories: catalog
            .categories
            .iter()
            .map(|c| CategoryDoc {
                id: c.id.clone(),
                title: c.title.clone(),
                cwes: c.cwes.iter().map(|w| w.raw()).collect(),
                no_single_cwe: c.no_single_cwe,
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("catalog serializes");
    out.push('\n');
    out
}

/// Partitions a table's assignments against a catalog: covered (the CWE is
/// in some category), uncovered (a weakness outside the catalog), or special
/// (NoInfo/Other/Unrecognized).
pub fn coverage(table: &CweCountTable, catalog: &GuidelineCatalog) -> CoverageReport {
    let guideline_cwes = catalog.all_cwes();
    let mut covered = 0u64;
    let mut uncovered = 0u64;
    let mut special = 0u64;
    let mut per_cwe_covered = BTreeMap::new();
    for (cwe, count) in &table.counts {
        if cwe.is_special() {
            special += count;
        } else if guideline_cwes.contains(cwe) {
            covered += count;
            per_cwe_covered.insert(cwe.clone(), *count);
        } else {
            uncovered += count;
        }
    }
    let per_category = catalog
        .categories
        .iter()
        .map(|cat| {
            let n = cat.cwes.iter().map(|c| table.count(c)).sum();
            (cat.id.clone(), n)
        })
        .collect();
    let observed_denominator = covered + uncovered;
    CoverageReport {
        covered_assignments: covered,
        uncovered_assignments: uncovered,
        special_assignments: special,
        per_category,
        guideline_cwes_absent_from_data: guideline_cwes
            .into_iter()
            .filter(|c| table.count(c) == 0)
            .collect(),
        per_cwe_covered,
        coverage_fraction: if observed_denominator > 0 {
            covered as f64 / observed_denominator as f64
        } else {
            0.0
        },
        coverage_fraction_of_total: if table.total_assignments > 0 {
            covered as f64 / table.total_assignments as f64
        } else {
            0.0
        },
    }
}

/// Rank-1 agreement between the observed data and a guideline: does the
/// table's most frequent weakness belong to the catalog's first category?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1Comparison {
    pub table_rank1: CweId,
    pub table_rank1_count: u64,
    pub catalog_first_category: String,
    pub catalog_first_set: std::collections::BTreeSet<CweId>,
    pub agrees: bool,
}

pub fn compare_rank1(
    table: &CweCountTable,
    catalog: &GuidelineCatalog,
) -> Result<Rank1Comparison, ComparisonError> {
    let first = catalog.categories.first().ok_or(ComparisonError::EmptyCatalog)?;
    let top = rank(table, 1, false);
    let top = top.first().ok_or(ComparisonError::EmptyTable)?;
    Ok(Rank1Comparison {
        agrees: first.cwes.contains(&top.cwe),
        table_rank1: top.cwe.clone(),
        table_rank1_count: top.count,
        catalog_first_category: first.id.clone(),
        catalog_first_set: first.cwes.clone(),
    })
}
