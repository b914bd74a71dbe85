//! Shared domain types: weakness identifiers, per-CVE records, count tables,
//! guideline catalogs, and the reports computed from them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A classified NVD problemtype token.
///
/// `Weakness` holds a real CWE number; `NoInfo` / `Other` are NVD's special
/// markers for absent or uncategorized weakness data; anything else is kept
/// verbatim as `Unrecognized`. Serializes as the raw token string.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CweId {
    Weakness(u32),
    NoInfo,
    Other,
    Unrecognized(String),
}

impl CweId {
    /// Classifies a raw problemtype token. Total: never fails.
    ///
    /// `CWE-<digits>` with no leading zeros and a positive number is a
    /// `Weakness`; the two NVD markers match exactly; everything else
    /// (including whitespace or leading-zero variants) is `Unrecognized`.
    pub fn parse(token: &str) -> CweId {
        if let Some(digits) = token.strip_prefix("CWE-") {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(n) = digits.parse::<u32>() {
                    // reject leading zeros: re-rendering must reproduce the token
                    if n > 0 && n.to_string() == digits {
                        return CweId::Weakness(n);
                    }
                }
            }
        }
        match token {
            "NVD-CWE-noinfo" => CweId::NoInfo,
            "NVD-CWE-Other" => CweId::Other,
            _ => CweId::Unrecognized(token.to_string()),
        }
    }

    /// The original token text. For `Weakness` this re-renders `CWE-<n>`,
    /// which by construction equals the parsed token.
    pub fn raw(&self) -> String {
        match self {
            CweId::Weakness(n) => format!("CWE-{n}"),
            CweId::NoInfo => "NVD-CWE-noinfo".to_string(),
            CweId::Other => "NVD-CWE-Other".to_string(),
            CweId::Unrecognized(raw) => raw.clone(),
        }
    }

    pub fn number(&self) -> Option<u32> {
        match self {
            CweId::Weakness(n) => Some(*n),
            _ => None,
        }
    }

    pub fn is_weakness(&self) -> bool {
        matches!(self, CweId::Weakness(_))
    }

    /// NoInfo, Other, or Unrecognized.
    pub fn is_special(&self) -> bool {
        !self.is_weakness()
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CweId::Weakness(n) => write!(f, "CWE-{n}"),
            CweId::NoInfo => f.write_str("NVD-CWE-noinfo"),
            CweId::Other => f.write_str("NVD-CWE-Other"),
            CweId::Unrecognized(raw) => f.write_str(raw),
        }
    }
}

/// Weakness ids order by number ascending; special markers sort after all
/// weaknesses, alphabetically by raw token. This is the tie-break order used
/// everywhere counts are equal.
impl Ord for CweId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (CweId::Weakness(a), CweId::Weakness(b)) => a.cmp(b),
            (CweId::Weakness(_), _) => Ordering::Less,
            (_, CweId::Weakness(_)) => Ordering::Greater,
            (a, b) => a.raw().cmp(&b.raw()),
        }
    }
}

impl PartialOrd for CweId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for CweId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Ok(CweId::parse(&raw))
    }
}

/// One vulnerability entry: identity, source feed year, and its deduplicated
/// weakness assignments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CveRecord {
    pub cve_id: String,
    /// Year of the feed file the record came from, not parsed from the CVE id.
    pub feed_year: u16,
    pub cwes: BTreeSet<CweId>,
}

impl CveRecord {
    /// Builds a record from raw tokens, classifying and deduplicating them.
    pub fn from_tokens<I, S>(cve_id: impl Into<String>, feed_year: u16, tokens: I) -> CveRecord
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        CveRecord {
            cve_id: cve_id.into(),
            feed_year,
            cwes: tokens
                .into_iter()
                .map(|t| CweId::parse(t.as_ref()))
                .collect(),
        }
    }
}

/// Frequency table of CWE assignments over an inclusive year range.
///
/// Immutable value type; build one with [`crate::aggregator::aggregate`] and
/// combine with [`crate::aggregator::merge`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweCountTable {
    /// Inclusive (min_year, max_year) envelope of contributing feeds.
    pub year_range: (u16, u16),
    pub counts: BTreeMap<CweId, u64>,
    pub total_assignments: u64,
    pub total_records: u64,
}

impl CweCountTable {
    pub fn empty(year: u16) -> CweCountTable {
        CweCountTable {
            year_range: (year, year),
            counts: BTreeMap::new(),
            total_assignments: 0,
            total_records: 0,
        }
    }

    pub fn count(&self, id: &CweId) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }
}

/// One category of a guideline catalog: an id like `A1`, a human title, and
/// the set of CWEs the guideline maps onto it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineCategory {
    pub id: String,
    pub title: String,
    pub cwes: BTreeSet<CweId>,
    /// Set when the guideline itself states no single CWE represents the
    /// category (OWASP Cat A9).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_single_cwe: bool,
}

/// A named, ordered list of categories. Order is significant: the first
/// category is the guideline's rank 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineCatalog {
    pub name: String,
    pub categories: Vec<GuidelineCategory>,
}

impl GuidelineCatalog {
    /// Union of every category's CWE set.
    pub fn all_cwes(&self) -> BTreeSet<CweId> {
        self.categories
            .iter()
            .flat_map(|c| c.cwes.iter().cloned())
            .collect()
    }

    /// CWEs that appear in more than one category.
    pub fn duplicate_cwes(&self) -> Vec<CweId> {
        let mut seen: BTreeMap<&CweId, u32> = BTreeMap::new();
        for cat in &self.categories {
            for cwe in &cat.cwes {
                *seen.entry(cwe).or_insert(0) += 1;
            }
        }
        seen.into_iter()
            .filter(|(_, n)| *n > 1)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

/// How a count table's assignments partition against a guideline catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered_assignments: u64,
    pub uncovered_assignments: u64,
    /// NoInfo / Other / Unrecognized assignments.
    pub special_assignments: u64,
    pub per_category: BTreeMap<String, u64>,
    pub per_cwe_covered: BTreeMap<CweId, u64>,
    /// covered / (covered + uncovered); 0 when that denominator is 0.
    pub coverage_fraction: f64,
    /// covered / total assignments including specials; 0 when the table is empty.
    pub coverage_fraction_of_total: f64,
    pub guideline_cwes_absent_from_data: BTreeSet<CweId>,
}

/// One row of a ranked top-N list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntry {
    /// 1-based.
    pub rank: usize,
    pub cwe: CweId,
    pub count: u64,
}
