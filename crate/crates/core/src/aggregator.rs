//! Turns record streams into count tables, merges tables across years, and
//! produces ranked top-N lists.

use thiserror::Error;

use crate::cwe_model::{CveRecord, CweCountTable, CweId, RankedEntry};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("record {cve_id} carries feed year {record_year}, expected {expected_year}")]
    YearMismatch {
        cve_id: String,
        record_year: u16,
        expected_year: u16,
    },
}

/// Counts CWE assignments for one year of records.
///
/// Each (CVE, CWE) pair counts once; dedup already happened at record
/// construction.
pub fn aggregate<'a, I>(records: I, year: u16) -> Result<CweCountTable, AggregateError>
where
    I: IntoIterator<Item = &'a CveRecord>,
{
    let mut table = CweCountTable::empty(year);
    for record in records {
        if record.feed_year != year {
            return Err(AggregateError::YearMismatch {
                cve_id: record.cve_id.clone(),
                record_year: record.feed_year,
                expected_year: year,
            });
        }
        add_record(&mut table, record);
    }
    Ok(table)
}

/// Incremental form of [`aggregate`] for streaming callers; the caller is
/// responsible for year consistency.
pub fn add_record(table: &mut CweCountTable, record: &CveRecord) {
    table.total_records += 1;
    for cwe in &record.cwes {
        *table.counts.entry(cwe.clone()).or_insert(0) += 1;
        table.total_assignments += 1;
    }
}

/// Pointwise sum of two tables; year ranges union as a min/max envelope.
/// Commutative and associative, with the empty table as identity.
pub fn merge(a: &CweCountTable, b: &CweCountTable) -> CweCountTable {
    // an empty table's own year range is a placeholder, not data
    let year_range = if a.total_records == 0 && a.counts.is_empty() {
        b.year_range
    } else if b.total_records == 0 && b.counts.is_empty() {
        a.year_range
    } else {
        (
            a.year_range.0.min(b.year_range.0),
            a.year_range.1.max(b.year_range.1),
        )
    };
    let mut counts = a.counts.clone();
    for (cwe, n) in &b.counts {
        *counts.entry(cwe.clone()).or_insert(0) += n;
    }
    CweCountTable {
        year_range,
        counts,
        total_assignments: a.total_assignments + b.total_assignments,
        total_records: a.total_records + b.total_records,
    }
}

/// The `n` highest-count entries, ordered by count descending with ties by
/// ascending CWE number. Special markers and unrecognized tokens are
/// excluded unless `include_special`, in which case they sort after all
/// weaknesses at equal count.
pub fn rank(table: &CweCountTable, n: usize, include_special: bool) -> Vec<RankedEntry> {
    let mut entries: Vec<(&CweId, u64)> = table
        .counts
        .iter()
        .filter(|(cwe, count)| **count > 0 && (include_special || cwe.is_weakness()))
        .map(|(cwe, count)| (cwe, *count))
        .collect();
    entries.sort_by(|(ca, na), (cb, nb)| nb.cmp(na).then_with(|| ca.cmp(cb)));
    entries
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (cwe, count))| RankedEntry {
            rank: i + 1,
            cwe: cwe.clone(),
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cwe_model::CveRecord;

    fn rec(id: &str, year: u16, cwes: &[&str]) -> CveRecord {
        CveRecord::from_tokens(id, year, cwes.iter().copied())
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let table = aggregate([], 2019).unwrap();
        assert!(table.counts.is_empty());
        assert_eq!(table.total_assignments, 0);
        assert_eq!(table.total_records, 0);
        assert_eq!(table.year_range, (2019, 2019));
    }

    #[test]
    fn counts_per_record_pair() {
        let records = vec![
            rec("CVE-2019-0001", 2019, &["CWE-119"]),
            rec("CVE-2019-0002", 2019, &["CWE-119", "CWE-79"]),
            rec("CVE-2019-0003", 2019, &["CWE-79"]),
        ];
        let table = aggregate(&records, 2019).unwrap();
        assert_eq!(table.count(&CweId::Weakness(119)), 2);
        assert_eq!(table.count(&CweId::Weakness(79)), 2);
        assert_eq!(table.total_assignments, 4);
        assert_eq!(table.total_records, 3);
    }

    #[test]
    fn year_mismatch_is_an_error() {
        let records = vec![rec("CVE-2018-0001", 2018, &["CWE-20"])];
        let err = aggregate(&records, 2019).unwrap_err();
        assert_eq!(
            err,
            AggregateError::YearMismatch {
                cve_id: "CVE-2018-0001".into(),
                record_year: 2018,
                expected_year: 2019,
            }
        );
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let records = vec![rec("CVE-2019-0001", 2019, &["CWE-89"])];
        let table = aggregate(&records, 2019).unwrap();
        assert_eq!(merge(&table, &CweCountTable::empty(2010)), table);
        assert_eq!(merge(&CweCountTable::empty(2010), &table), table);
    }

    #[test]
    fn merge_splits_equal_whole() {
        let records = vec![
            rec("CVE-2019-0001", 2019, &["CWE-119"]),
            rec("CVE-2019-0002", 2019, &["CWE-119", "CWE-79"]),
            rec("CVE-2019-0003", 2019, &["CWE-79"]),
        ];
        let whole = aggregate(&records, 2019).unwrap();
        let a = aggregate(&records[..2], 2019).unwrap();
        let b = aggregate(&records[2..], 2019).unwrap();
        assert_eq!(merge(&a, &b), whole);
    }

    #[test]
    fn merge_envelopes_year_ranges() {
        let a = aggregate(&[rec("CVE-2010-1", 2010, &["CWE-20"])], 2010).unwrap();
        let b = aggregate(&[rec("CVE-2019-1", 2019, &["CWE-20"])], 2019).unwrap();
        assert_eq!(merge(&a, &b).year_range, (2010, 2019));
    }

    #[test]
    fn rank_orders_by_count_then_number() {
        let records = vec![
            rec("a", 2019, &["CWE-5"]),
            rec("b", 2019, &["CWE-5"]),
            rec("c", 2019, &["CWE-5"]),
            rec("d", 2019, &["CWE-2"]),
            rec("e", 2019, &["CWE-2"]),
            rec("f", 2019, &["CWE-2"]),
        ];
        let table = aggregate(&records, 2019).unwrap();
        let ranked = rank(&table, 10, false);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].cwe, CweId::Weakness(2));
        assert_eq!(ranked[0].rank, 1);
        assert_eq!(ranked[1].cwe, CweId::Weakness(5));
        assert_eq!(ranked[1].rank, 2);
    }

    #[test]
    fn rank_excludes_specials_by_default() {
        let records = vec![
            rec("a", 2019, &["NVD-CWE-noinfo"]),
            rec("b", 2019, &["NVD-CWE-noinfo"]),
            rec("c", 2019, &["CWE-79"]),
        ];
        let table = aggregate(&records, 2019).unwrap();
        let ranked = rank(&table, 10, false);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].cwe, CweId::Weakness(79));

        let with_special = rank(&table, 10, true);
        assert_eq!(with_special.len(), 2);
        assert_eq!(with_special[0].cwe, CweId::NoInfo);
        // equal count: weakness sorts before the marker
        let records = vec![
            rec("a", 2019, &["NVD-CWE-noinfo", "CWE-79"]),
        ];
        let table = aggregate(&records, 2019).unwrap();
        let tied = rank(&table, 10, true);
        assert_eq!(tied[0].cwe, CweId::Weakness(79));
        assert_eq!(tied[1].cwe, CweId::NoInfo);
    }

    #[test]
    fn rank_of_empty_table_is_empty() {
        assert!(rank(&CweCountTable::empty(2019), 10, false).is_empty());
    }

    #[test]
    fn rank_truncates_to_n() {
        let records = vec![
            rec("a", 2019, &["CWE-1", "CWE-2", "CWE-3", "CWE-4"]),
        ];
        let table = aggregate(&records, 2019).unwrap();
        assert_eq!(rank(&table, 2, false).len(), 2);
    }
}
