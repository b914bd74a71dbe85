//! Streaming reader for NVD JSON 1.1 per-year data feeds.
//!
//! The feed is a single large object whose `CVE_Items` array can hold
//! hundreds of thousands of entries. Items are deserialized one at a time
//! through a visitor, so peak memory stays bounded by a single item plus
//! buffering regardless of file size. Only the identity and problemtype
//! subtrees are materialized; everything else is skipped.

use std::cell::Cell;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::marker::PhantomData;
use std::path::Path;
use std::rc::Rc;

use flate2::read::GzDecoder;
use serde::de::{self, DeserializeSeed, IgnoredAny, MapAccess, SeqAccess, Visitor};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::cwe_model::{CveRecord, CweId};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Totals for one parsed feed; consistent with the records yielded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeedStats {
    pub feed_year: u16,
    pub records_parsed: u64,
    pub records_with_no_cwe: u64,
    /// Sum of |cwes| over all yielded records.
    pub assignments_extracted: u64,
    pub unrecognized_tokens: u64,
    pub bytes_consumed: u64,
}

/// A non-fatal problem found while parsing, e.g. a skipped item or an
/// unexpected problemtype shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub feed_year: u16,
    /// CVE id when known, otherwise the approximate byte offset.
    pub context: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WARN {} {} {}", self.feed_year, self.context, self.message)
    }
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("malformed feed at byte offset {offset}: {message}")]
    MalformedFeed { offset: u64, message: String },
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot determine feed year from {path}; pass an explicit year")]
    YearUndeterminable { path: String },
}

/// Fully collected result of [`parse_feed`].
#[derive(Clone, Debug)]
pub struct ParsedFeed {
    pub records: Vec<CveRecord>,
    pub stats: FeedStats,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses a feed, collecting every record in memory.
///
/// For large feeds prefer [`for_each_record`], which hands records to a
/// callback instead of materializing them all.
pub fn parse_feed<R: Read>(source: R, feed_year: u16) -> Result<ParsedFeed, FeedError> {
    let mut records = Vec::new();
    let (stats, diagnostics) = for_each_record(source, feed_year, |r| records.push(r))?;
    Ok(ParsedFeed {
        records,
        stats,
        diagnostics,
    })
}

/// Streams a feed, invoking `sink` once per `CVE_Items` element in file
/// order. At most one item is materialized at a time.
pub fn for_each_record<R, F>(
    source: R,
    feed_year: u16,
    sink: F,
) -> Result<(FeedStats, Vec<Diagnostic>), FeedError>
where
    R: Read,
    F: FnMut(CveRecord),
{
    let offset = Rc::new(Cell::new(0u64));
    let reader = CountingReader {
        inner: source,
        count: Rc::clone(&offset),
    };
    let mut state = ParseState {
        feed_year,
        stats: FeedStats {
            feed_year,
            ..FeedStats::default()
        },
        diagnostics: Vec::new(),
        sink,
        offset: Rc::clone(&offset),
    };
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(reader));
    let seed = FeedSeed { state: &mut state };
    if let Err(err) = seed.deserialize(&mut de).and_then(|()| de.end()) {
        return Err(FeedError::MalformedFeed {
            offset: offset.get(),
            message: err.to_string(),
        });
    }
    state.stats.bytes_consumed = offset.get();
    Ok((state.stats, state.diagnostics))
}

/// Opens a plain or gzip-compressed feed file (detected by magic bytes, not
/// extension) and parses it. The feed year comes from the
/// `nvdcve-1.1-<YYYY>.json[.gz]` filename pattern unless overridden.
pub fn parse_feed_file(
    path: impl AsRef<Path>,
    year_override: Option<u16>,
) -> Result<ParsedFeed, FeedError> {
    let mut records = Vec::new();
    let (stats, diagnostics) =
        for_each_record_in_file(path, year_override, |r| records.push(r))?;
    Ok(ParsedFeed {
        records,
        stats,
        diagnostics,
    })
}

/// Streaming variant of [`parse_feed_file`].
pub fn for_each_record_in_file<F>(
    path: impl AsRef<Path>,
    year_override: Option<u16>,
    sink: F,
) -> Result<(FeedStats, Vec<Diagnostic>), FeedError>
where
    F: FnMut(CveRecord),
{
    let path = path.as_ref();
    let year = match year_override.or_else(|| infer_feed_year(path)) {
        Some(y) => y,
        None => {
            return Err(FeedError::YearUndeterminable {
                path: path.display().to_string(),
            })
        }
    };
    let file = File::open(path).map_err(|source| FeedError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let head = reader.fill_buf().map_err(|source| FeedError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })?;
    if head.starts_with(&GZIP_MAGIC) {
        for_each_record(GzDecoder::new(reader), year, sink)
    } else {
        for_each_record(reader, year, sink)
    }
}

/// Extracts the year from a `nvdcve-1.1-<YYYY>.json[.gz]` filename.
pub fn infer_feed_year(path: &Path) -> Option<u16> {
    let name = path.file_name()?.to_str()?;
    let name = name.strip_suffix(".gz").unwrap_or(name);
    let digits = name.strip_prefix("nvdcve-1.1-")?.strip_suffix(".json")?;
    if digits.len() == 4 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

/// Walks a `problemtype` subtree and returns every description `value`
/// token in document order, classified. Structurally unexpected shapes
/// contribute nothing but are reported through `diag`.
pub fn extract_cwes(node: &Value, mut diag: impl FnMut(String)) -> Vec<CweId> {
    let mut out = Vec::new();
    let Some(obj) = node.as_object() else {
        diag(format!("problemtype is not an object: {node}"));
        return out;
    };
    let Some(data) = obj.get("problemtype_data") else {
        return out;
    };
    let Some(entries) = data.as_array() else {
        diag("problemtype_data is not an array".to_string());
        return out;
    };
    for entry in entries {
        let Some(entry) = entry.as_object() else {
            diag("problemtype_data entry is not an object".to_string());
            continue;
        };
        let Some(descs) = entry.get("description").and_then(Value::as_array) else {
            diag("problemtype_data entry has no description array".to_string());
            continue;
        };
        for desc in descs {
            // lang is deliberately ignored; dedup at record construction
            // handles repeated tokens across languages
            match desc.get("value").and_then(Value::as_str) {
                Some(token) => out.push(CweId::parse(token)),
                None => diag("description entry has no string value".to_string()),
            }
        }
    }
    out
}

struct CountingReader<R> {
    inner: R,
    count: Rc<Cell<u64>>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count.set(self.count.get() + n as u64);
        Ok(n)
    }
}

struct ParseState<F> {
    feed_year: u16,
    stats: FeedStats,
    diagnostics: Vec<Diagnostic>,
    sink: F,
    offset: Rc<Cell<u64>>,
}

impl<F: FnMut(CveRecord)> ParseState<F> {
    fn diag(&mut self, context: String, message: String) {
        self.diagnostics.push(Diagnostic {
            feed_year: self.feed_year,
            context,
            message,
        });
    }

    fn process(&mut self, item: RawItem) {
        let id = item
            .cve
            .as_ref()
            .and_then(|c| c.meta.as_ref())
            .and_then(|m| m.id.clone());
        let Some(cve_id) = id else {
            self.diag(
                self.offset.get().to_string(),
                "item skipped: missing CVE_data_meta.ID".to_string(),
            );
            return;
        };
        let mut structural = Vec::new();
        let tokens = match item.cve.as_ref().and_then(|c| c.problemtype.as_ref()) {
            Some(node) => extract_cwes(node, |m| structural.push(m)),
            None => Vec::new(),
        };
        for message in structural {
            self.diag(cve_id.clone(), message);
        }
        let record = CveRecord {
            cve_id,
            feed_year: self.feed_year,
            cwes: tokens.into_iter().collect(),
        };
        self.stats.records_parsed += 1;
        if record.cwes.is_empty() {
            self.stats.records_with_no_cwe += 1;
        }
        self.stats.assignments_extracted += record.cwes.len() as u64;
        self.stats.unrecognized_tokens += record
            .cwes
            .iter()
            .filter(|c| matches!(c, CweId::Unrecognized(_)))
            .count() as u64;
        (self.sink)(record);
    }
}

#[derive(Deserialize)]
struct RawItem {
    cve: Option<RawCve>,
}

#[derive(Deserialize)]
struct RawCve {
    #[serde(rename = "CVE_data_meta")]
    meta: Option<RawMeta>,
    problemtype: Option<Value>,
}

#[derive(Deserialize)]
struct RawMeta {
    #[serde(rename = "ID")]
    id: Option<String>,
}

struct FeedSeed<'a, F> {
    state: &'a mut ParseState<F>,
}

impl<'de, F: FnMut(CveRecord)> DeserializeSeed<'de> for FeedSeed<'_, F> {
    type Value = ();

    fn deserialize<D: de::Deserializer<'de>>(self, deserializer: D) -> Result<(), D::Error> {
        deserializer.deserialize_map(self)
    }
}

impl<'de, F: FnMut(CveRecord)> Visitor<'de> for FeedSeed<'_, F> {
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("an NVD 1.1 feed object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<(), A::Error> {
        let mut found_items = false;
        while let Some(key) = map.next_key::<String>()? {
            if key == "CVE_Items" {
                found_items = true;
                map.next_value_seed(ItemsSeed {
                    state: self.state,
                    _de: PhantomData,
                })?;
            } else {
                map.next_value::<IgnoredAny>()?;
            }
        }
        if !found_items {
            return Err(de::Error::custom("`CVE_Items` missing"));
        }
        Ok(())
    }
}

struct ItemsSeed<'a, 'de, F> {
    state: &'a mut ParseState<F>,
    _de: PhantomData<&'de ()>,
}

impl<'de, F: FnMut(CveRecord)> DeserializeSeed<'de> for ItemsSeed<'_, 'de, F> {
    type Value = ();

    fn deserialize<D: de::Deserializer<'de>>(self, deserializer: D) -> Result<(), D::Error> {
        deserializer.deserialize_seq(self)
    }
}

impl<'de, F: FnMut(CveRecord)> Visitor<'de> for ItemsSeed<'_, 'de, F> {
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("the `CVE_Items` array")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
        while let Some(item) = seq.next_element::<RawItem>()? {
            self.state.process(item);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn one_item_feed(problemtype: &str) -> String {
        format!(
            r#"{{"CVE_data_type":"CVE","CVE_Items":[{{"cve":{{"CVE_data_meta":{{"ID":"CVE-2019-0001"}},"problemtype":{problemtype}}}}}]}}"#
        )
    }

    #[test]
    fn single_item_single_cwe() {
        let feed = one_item_feed(
            r#"{"problemtype_data":[{"description":[{"lang":"en","value":"CWE-119"}]}]}"#,
        );
        let parsed = parse_feed(feed.as_bytes(), 2019).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(
            parsed.records[0].cwes.iter().collect::<Vec<_>>(),
            vec![&CweId::Weakness(119)]
        );
        assert_eq!(parsed.stats.assignments_extracted, 1);
        assert_eq!(parsed.stats.records_with_no_cwe, 0);
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn empty_items_array() {
        let parsed = parse_feed(r#"{"CVE_Items":[]}"#.as_bytes(), 2019).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.stats.records_parsed, 0);
        assert_eq!(parsed.stats.assignments_extracted, 0);
    }

    #[test]
    fn empty_description_counts_as_no_cwe() {
        let feed = one_item_feed(r#"{"problemtype_data":[{"description":[]}]}"#);
        let parsed = parse_feed(feed.as_bytes(), 2019).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert!(parsed.records[0].cwes.is_empty());
        assert_eq!(parsed.stats.records_with_no_cwe, 1);
    }

    #[test]
    fn missing_id_is_skipped_with_diagnostic() {
        let feed = r#"{"CVE_Items":[{"cve":{"problemtype":{}}},{"cve":{"CVE_data_meta":{"ID":"CVE-2019-0002"}}}]}"#;
        let parsed = parse_feed(feed.as_bytes(), 2019).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].cve_id, "CVE-2019-0002");
        assert_eq!(parsed.diagnostics.len(), 1);
        assert!(parsed.diagnostics[0].message.contains("skipped"));
        assert!(parsed.diagnostics[0].to_string().starts_with("WARN 2019 "));
    }

    #[test]
    fn missing_items_is_malformed() {
        let err = parse_feed(r#"{"CVE_data_type":"CVE"}"#.as_bytes(), 2019).unwrap_err();
        assert!(matches!(err, FeedError::MalformedFeed { .. }));
        assert!(err.to_string().contains("CVE_Items"));
    }

    #[test]
    fn items_not_an_array_is_malformed() {
        let err = parse_feed(r#"{"CVE_Items":{}}"#.as_bytes(), 2019).unwrap_err();
        assert!(matches!(err, FeedError::MalformedFeed { .. }));
    }

    #[test]
    fn truncated_document_is_malformed_with_offset() {
        let feed = one_item_feed(r#"{"problemtype_data":[]}"#);
        let cut = &feed[..feed.len() - 10];
        let err = parse_feed(cut.as_bytes(), 2019).unwrap_err();
        match err {
            FeedError::MalformedFeed { offset, .. } => assert!(offset > 0),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn extract_cwes_preserves_document_order() {
        let node: Value = serde_json::from_str(
            r#"{"problemtype_data":[{"description":[{"lang":"en","value":"CWE-79"},{"lang":"en","value":"CWE-89"}]}]}"#,
        )
        .unwrap();
        let cwes = extract_cwes(&node, |_| panic!("no diagnostics expected"));
        assert_eq!(cwes, vec![CweId::Weakness(79), CweId::Weakness(89)]);
    }

    #[test]
    fn extract_cwes_noinfo_marker() {
        let node: Value = serde_json::from_str(
            r#"{"problemtype_data":[{"description":[{"lang":"en","value":"NVD-CWE-noinfo"}]}]}"#,
        )
        .unwrap();
        assert_eq!(extract_cwes(&node, |_| {}), vec![CweId::NoInfo]);
    }

    #[test]
    fn extract_cwes_bad_shape_yields_empty_plus_diagnostic() {
        let node: Value = serde_json::from_str(r#"{"problemtype_data":"oops"}"#).unwrap();
        let mut diags = Vec::new();
        let cwes = extract_cwes(&node, |m| diags.push(m));
        assert!(cwes.is_empty());
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn idempotent_over_same_bytes() {
        let feed = one_item_feed(
            r#"{"problemtype_data":[{"description":[{"lang":"en","value":"CWE-20"}]}]}"#,
        );
        let a = parse_feed(feed.as_bytes(), 2019).unwrap();
        let b = parse_feed(feed.as_bytes(), 2019).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn gzip_transparency() {
        let feed = one_item_feed(
            r#"{"problemtype_data":[{"description":[{"lang":"en","value":"CWE-352"}]}]}"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("nvdcve-1.1-2019.json");
        std::fs::write(&plain, &feed).unwrap();
        let gz_path = dir.path().join("nvdcve-1.1-2019.json.gz");
        let mut enc = flate2::write::GzEncoder::new(
            File::create(&gz_path).unwrap(),
            flate2::Compression::default(),
        );
        enc.write_all(feed.as_bytes()).unwrap();
        enc.finish().unwrap();

        let a = parse_feed_file(&plain, None).unwrap();
        let b = parse_feed_file(&gz_path, None).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.stats.feed_year, 2019);
        assert_eq!(b.stats.feed_year, 2019);
    }

    #[test]
    fn year_inference() {
        assert_eq!(
            infer_feed_year(Path::new("/x/nvdcve-1.1-2019.json")),
            Some(2019)
        );
        assert_eq!(
            infer_feed_year(Path::new("nvdcve-1.1-2010.json.gz")),
            Some(2010)
        );
        assert_eq!(infer_feed_year(Path::new("mydata.json")), None);
        assert_eq!(infer_feed_year(Path::new("nvdcve-1.1-19.json")), None);
    }

    #[test]
    fn year_undeterminable_without_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mydata.json");
        std::fs::write(&path, r#"{"CVE_Items":[]}"#).unwrap();
        let err = parse_feed_file(&path, None).unwrap_err();
        assert!(matches!(err, FeedError::YearUndeterminable { .. }));
        assert_eq!(parse_feed_file(&path, Some(2015)).unwrap().stats.feed_year, 2015);
    }

    #[test]
    fn unreadable_file() {
        let err = parse_feed_file(Path::new("/nonexistent/nvdcve-1.1-2019.json"), None).unwrap_err();
        assert!(matches!(err, FeedError::FileUnreadable { .. }));
    }
}
