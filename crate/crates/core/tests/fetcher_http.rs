//! Fetcher behavior against a local mock HTTP server: downloads, digest
//! verification, cache reuse, and batch fault handling.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use flate2::write::GzEncoder;
use flate2::Compression;
use sha2::{Digest, Sha256};

use cwe_analyzer::fetcher::{fetch_feed, fetch_range, FetchConfig, FetchError};

fn gzip(content: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(content).unwrap();
    enc.finish().unwrap()
}

fn sha256_hex(content: &[u8]) -> String {
    hex::encode(Sha256::digest(content))
}

/// Responses keyed by request path; anything else gets a 404. Returns the
/// base URL and a counter of archive requests served.
fn mock_server(routes: HashMap<String, (u16, Vec<u8>)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_inner = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut buf = [0u8; 4096];
            let n = stream.read(&mut buf).unwrap_or(0);
            let request = String::from_utf8_lossy(&buf[..n]).into_owned();
            let path = request
                .split_whitespace()
                .nth(1)
                .unwrap_or("/")
                .to_string();
            if path.ends_with(".json.gz") {
                hits_inner.fetch_add(1, Ordering::SeqCst);
            }
            let (status, body) = routes
                .get(&path)
                .cloned()
                .unwrap_or((404, b"not found".to_vec()));
            let reason = match status {
                200 => "OK",
                404 => "Not Found",
                500 => "Internal Server Error",
                _ => "Status",
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            let _ = stream.write_all(&body);
        }
    });
    (format!("http://{addr}"), hits)
}

fn feed_routes(years: &[u16]) -> HashMap<String, (u16, Vec<u8>)> {
    let mut routes = HashMap::new();
    for &year in years {
        let content = format!(r#"{{"CVE_data_type":"CVE","CVE_Items":[],"year":{year}}}"#);
        routes.insert(
            format!("/nvdcve-1.1-{year}.json.gz"),
            (200, gzip(content.as_bytes())),
        );
        routes.insert(
            format!("/nvdcve-1.1-{year}.meta"),
            (
                200,
                format!("size:{}\r\nsha256:{}\r\n", content.len(), sha256_hex(content.as_bytes()))
                    .into_bytes(),
            ),
        );
    }
    routes
}

#[test]
fn download_records_verified_digest() {
    let (base_url, _) = mock_server(feed_routes(&[2019]));
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());

    let d = fetch_feed(2019, &config, |m| panic!("unexpected warning: {m}")).unwrap();
    assert!(!d.from_cache);
    assert!(d.cache_path.is_file());
    let content = r#"{"CVE_data_type":"CVE","CVE_Items":[],"year":2019}"#;
    assert_eq!(d.sha256.as_deref(), Some(sha256_hex(content.as_bytes()).as_str()));
    assert!(d.fetched_at_unix.is_some());
    // re-hash the cached archive to confirm the digest invariant holds
    let rehashed = cwe_analyzer::fetcher::decompressed_sha256(&d.cache_path).unwrap();
    assert_eq!(Some(rehashed), d.sha256);
    // the meta companion is cached next to the archive
    assert!(dir.path().join("nvdcve-1.1-2019.meta").is_file());
}

#[test]
fn second_fetch_hits_the_cache() {
    let (base_url, hits) = mock_server(feed_routes(&[2019]));
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());

    let first = fetch_feed(2019, &config, |_| {}).unwrap();
    let second = fetch_feed(2019, &config, |_| {}).unwrap();
    assert!(!first.from_cache);
    assert!(second.from_cache);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert_eq!(first.sha256, second.sha256);

    let forced = fetch_feed(2019, &FetchConfig { force: true, ..config }, |_| {}).unwrap();
    assert!(!forced.from_cache);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn missing_archive_is_http_failure_404() {
    let (base_url, _) = mock_server(HashMap::new());
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    match fetch_feed(2019, &config, |_| {}) {
        Err(FetchError::HttpFailure { status: 404, .. }) => {}
        other => panic!("expected 404, got {other:?}"),
    }
}

#[test]
fn corrupted_meta_digest_is_fatal() {
    let mut routes = feed_routes(&[2019]);
    routes.insert(
        "/nvdcve-1.1-2019.meta".to_string(),
        (200, b"sha256:deadbeef\r\n".to_vec()),
    );
    let (base_url, _) = mock_server(routes);
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    match fetch_feed(2019, &config, |_| {}) {
        Err(FetchError::DigestMismatch { expected, .. }) => assert_eq!(expected, "deadbeef"),
        other => panic!("expected digest mismatch, got {other:?}"),
    }
    // nothing left behind in the cache
    assert!(!dir.path().join("nvdcve-1.1-2019.json.gz").exists());
}

#[test]
fn absent_meta_is_a_warning_not_an_error() {
    let mut routes = feed_routes(&[2019]);
    routes.remove("/nvdcve-1.1-2019.meta");
    let (base_url, _) = mock_server(routes);
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    let mut warnings = Vec::new();
    let d = fetch_feed(2019, &config, |m| warnings.push(m)).unwrap();
    assert!(d.sha256.is_some());
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("meta"));
}

#[test]
fn fetch_range_gets_all_ten_years() {
    let years: Vec<u16> = (2010..=2019).collect();
    let (base_url, _) = mock_server(feed_routes(&years));
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    let descriptors = fetch_range(2010..=2019, &config, |_| {}).unwrap();
    assert_eq!(descriptors.len(), 10);
    assert_eq!(
        descriptors.iter().map(|d| d.year).collect::<Vec<_>>(),
        years
    );
    for d in &descriptors {
        assert!(d.cache_path.is_file());
    }
}

#[test]
fn fetch_range_single_year() {
    let (base_url, _) = mock_server(feed_routes(&[2015]));
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    let descriptors = fetch_range(2015..=2015, &config, |_| {}).unwrap();
    assert_eq!(descriptors.len(), 1);
    assert_eq!(descriptors[0].year, 2015);
}

#[test]
fn one_bad_year_yields_partial_failure_with_nine_successes() {
    let years: Vec<u16> = (2010..=2019).collect();
    let mut routes = feed_routes(&years);
    routes.insert(
        "/nvdcve-1.1-2014.json.gz".to_string(),
        (500, b"boom".to_vec()),
    );
    let (base_url, _) = mock_server(routes);
    let dir = tempfile::tempdir().unwrap();
    let config = FetchConfig::new(base_url, dir.path());
    let (ok, failed) = fetch_range(2010..=2019, &config, |_| {}).unwrap_err();
    assert_eq!(ok.len(), 9);
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].0, 2014);
    assert!(matches!(
        failed[0].1,
        FetchError::HttpFailure { status: 500, .. }
    ));
}
