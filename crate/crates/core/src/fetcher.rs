//! Download and cache NVD per-year feed archives so analyses can run
//! offline and reproducibly.
//!
//! NVD retired the 1.1 JSON feeds, so the URL template is configurable and
//! points at whatever mirror or archive hosts them. Each archive may have a
//! `.meta` companion whose `sha256:` line digests the decompressed feed;
//! verification is best-effort: a missing meta is a warning, a mismatch is
//! fatal.

use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Years for which NVD 1.1 feeds were ever published.
pub const SUPPORTED_YEARS: std::ops::RangeInclusive<u16> = 2002..=2023;

pub const DEFAULT_BASE_URL: &str = "https://nvd.nist.gov/feeds/json/cve/1.1";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("year {0} is outside the supported range {}-{}", SUPPORTED_YEARS.start(), SUPPORTED_YEARS.end())]
    YearUnsupported(u16),
    #[error("no cached copy and host unreachable: {0}")]
    NetworkUnavailable(String),
    #[error("HTTP failure fetching {url}: status {status}")]
    HttpFailure { url: String, status: u16 },
    #[error("digest mismatch for {path}: meta says {expected}, archive is {actual}")]
    DigestMismatch {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("cache I/O error at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Where a feed lives and how it was verified.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedDescriptor {
    pub year: u16,
    pub url: String,
    pub cache_path: PathBuf,
    /// Digest of the decompressed feed content, when computed.
    pub sha256: Option<String>,
    /// Compressed archive size in bytes.
    pub size: Option<u64>,
    /// Unix seconds at download time; absent for cache hits.
    pub fetched_at_unix: Option<u64>,
    /// True when the archive was served from cache without network activity.
    pub from_cache: bool,
}

#[derive(Clone, Debug)]
pub struct FetchConfig {
    pub base_url: String,
    pub cache_dir: PathBuf,
    pub force: bool,
    /// Parallelism cap for [`fetch_range`].
    pub jobs: usize,
}

impl FetchConfig {
    pub fn new(base_url: impl Into<String>, cache_dir: impl Into<PathBuf>) -> FetchConfig {
        FetchConfig {
            base_url: base_url.into(),
            cache_dir: cache_dir.into(),
            force: false,
            jobs: 4,
        }
    }

    fn archive_url(&self, year: u16) -> String {
        format!("{}/nvdcve-1.1-{year}.json.gz", self.base_url.trim_end_matches('/'))
    }

    fn meta_url(&self, year: u16) -> String {
        format!("{}/nvdcve-1.1-{year}.meta", self.base_url.trim_end_matches('/'))
    }

    fn cache_path(&self, year: u16) -> PathBuf {
        self.cache_dir.join(format!("nvdcve-1.1-{year}.json.gz"))
    }

    fn meta_cache_path(&self, year: u16) -> PathBuf {
        self.cache_dir.join(format!("nvdcve-1.1-{year}.meta"))
    }
}

/// Ensures the gzip feed for `year` is cached, downloading and verifying it
/// if needed. `warn` receives non-fatal notices (missing meta, stale digest
/// forcing a refetch).
pub fn fetch_feed(
    year: u16,
    config: &FetchConfig,
    mut warn: impl FnMut(String),
) -> Result<FeedDescriptor, FetchError> {
    if !SUPPORTED_YEARS.contains(&year) {
        return Err(FetchError::YearUnsupported(year));
    }
    let cache_path = config.cache_path(year);
    let meta_path = config.meta_cache_path(year);

    if !config.force && cache_path.is_file() {
        // cache hit: verify against the locally cached meta if we have one,
        // but never touch the network
        let mut digest = None;
        match read_meta_sha256(&meta_path) {
            Some(expected) => {
                let actual = decompressed_sha256(&cache_path)?;
                if expected.eq_ignore_ascii_case(&actual) {
                    digest = Some(actual);
                } else {
                    warn(format!(
                        "cached {} fails its digest check; refetching",
                        cache_path.display()
                    ));
                    return download(year, config, warn);
                }
            }
            None => warn(format!("no meta for cached {}", cache_path.display())),
        }
        let size = fs::metadata(&cache_path).ok().map(|m| m.len());
        return Ok(FeedDescriptor {
            year,
            url: config.archive_url(year),
            cache_path,
            sha256: digest,
            size,
            fetched_at_unix: None,
            from_cache: true,
        });
    }
    download(year, config, warn)
}

fn download(
    year: u16,
    config: &FetchConfig,
    mut warn: impl FnMut(String),
) -> Result<FeedDescriptor, FetchError> {
    let url = config.archive_url(year);
    let cache_path = config.cache_path(year);
    fs::create_dir_all(&config.cache_dir).map_err(|source| FetchError::CacheIo {
        path: config.cache_dir.display().to_string(),
        source,
    })?;

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(300))
        .build()
        .map_err(|e| FetchError::NetworkUnavailable(e.to_string()))?;

    let body = http_get(&client, &url)?;

    // meta companion is best-effort
    let expected_digest = match http_get(&client, &config.meta_url(year)) {
        Ok(meta_body) => {
            let text = String::from_utf8_lossy(&meta_body).into_owned();
            let sha = parse_meta_sha256(&text);
            if sha.is_none() {
                warn(format!("meta for {year} has no sha256 line"));
            }
            let _ = atomic_write(&config.meta_cache_path(year), text.as_bytes());
            sha
        }
        Err(e) => {
            warn(format!("meta for {year} unavailable ({e}); skipping digest check"));
            None
        }
    };

    let actual_digest = sha256_of_gzip_bytes(&body).map_err(|source| FetchError::CacheIo {
        path: cache_path.display().to_string(),
        source,
    })?;
    if let Some(expected) = &expected_digest {
        if !expected.eq_ignore_ascii_case(&actual_digest) {
            return Err(FetchError::DigestMismatch {
                path: cache_path.display().to_string(),
                expected: expected.clone(),
                actual: actual_digest,
            });
        }
    }

    atomic_write(&cache_path, &body).map_err(|source| FetchError::CacheIo {
        path: cache_path.display().to_string(),
        source,
    })?;

    Ok(FeedDescriptor {
        year,
        url,
        cache_path,
        sha256: Some(actual_digest),
        size: Some(body.len() as u64),
        fetched_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
        from_cache: false,
    })
}

/// Successful descriptors alongside the per-year failures of a batch fetch.
pub type PartialFetch = (Vec<FeedDescriptor>, Vec<(u16, FetchError)>);

/// Fetches every year in the inclusive range, up to `config.jobs` at a
/// time. Per-year failures do not abort the batch; if any occur, both the
/// successes and the failures come back in the error value.
pub fn fetch_range(
    years: std::ops::RangeInclusive<u16>,
    config: &FetchConfig,
    warn: impl Fn(String) + Sync,
) -> Result<Vec<FeedDescriptor>, PartialFetch> {
    let years: Vec<u16> = years.collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(u16, Result<FeedDescriptor, FetchError>)>> =
        Mutex::new(Vec::with_capacity(years.len()));
    let workers = config.jobs.max(1).min(years.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&year) = years.get(i) else { break };
                let result = fetch_feed(year, config, &warn);
                results.lock().unwrap().push((year, result));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(year, _)| *year);
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (year, result) in results {
        match result {
            Ok(d) => ok.push(d),
            Err(e) => failed.push((year, e)),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err((ok, failed))
    }
}

fn http_get(client: &reqwest::blocking::Client, url: &str) -> Result<Vec<u8>, FetchError> {
    let response = client
        .get(url)
        .send()
        .map_err(|e| FetchError::NetworkUnavailable(e.to_string()))?;
    let status = response.status();
    if !status.is_success() {
        return Err(FetchError::HttpFailure {
            url: url.to_string(),
            status: status.as_u16(),
        });
    }
    response
        .bytes()
        .map(|b| b.to_vec())
        .map_err(|e| FetchError::NetworkUnavailable(e.to_string()))
}

/// `key:value` lines; NVD writes `sha256:<HEX>` of the decompressed feed.
pub fn parse_meta_sha256(meta: &str) -> Option<String> {
    meta.lines().find_map(|line| {
        line.trim()
            .strip_prefix("sha256:")
            .map(|v| v.trim().to_string())
    })
}

fn read_meta_sha256(path: &Path) -> Option<String> {
    parse_meta_sha256(&fs::read_to_string(path).ok()?)
}

/// Digest of the decompressed content of a cached gzip archive.
pub fn decompressed_sha256(path: &Path) -> Result<String, FetchError> {
    let file = File::open(path).map_err(|source| FetchError::CacheIo {
        path: path.display().to_string(),
        source,
    })?;
    hash_reader(GzDecoder::new(file)).map_err(|source| FetchError::CacheIo {
        path: path.display().to_string(),
        source,
    })
}

fn sha256_of_gzip_bytes(bytes: &[u8]) -> io::Result<String> {
    hash_reader(GzDecoder::new(bytes))
}

fn hash_reader(mut reader: impl Read) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Write-to-temp-then-rename so readers never see a torn file.
fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
