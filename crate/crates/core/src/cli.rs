//! Command-line surface: `fetch`, `rank`, and `coverage` subcommands wiring
//! fetcher → parser → aggregator → guideline → report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Stdout carries
//! human-readable tables; the files under `--out` are the machine contract
//! and are written atomically (temp + rename).

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::aggregator::{add_record, merge, rank};
use crate::cwe_model::CweCountTable;
use crate::feed_parser::{self, Diagnostic};
use crate::fetcher::{self, FeedDescriptor, FetchConfig};
use crate::guideline::{self, builtin_owasp_2017};
use crate::report::{self, ChartFormat, ManifestFeed, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const CACHE_ENV: &str = "CWE_ANALYZER_CACHE";

#[derive(Parser)]
#[command(
    name = "cwe-analyzer",
    version,
    about = "CWE frequency and guideline-coverage analysis over NVD JSON feeds"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download per-year feed archives into the local cache
    Fetch(FetchArgs),
    /// Aggregate feeds and print/emit the top-N CWE ranking
    Rank(RankArgs),
    /// Measure guideline-catalog coverage of the observed CWE population
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct FetchArgs {
    /// Inclusive year range, e.g. 2010-2019 or a single year
    #[arg(long, value_name = "A-B")]
    years: YearRange,
    /// Mirror serving nvdcve-1.1-<YYYY>.json.gz archives
    #[arg(long, default_value = fetcher::DEFAULT_BASE_URL)]
    base_url: String,
    #[arg(long, env = CACHE_ENV, default_value = "cache")]
    cache_dir: PathBuf,
    /// Re-download even when a cached copy exists
    #[arg(long)]
    force: bool,
    /// Parallel downloads
    #[arg(long, default_value_t = 4)]
    jobs: usize,
}

#[derive(Args)]
struct InputArgs {
    /// Feed file (plain or gzip); repeatable
    #[arg(long, value_name = "PATH")]
    input: Vec<PathBuf>,
    /// Read cached feeds for this inclusive year range instead of --input
    #[arg(long, value_name = "A-B")]
    years: Option<YearRange>,
    #[arg(long, env = CACHE_ENV, default_value = "cache")]
    cache_dir: PathBuf,
    /// Feed year for --input files whose name does not carry one
    #[arg(long)]
    year: Option<u16>,
    /// Parallel feed parsing
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    /// Directory for report files
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Number of rows in the ranking
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Rank NVD special markers and unrecognized tokens too
    #[arg(long)]
    include_special: bool,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Use a built-in catalog (currently: owasp2017)
    #[arg(long, value_name = "NAME", conflicts_with = "catalog")]
    builtin: Option<String>,
    /// Load a catalog document instead of a built-in
    #[arg(long, value_name = "PATH")]
    catalog: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
struct YearRange {
    start: u16,
    end: u16,
}

impl FromStr for YearRange {
    type Err = String;

    fn from_str(s: &str) -> Result<YearRange, String> {
        let (a, b) = match s.split_once('-') {
            Some((a, b)) => (a, b),
            None => (s, s),
        };
        let parse = |t: &str| {
            t.parse::<u16>()
                .map_err(|_| format!("invalid year {t:?} in {s:?}"))
        };
        let (start, end) = (parse(a)?, parse(b)?);
        if start > end {
            return Err(format!("inverted year range {s:?}"));
        }
        Ok(YearRange { start, end })
    }
}

/// Parses argv and runs the selected subcommand, returning the process exit
/// status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };
    match cli.command {
        Command::Fetch(args) => cmd_fetch(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Coverage(args) => cmd_coverage(args),
    }
}

fn cmd_fetch(args: FetchArgs) -> i32 {
    let config = FetchConfig {
        base_url: args.base_url,
        cache_dir: args.cache_dir,
        force: args.force,
        jobs: args.jobs,
    };
    let warn = |m: String| eprintln!("WARN fetch {m}");
    match fetcher::fetch_range(args.years.start..=args.years.end, &config, warn) {
        Ok(descriptors) => {
            for d in &descriptors {
                let origin = if d.from_cache { "cached" } else { "downloaded" };
                println!("{}: {} ({})", d.year, d.cache_path.display(), origin);
            }
            EXIT_OK
        }
        Err((ok, failed)) => {
            for d in &ok {
                println!("{}: {} (ok)", d.year, d.cache_path.display());
            }
            for (year, err) in &failed {
                eprintln!("error: {year}: {err}");
            }
            EXIT_FAILURE
        }
    }
}

/// One parsed input: its single-year table plus provenance for the manifest.
struct ParsedInput {
    table: CweCountTable,
    descriptor: FeedDescriptor,
    diagnostics: Vec<Diagnostic>,
}

fn resolve_inputs(args: &InputArgs) -> Result<Vec<PathBuf>, String> {
    match (&args.years, args.input.is_empty()) {
        (Some(range), true) => Ok((range.start..=range.end)
            .map(|y| args.cache_dir.join(format!("nvdcve-1.1-{y}.json.gz")))
            .collect()),
        (None, false) => Ok(args.input.clone()),
        (Some(_), false) => Err("pass either --input or --years, not both".to_string()),
        (None, true) => Err("no inputs: pass --input or --years".to_string()),
    }
}

fn parse_one(path: &Path, year_override: Option<u16>) -> Result<ParsedInput, String> {
    let mut table: Option<CweCountTable> = None;
    let (stats, diagnostics) = feed_parser::for_each_record_in_file(path, year_override, |rec| {
        let table = table.get_or_insert_with(|| CweCountTable::empty(rec.feed_year));
        add_record(table, &rec);
    })
    .map_err(|e| format!("{}: {e}", path.display()))?;
    let table = table.unwrap_or_else(|| CweCountTable::empty(stats.feed_year));
    Ok(ParsedInput {
        descriptor: FeedDescriptor {
            year: table.year_range.0,
            url: String::new(),
            cache_path: path.to_path_buf(),
            sha256: None,
            size: fs::metadata(path).ok().map(|m| m.len()),
            fetched_at_unix: None,
            from_cache: true,
        },
        table,
        diagnostics,
    })
}

/// Parses all inputs with up to `jobs` workers and merges their tables.
fn parse_and_merge(args: &InputArgs) -> Result<(CweCountTable, Vec<ParsedInput>), String> {
    let paths = resolve_inputs(args)?;
    for path in &paths {
        if !path.is_file() {
            return Err(format!(
                "{} not found (run `cwe-analyzer fetch` first?)",
                path.display()
            ));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<ParsedInput, String>)>> = Mutex::new(Vec::new());
    let workers = args.jobs.max(1).min(paths.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = paths.get(i) else { break };
                let result = parse_one(path, args.year);
                results.lock().unwrap().push((i, result));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let mut inputs = Vec::with_capacity(results.len());
    for (_, result) in results {
        inputs.push(result?);
    }
    let merged = inputs
        .iter()
        .fold(None::<CweCountTable>, |acc, input| match acc {
            None => Some(input.table.clone()),
            Some(t) => Some(merge(&t, &input.table)),
        })
        .unwrap_or_else(|| CweCountTable::empty(0));
    Ok((merged, inputs))
}

fn print_diagnostics(inputs: &[ParsedInput]) {
    for input in inputs {
        for diag in &input.diagnostics {
            eprintln!("{diag}");
        }
    }
}

fn atomic_file_write(path: &Path, write: impl FnOnce(&mut File) -> std::io::Result<()>) -> Result<(), String> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut file = File::create(&tmp)?;
        write(&mut file)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| format!("writing {}: {e}", path.display()))
}

fn cmd_rank(args: RankArgs) -> i32 {
    if args.top == 0 {
        eprintln!("error: --top must be at least 1");
        return EXIT_USAGE;
    }
    let (table, inputs) = match parse_and_merge(&args.inputs) {
        Ok(v) => v,
        Err(msg) => {
            let code = usage_or_failure(&msg);
            eprintln!("error: {msg}");
            return code;
        }
    };
    print_diagnostics(&inputs);

    let ranked = rank(&table, args.top, args.include_special);
    println!("rank  cwe               count");
    for entry in &ranked {
        println!("{:<5} {:<17} {}", entry.rank, entry.cwe.raw(), entry.count);
    }
    println!(
        "({} records, {} assignments, years {}-{})",
        table.total_records, table.total_assignments, table.year_range.0, table.year_range.1
    );

    let out = &args.inputs.out;
    if let Err(msg) = write_rank_outputs(out, &table, &ranked, &inputs) {
        eprintln!("error: {msg}");
        return EXIT_FAILURE;
    }
    EXIT_OK
}

fn write_rank_outputs(
    out: &Path,
    table: &CweCountTable,
    ranked: &[crate::cwe_model::RankedEntry],
    inputs: &[ParsedInput],
) -> Result<(), String> {
    fs::create_dir_all(out).map_err(|e| format!("creating {}: {e}", out.display()))?;
    atomic_file_write(&out.join("cwe_counts.csv"), |f| {
        report::emit_counts_csv(table, f).map_err(io_of)
    })?;
    if inputs.len() > 1 {
        let tables: Vec<CweCountTable> = inputs.iter().map(|i| i.table.clone()).collect();
        atomic_file_write(&out.join("cwe_counts_by_year.csv"), |f| {
            report::emit_counts_by_year_csv(&tables, f).map_err(io_of)
        })?;
    }
    atomic_file_write(&out.join("rank_chart.csv"), |f| {
        report::emit_rank_chart(ranked, f, ChartFormat::Csv).map_err(io_of)
    })?;
    write_manifest(out, inputs, None)
}

fn cmd_coverage(args: CoverageArgs) -> i32 {
    let catalog = match (&args.builtin, &args.catalog) {
        (Some(name), None) if name == "owasp2017" => builtin_owasp_2017(),
        (Some(name), None) => {
            eprintln!("error: unknown built-in catalog {name:?} (available: owasp2017)");
            return EXIT_USAGE;
        }
        (None, Some(path)) => {
            let file = match File::open(path) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
            };
            match guideline::load_catalog(file) {
                Ok(loaded) => {
                    for warning in &loaded.warnings {
                        eprintln!("WARN catalog {warning}");
                    }
                    loaded.catalog
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_FAILURE;
                }
            }
        }
        (None, None) => {
            eprintln!("error: pass --builtin owasp2017 or --catalog <path>");
            return EXIT_USAGE;
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let (table, inputs) = match parse_and_merge(&args.inputs) {
        Ok(v) => v,
        Err(msg) => {
            let code = usage_or_failure(&msg);
            eprintln!("error: {msg}");
            return code;
        }
    };
    print_diagnostics(&inputs);

    let report = guideline::coverage(&table, &catalog);
    let comparison = guideline::compare_rank1(&table, &catalog).ok();

    println!("catalog: {}", catalog.name);
    println!(
        "covered={} uncovered={} special={} (total {})",
        report.covered_assignments,
        report.uncovered_assignments,
        report.special_assignments,
        table.total_assignments
    );
    println!(
        "coverage_fraction={:.4} (of weaknesses), {:.4} (of all assignments)",
        report.coverage_fraction, report.coverage_fraction_of_total
    );
    match &comparison {
        Some(cmp) => println!(
            "rank1={} count={} vs {} first category {} => agrees={}",
            cmp.table_rank1.raw(),
            cmp.table_rank1_count,
            catalog.name,
            cmp.catalog_first_category,
            cmp.agrees
        ),
        None => println!("rank1 comparison unavailable (no weakness entries)"),
    }

    let out = &args.inputs.out;
    let write = || -> Result<(), String> {
        fs::create_dir_all(out).map_err(|e| format!("creating {}: {e}", out.display()))?;
        atomic_file_write(&out.join("coverage.json"), |f| {
            let doc = serde_json::json!({
                "catalog": catalog.name,
                "coverage": report,
                "rank1_comparison": comparison,
            });
            serde_json::to_writer_pretty(&mut *f, &doc).map_err(std::io::Error::other)?;
            writeln!(f)
        })?;
        atomic_file_write(&out.join("coverage_chart.csv"), |f| {
            report::emit_coverage_chart(&report, f, ChartFormat::Csv).map_err(io_of)
        })?;
        atomic_file_write(&out.join("cwe_counts.csv"), |f| {
            report::emit_counts_csv(&table, f).map_err(io_of)
        })?;
        write_manifest(out, &inputs, Some(catalog.name.clone()))
    };
    if let Err(msg) = write() {
        eprintln!("error: {msg}");
        return EXIT_FAILURE;
    }
    EXIT_OK
}

fn write_manifest(
    out: &Path,
    inputs: &[ParsedInput],
    catalog: Option<String>,
) -> Result<(), String> {
    let feeds: Vec<ManifestFeed> = inputs.iter().map(|i| (&i.descriptor).into()).collect();
    let manifest = RunManifest::new(feeds, catalog);
    atomic_file_write(&out.join("manifest.json"), |f| {
        report::emit_run_manifest(&manifest, f).map_err(io_of)
    })
}

fn usage_or_failure(msg: &str) -> i32 {
    if msg.starts_with("no inputs") || msg.starts_with("pass either") {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn io_of(e: report::ReportError) -> std::io::Error {
    match e {
        report::ReportError::SinkFailure(io) => io,
    }
}
