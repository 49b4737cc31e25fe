mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;

use quake3m::assess::{aggregate_by_city, cities_geojson, read_assessments, records_geojson, Outcome, Pipeline};
use quake3m::corpus::{
    filter_with_options, load_corpus, CorpusFormat, CsvColumns, FilterOptions, TermLibrary, TweetRecord,
};
use quake3m::geo::{Gazetteer, GeoPoint};
use quake3m::mllm::{BackendMode, Client, ReplayStore, ScriptRules, TranscriptRecorder};
use quake3m::prompts::PromptVersion;
use quake3m::validate::tfidf::{narrative_bands, non_empty_buckets, per_level_buckets};
use quake3m::validate::{
    build_report, load_dyfi, prompt_sensitivity, scatter_csv, tfidf_by_mmi, DyfiColumns, StopWords, DEFAULT_MAX_JOIN_KM,
};

use config::{Overrides, RunConfig};
use manifest::{write_atomic, BackendInfo, RunManifest};

#[derive(Parser)]
#[command(
    name = "quake3m",
    version,
    about = "Earthquake damage assessment from social-media posts"
)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace); RUST_LOG also works.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Keep the damage-related posts of a corpus.
    Filter(FilterArgs),
    /// Run location, event and damage stages over a corpus.
    Assess(AssessArgs),
    /// Compare assessments against DYFI intensities.
    Validate(ValidateArgs),
    /// Run every prompt version over a seeded sample and compare them.
    Sensitivity(SensitivityArgs),
    /// Distinctive reasoning terms per damage-level bucket.
    Tfidf(TfidfArgs),
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Term library files; the bundled English and Japanese lists when absent.
    #[arg(long = "terms")]
    terms: Vec<PathBuf>,
    /// Additionally require one of these keywords.
    #[arg(long = "require-keyword")]
    require_keywords: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Backend name from the config's `backends`.
    #[arg(long)]
    backend: Option<String>,
    /// text, image or fusion.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssessArgs {
    #[command(flatten)]
    run: RunArgs,
    /// v1 to v7.
    #[arg(long)]
    prompt_version: Option<String>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 50)]
    sample_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DyfiFormat {
    /// location_id, cdi, nresp, lat, lon
    Plain,
    /// USGS cdi_geo export headers.
    Usgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    assessments: PathBuf,
    #[arg(long)]
    dyfi: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    dyfi_format: DyfiFormat,
    /// Epicenter as `lat,lon`; taken from --config when absent.
    #[arg(long)]
    epicenter: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_JOIN_KM)]
    max_join_km: f64,
    /// Weight the city correlation by DYFI response counts.
    #[arg(long)]
    weight_nresp: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Buckets {
    /// One bucket per observed damage level.
    PerLevel,
    /// 0-3, 4-5, 6-9.
    Narrative,
}

#[derive(Args)]
struct TfidfArgs {
    #[arg(long)]
    assessments: PathBuf,
    #[arg(long, value_enum, default_value = "per-level")]
    buckets: Buckets,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Stop-word file; the bundled lists when absent.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Error carrying its exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn data(e: impl fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level)).init();
    let result = match cli.command {
        Command::Filter(a) => cmd_filter(a),
        Command::Assess(a) => cmd_assess(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Tfidf(a) => cmd_tfidf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("quake3m: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<TweetRecord>, Failure> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv(CsvColumns::default()),
        _ => CorpusFormat::Jsonl,
    };
    let loaded = load_corpus(path, &format).map_err(data)?;
    for bad in &loaded.malformed {
        log::warn!("{}:{}: skipped: {}", path.display(), bad.line, bad.reason);
    }
    Ok(loaded.records)
}

fn write_jsonl(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), Failure> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(data)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(data)
}

fn cmd_filter(a: FilterArgs) -> CmdResult {
    let mut manifest = RunManifest::start("filter");
    out_dir(&a.out)?;
    let libraries = if a.terms.is_empty() {
        TermLibrary::bundled()
    } else {
        a.terms
            .iter()
            .map(|p| TermLibrary::load(p).map_err(|e| Failure::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?
    };
    let corpus = read_corpus(&a.corpus)?;
    let options = FilterOptions {
        require_keywords: a.require_keywords,
    };
    let kept = filter_with_options(&corpus, &libraries, &options);
    let path = a.out.join("filtered.jsonl");
    write_jsonl(&path, kept.iter().map(TweetRecord::to_json_line))?;

    manifest.input("corpus", &a.corpus).map_err(data)?;
    for (i, t) in a.terms.iter().enumerate() {
        manifest.input(&format!("terms_{i}"), t).map_err(data)?;
    }
    manifest.output("filtered", &path).map_err(data)?;
    manifest.counts.insert("input".into(), corpus.len());
    manifest.counts.insert("retained".into(), kept.len());
    manifest.counts.insert("dropped".into(), corpus.len() - kept.len());
    manifest.finish(&a.out).map_err(data)?;
    println!(
        "retained {} dropped {} of {}",
        kept.len(),
        corpus.len() - kept.len(),
        corpus.len()
    );
    Ok(())
}

fn load_config(run: &RunArgs, prompt_version: Option<String>) -> Result<RunConfig, Failure> {
    let overrides = Overrides {
        backend: run.backend.clone(),
        modality: run.modality.clone(),
        prompt_version,
        parallelism: run.parallelism,
    };
    config::load(&run.config, &overrides).map_err(|problems| {
        Failure::Config(format!(
            "{} problem(s) in {}:\n  {}",
            problems.len(),
            run.config.display(),
            problems.join("\n  ")
        ))
    })
}

/// Builds the pipeline for one run, attaching the script, replay store and
/// transcript recorder the configuration asks for.
fn build_pipeline(cfg: &RunConfig, seed: Option<u64>) -> Result<Pipeline, Failure> {
    let profile = cfg.pipeline.backend.clone();
    let mut client = Client::new(profile.clone());
    if let Some(seed) = seed {
        client = client.with_jitter_seed(seed);
    }
    if let Some(path) = &cfg.script {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let rules: ScriptRules =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        client = client.with_script(Arc::new(rules));
    }
    if let Some(path) = &cfg.transcript {
        if path.is_file() {
            let store = ReplayStore::load(path).map_err(data)?;
            client = client.with_replay(store);
        }
        if profile.mode != BackendMode::Replay {
            let recorder = TranscriptRecorder::open(path).map_err(data)?;
            client = client.with_recorder(Arc::new(recorder));
        }
    }
    if profile.mode == BackendMode::Live {
        let var = profile.credential_env_var();
        if std::env::var(&var).map_or(true, |v| v.trim().is_empty()) {
            return Err(Failure::Backend(format!(
                "{var} is not set for backend {:?}",
                profile.name
            )));
        }
    }
    let gazetteer = match &cfg.pipeline.gazetteer {
        Some(p) => Gazetteer::load(p).map_err(data)?,
        None => Gazetteer::bundled(),
    };
    let mut pipeline = Pipeline::new(cfg.pipeline.clone(), client, gazetteer);
    if !cfg.terms.is_empty() {
        let libs = cfg
            .terms
            .iter()
            .map(|p| TermLibrary::load(p).map_err(data))
            .collect::<Result<Vec<_>, _>>()?;
        pipeline = pipeline.with_libraries(&libs);
    }
    Ok(pipeline)
}

fn describe_run(manifest: &mut RunManifest, run: &RunArgs, cfg: &RunConfig) -> Result<(), Failure> {
    let b = &cfg.pipeline.backend;
    manifest.seed = run.seed;
    manifest.config = Some(manifest::FileDigest::of(&run.config).map_err(data)?);
    manifest.backend = Some(BackendInfo {
        name: b.name.clone(),
        model_id: b.model_id.clone(),
        mode: b.mode.to_string(),
    });
    manifest.input("corpus", &run.corpus).map_err(data)?;
    if let Some(s) = &cfg.script {
        manifest.input("script", s).map_err(data)?;
    }
    Ok(())
}

/// Runs a batch into `<dir>/<stem>.jsonl`, returning the records.
fn run_batch(
    pipeline: &Pipeline,
    corpus: &[TweetRecord],
    path: &Path,
) -> Result<Vec<quake3m::AssessmentRecord>, Failure> {
    let file = File::create(path).map_err(data)?;
    let mut sink = BufWriter::new(file);
    let (records, summary) = pipeline
        .assess_batch(corpus, Some(&mut sink as &mut dyn Write))
        .map_err(data)?;
    sink.flush().map_err(data)?;
    for o in Outcome::ALL {
        log::info!("{}: {}", o.as_str(), summary.count(o));
    }
    Ok(records)
}

fn backend_failures(records: &[quake3m::AssessmentRecord]) -> usize {
    records.iter().filter(|r| r.is_backend_failure()).count()
}

fn cmd_assess(a: AssessArgs) -> CmdResult {
    let mut manifest = RunManifest::start("assess");
    let cfg = load_config(&a.run, a.prompt_version)?;
    out_dir(&a.run.out)?;
    let corpus = read_corpus(&a.run.corpus)?;
    let pipeline = build_pipeline(&cfg, a.run.seed)?;
    describe_run(&mut manifest, &a.run, &cfg)?;

    let out = &a.run.out;
    let jsonl = out.join("assessments.jsonl");
    let records = run_batch(&pipeline, &corpus, &jsonl)?;
    let points = out.join("assessments.geojson");
    write_json(&points, &records_geojson(&records))?;
    let cities = out.join("cities.geojson");
    write_json(&cities, &cities_geojson(&aggregate_by_city(&records)))?;

    manifest.output("assessments", &jsonl).map_err(data)?;
    manifest.output("points_geojson", &points).map_err(data)?;
    manifest.output("cities_geojson", &cities).map_err(data)?;
    if let Some(t) = cfg.transcript.as_ref().filter(|t| t.is_file()) {
        manifest.output("transcript", t).map_err(data)?;
    }
    manifest.counts.insert("input".into(), corpus.len());
    for o in Outcome::ALL {
        manifest
            .counts
            .insert(o.as_str().into(), records.iter().filter(|r| r.outcome == o).count());
    }
    let failed = backend_failures(&records);
    manifest.counts.insert("backend_failures".into(), failed);
    manifest.counts.insert("calls".into(), pipeline.client().call_count());
    manifest.finish(out).map_err(data)?;

    let summary: Vec<String> = Outcome::ALL
        .iter()
        .map(|o| format!("{} {}", o.as_str(), manifest_count(&records, *o)))
        .collect();
    println!("{} records: {}", records.len(), summary.join(", "));
    if failed > 0 {
        return Err(Failure::Backend(format!(
            "{failed} record(s) failed because the backend did not answer; rerun with the same transcript to resume"
        )));
    }
    Ok(())
}

fn manifest_count(records: &[quake3m::AssessmentRecord], o: Outcome) -> usize {
    records.iter().filter(|r| r.outcome == o).count()
}

fn parse_point(text: &str) -> Result<GeoPoint, Failure> {
    let bad = || Failure::Config(format!("--epicenter expects lat,lon, got {text:?}"));
    let (lat, lon) = text.split_once(',').ok_or_else(bad)?;
    let lat: f64 = lat.trim().parse().map_err(|_| bad())?;
    let lon: f64 = lon.trim().parse().map_err(|_| bad())?;
    GeoPoint::new(lat, lon).map_err(|e| Failure::Config(e.to_string()))
}

fn cmd_validate(a: ValidateArgs) -> CmdResult {
    let mut manifest = RunManifest::start("validate");
    let epicenter = match (&a.epicenter, &a.config) {
        (Some(text), _) => parse_point(text)?,
        (None, Some(path)) => {
            config::load(path, &Overrides::default())
                .map_err(|p| Failure::Config(p.join("; ")))?
                .pipeline
                .event
                .epicenter
        }
        (None, None) => return Err(Failure::Config("give --epicenter or --config".into())),
    };
    if !(a.max_join_km.is_finite() && a.max_join_km > 0.0) {
        return Err(Failure::Config("--max-join-km must be positive".into()));
    }
    out_dir(&a.out)?;
    let text =
        std::fs::read_to_string(&a.assessments).map_err(|e| data(format!("{}: {e}", a.assessments.display())))?;
    let records = read_assessments(&text).map_err(data)?;
    let columns = match a.dyfi_format {
        DyfiFormat::Plain => DyfiColumns::default(),
        DyfiFormat::Usgs => DyfiColumns::usgs_cdi_geo(),
    };
    let dyfi = load_dyfi(&a.dyfi, &columns).map_err(data)?;
    let (report, pairs) = build_report(&records, &dyfi, epicenter, a.max_join_km, a.weight_nresp).map_err(data)?;

    let txt = a.out.join("report.txt");
    write_atomic(&txt, report.to_text().as_bytes()).map_err(data)?;
    let json = a.out.join("report.json");
    write_json(&json, &report)?;
    let scatter = a.out.join("distance_scatter.csv");
    write_atomic(&scatter, scatter_csv(&pairs).as_bytes()).map_err(data)?;

    manifest.input("assessments", &a.assessments).map_err(data)?;
    manifest.input("dyfi", &a.dyfi).map_err(data)?;
    manifest.output("report_text", &txt).map_err(data)?;
    manifest.output("report_json", &json).map_err(data)?;
    manifest.output("distance_scatter", &scatter).map_err(data)?;
    manifest.counts.insert("assessed".into(), report.assessed);
    manifest.counts.insert("cities".into(), report.cities);
    manifest.counts.insert("matched".into(), report.join.matched.len());
    manifest.finish(&a.out).map_err(data)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_sensitivity(a: SensitivityArgs) -> CmdResult {
    let mut manifest = RunManifest::start("sensitivity");
    if a.sample_size == 0 {
        return Err(Failure::Config("--sample-size must be positive".into()));
    }
    let base = load_config(&a.run, None)?;
    out_dir(&a.run.out)?;
    let corpus = read_corpus(&a.run.corpus)?;
    let seed = a.run.seed.unwrap_or(0);
    let mut indices = sample(
        &mut StdRng::seed_from_u64(seed),
        corpus.len(),
        a.sample_size.min(corpus.len()),
    )
    .into_vec();
    indices.sort_unstable();
    let subset: Vec<TweetRecord> = indices.iter().map(|&i| corpus[i].clone()).collect();
    describe_run(&mut manifest, &a.run, &base)?;
    manifest.seed = Some(seed);

    let mut runs = BTreeMap::new();
    let mut failed = 0;
    for version in PromptVersion::ALL {
        let mut cfg = base.clone();
        cfg.pipeline.prompt_version = version;
        let pipeline = build_pipeline(&cfg, a.run.seed)?;
        let path = a.run.out.join(format!("assessments_{}.jsonl", version.id()));
        let records = run_batch(&pipeline, &subset, &path)?;
        failed += backend_failures(&records);
        manifest
            .output(&format!("assessments_{}", version.id()), &path)
            .map_err(data)?;
        manifest.counts.insert(
            format!("assessed_{}", version.id()),
            manifest_count(&records, Outcome::Assessed),
        );
        runs.insert(version, records);
    }
    if failed > 0 {
        manifest.counts.insert("backend_failures".into(), failed);
        manifest.finish(&a.run.out).map_err(data)?;
        return Err(Failure::Backend(format!(
            "{failed} record(s) failed because the backend did not answer"
        )));
    }
    let report = prompt_sensitivity(&runs).map_err(data)?;
    let txt = a.run.out.join("sensitivity.txt");
    write_atomic(&txt, report.to_text().as_bytes()).map_err(data)?;
    let json = a.run.out.join("sensitivity.json");
    write_json(&json, &report)?;
    manifest.output("sensitivity_text", &txt).map_err(data)?;
    manifest.output("sensitivity_json", &json).map_err(data)?;
    manifest.counts.insert("sample".into(), subset.len());
    manifest.finish(&a.run.out).map_err(data)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_tfidf(a: TfidfArgs) -> CmdResult {
    let mut manifest = RunManifest::start("tfidf");
    if a.top_k == 0 {
        return Err(Failure::Config("--top-k must be positive".into()));
    }
    let stop = match &a.stopwords {
        Some(p) => {
            StopWords::parse(&std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?)
        }
        None => StopWords::bundled(),
    };
    out_dir(&a.out)?;
    let text =
        std::fs::read_to_string(&a.assessments).map_err(|e| data(format!("{}: {e}", a.assessments.display())))?;
    let records = read_assessments(&text).map_err(data)?;
    let buckets = match a.buckets {
        Buckets::PerLevel => non_empty_buckets(&records, &per_level_buckets()),
        Buckets::Narrative => narrative_bands(),
    };
    let result = tfidf_by_mmi(&records, &buckets, a.top_k, &stop).map_err(data)?;

    let mut table = String::new();
    for b in &result {
        let terms: Vec<String> = b.terms.iter().map(|(t, s)| format!("{t} ({s:.3})")).collect();
        table.push_str(&format!(
            "MMI {:<5} n={:<5} {}\n",
            b.bucket.label,
            b.documents,
            terms.join(", ")
        ));
    }
    let txt = a.out.join("tfidf.txt");
    write_atomic(&txt, table.as_bytes()).map_err(data)?;
    let json = a.out.join("tfidf.json");
    write_json(&json, &result)?;
    manifest.input("assessments", &a.assessments).map_err(data)?;
    manifest.output("tfidf_text", &txt).map_err(data)?;
    manifest.output("tfidf_json", &json).map_err(data)?;
    manifest.counts.insert("buckets".into(), result.len());
    manifest.finish(&a.out).map_err(data)?;
    print!("{table}");
    Ok(())
}
