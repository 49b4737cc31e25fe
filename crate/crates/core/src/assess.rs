//! Per-post pipeline (filter, locate, verify event, classify damage) and the
//! city-level aggregation that feeds validation.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{TermLibrary, TermMatcher, TweetRecord};
use crate::geo::{haversine_km, resolve_tiered, EventConfig, Gazetteer, GeoPoint, LocationTier, ResolvedLocation};
use crate::mllm::{BackendProfile, ChatRequest, Client};
use crate::prompts::{
    self, DamageType, DamageVerdict, EventAnswer, Modality, ParseError, PromptVersion, REASK_INSTRUCTION,
};

/// Records between sink flushes in [`Pipeline::assess_batch`].
pub const FLUSH_EVERY: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub event: EventConfig,
    pub backend: BackendProfile,
    pub modality: Modality,
    pub prompt_version: PromptVersion,
    #[serde(default = "one")]
    pub parallelism: usize,
    /// `None` uses the bundled gazetteer.
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    /// Re-run the damage-term filter before assessing.
    #[serde(default)]
    pub recheck_filter: bool,
}

fn one() -> usize {
    1
}

impl PipelineConfig {
    pub fn new(event: EventConfig, backend: BackendProfile, modality: Modality, prompt_version: PromptVersion) -> Self {
        PipelineConfig {
            event,
            backend,
            modality,
            prompt_version,
            parallelism: 1,
            gazetteer: None,
            recheck_filter: false,
        }
    }

    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.event.validate() {
            out.push(format!("event: {e}"));
        }
        out.extend(self.backend.validate());
        if self.parallelism == 0 {
            out.push("parallelism must be at least 1".into());
        }
        if let Some(p) = &self.gazetteer {
            if !p.is_file() {
                out.push(format!("gazetteer {} does not exist", p.display()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Assessed,
    NotEvent,
    UnresolvedLocation,
    FilteredOut,
    ParseFailed,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::Assessed,
        Outcome::NotEvent,
        Outcome::UnresolvedLocation,
        Outcome::FilteredOut,
        Outcome::ParseFailed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Assessed => "assessed",
            Outcome::NotEvent => "not_event",
            Outcome::UnresolvedLocation => "unresolved_location",
            Outcome::FilteredOut => "filtered_out",
            Outcome::ParseFailed => "parse_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentRecord {
    pub tweet_id: String,
    pub resolved: ResolvedLocation,
    /// Absent when the record stopped before event verification.
    pub event_related: Option<EventAnswer>,
    pub verdict: Option<DamageVerdict>,
    pub distance_km: Option<f64>,
    pub model: String,
    pub modality: Modality,
    pub prompt_version: PromptVersion,
    pub outcome: Outcome,
    /// Why a record ended in `parse_failed`; written to the reasoning column.
    pub diagnostic: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    tweet_id: String,
    location: String,
    lat: Option<f64>,
    lon: Option<f64>,
    tier: LocationTier,
    distance_km: Option<f64>,
    event_related: Option<EventAnswer>,
    human_impact: Option<u8>,
    damage_type: Option<DamageType>,
    damage_level: Option<u8>,
    confidence: Option<f64>,
    reasoning: Option<String>,
    model: String,
    modality: Modality,
    prompt_version: PromptVersion,
    outcome: Outcome,
}

impl AssessmentRecord {
    pub fn to_json_line(&self) -> String {
        let v = self.verdict.as_ref();
        let row = Row {
            tweet_id: self.tweet_id.clone(),
            location: self.resolved.name.clone(),
            lat: self.resolved.point.map(|p| p.lat),
            lon: self.resolved.point.map(|p| p.lon),
            tier: self.resolved.tier,
            distance_km: self.distance_km,
            event_related: self.event_related,
            human_impact: v.map(|v| v.human_impact),
            damage_type: v.map(|v| v.damage_type),
            damage_level: v.map(|v| v.damage_level),
            confidence: v.map(|v| v.confidence),
            reasoning: v.map(|v| v.reasoning.clone()).or_else(|| self.diagnostic.clone()),
            model: self.model.clone(),
            modality: self.modality,
            prompt_version: self.prompt_version,
            outcome: self.outcome,
        };
        serde_json::to_string(&row).expect("assessment row serializes")
    }

    /// True when a stage failed because the backend did not answer, as
    /// opposed to answering with something unparseable.
    pub fn is_backend_failure(&self) -> bool {
        self.outcome == Outcome::ParseFailed
            && self
                .diagnostic
                .as_deref()
                .is_some_and(|d| d.contains("stage: backend error:"))
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let row: Row = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let point = match (row.lat, row.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(|e| e.to_string())?),
            _ => None,
        };
        let verdict = if row.outcome == Outcome::Assessed {
            let missing = |f: &str| format!("assessed record {} lacks {f}", row.tweet_id);
            Some(DamageVerdict {
                human_impact: row.human_impact.ok_or_else(|| missing("human_impact"))?,
                damage_type: row.damage_type.ok_or_else(|| missing("damage_type"))?,
                damage_level: row.damage_level.ok_or_else(|| missing("damage_level"))?,
                confidence: row.confidence.ok_or_else(|| missing("confidence"))?,
                reasoning: row.reasoning.clone().unwrap_or_default(),
                voted_candidate: None,
            })
        } else {
            None
        };
        let diagnostic = if verdict.is_none() { row.reasoning } else { None };
        Ok(AssessmentRecord {
            tweet_id: row.tweet_id,
            resolved: ResolvedLocation {
                name: row.location,
                point,
                tier: row.tier,
                granularity: None,
            },
            event_related: row.event_related,
            verdict,
            distance_km: row.distance_km,
            model: row.model,
            modality: row.modality,
            prompt_version: row.prompt_version,
            outcome: row.outcome,
            diagnostic,
        })
    }
}

/// Reads an assessment JSONL file written by [`Pipeline::assess_batch`].
pub fn read_assessments(content: &str) -> Result<Vec<AssessmentRecord>, String> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| AssessmentRecord::from_json_line(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchSummary {
    pub counts: BTreeMap<Outcome, usize>,
    pub total: usize,
}

impl BatchSummary {
    pub fn count(&self, outcome: Outcome) -> usize {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    client: Client,
    gazetteer: Gazetteer,
    matcher: Option<TermMatcher>,
}

enum StageError {
    Backend(String),
    Parse(ParseError),
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageError::Backend(e) => write!(f, "backend error: {e}"),
            StageError::Parse(e) => write!(f, "unparseable response ({e}): {}", e.raw()),
        }
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig, client: Client, gazetteer: Gazetteer) -> Self {
        Pipeline {
            config,
            client,
            gazetteer,
            matcher: None,
        }
    }

    /// Libraries used when `recheck_filter` is set; defaults to the bundled
    /// ones.
    pub fn with_libraries(mut self, libraries: &[TermLibrary]) -> Self {
        self.matcher = Some(TermMatcher::new(libraries));
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    /// Sends a request; on a parse failure asks once more with an explicit
    /// instruction to return only the object.
    fn ask<T>(&self, mut request: ChatRequest, parse: fn(&str) -> Result<T, ParseError>) -> Result<T, StageError> {
        let first = self
            .client
            .complete(&request)
            .map_err(|e| StageError::Backend(e.to_string()))?;
        match parse(&first.text) {
            Ok(v) => Ok(v),
            Err(e) => {
                log::debug!("re-asking after parse failure: {e}");
                request.append_instruction(REASK_INSTRUCTION);
                let second = self
                    .client
                    .complete(&request)
                    .map_err(|e| StageError::Backend(e.to_string()))?;
                parse(&second.text).map_err(StageError::Parse)
            }
        }
    }

    pub fn assess_tweet(&self, record: &TweetRecord) -> AssessmentRecord {
        let cfg = &self.config;
        let mut out = AssessmentRecord {
            tweet_id: record.id.clone(),
            resolved: ResolvedLocation::unresolved(),
            event_related: None,
            verdict: None,
            distance_km: None,
            model: cfg.backend.model_id.clone(),
            modality: cfg.modality,
            prompt_version: cfg.prompt_version,
            outcome: Outcome::ParseFailed,
            diagnostic: None,
        };

        if cfg.recheck_filter {
            let retained = match &self.matcher {
                Some(m) => m.is_match(&record.text),
                None => TermMatcher::new(&TermLibrary::bundled()).is_match(&record.text),
            };
            if !retained {
                out.outcome = Outcome::FilteredOut;
                return out;
            }
        }

        let damage_request = match prompts::render_damage_prompt(record, cfg.modality, cfg.prompt_version) {
            Ok(r) => r,
            Err(e) => {
                out.diagnostic = Some(e.to_string());
                return out;
            }
        };

        let content_name = if record.geotag.is_some() {
            None
        } else {
            let request = ChatRequest::text(prompts::render_location_prompt(record));
            match self.ask(request, prompts::parse_location_response) {
                Ok(v) => Some(v.location),
                Err(e) => {
                    out.diagnostic = Some(format!("location stage: {e}"));
                    return out;
                }
            }
        };
        let country = cfg.event.country.as_deref();
        out.resolved = resolve_tiered(record, content_name.as_deref(), &self.gazetteer, country);
        out.distance_km = out.resolved.point.map(|p| haversine_km(p, cfg.event.epicenter));
        if !out.resolved.is_resolved() {
            out.outcome = Outcome::UnresolvedLocation;
            return out;
        }

        let request = ChatRequest::text(prompts::render_event_prompt(record, &cfg.event));
        match self.ask(request, prompts::parse_event_response) {
            Ok(v) => out.event_related = Some(v.is_event_related),
            Err(e) => {
                out.diagnostic = Some(format!("event stage: {e}"));
                return out;
            }
        }
        if out.event_related == Some(EventAnswer::No) {
            out.outcome = Outcome::NotEvent;
            return out;
        }

        match self.ask(damage_request, prompts::parse_damage_response) {
            Ok(v) => {
                out.verdict = Some(v);
                out.outcome = Outcome::Assessed;
            }
            Err(e) => out.diagnostic = Some(format!("damage stage: {e}")),
        }
        out
    }

    /// Assesses every record with up to `parallelism` workers. Results come
    /// back in input order; when a sink is given each line is written as soon
    /// as its predecessors are done, flushing every [`FLUSH_EVERY`] records.
    pub fn assess_batch(
        &self,
        corpus: &[TweetRecord],
        mut sink: Option<&mut dyn Write>,
    ) -> io::Result<(Vec<AssessmentRecord>, BatchSummary)> {
        let workers = self.config.parallelism.max(1).min(corpus.len().max(1));
        let next = AtomicUsize::new(0);
        let mut results = Vec::with_capacity(corpus.len());
        let mut summary = BatchSummary {
            total: corpus.len(),
            ..BatchSummary::default()
        };

        std::thread::scope(|scope| -> io::Result<()> {
            let (tx, rx) = mpsc::channel::<(usize, AssessmentRecord)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(record) = corpus.get(i) else { break };
                    if tx.send((i, self.assess_tweet(record))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            let mut pending = HashMap::new();
            for (i, record) in rx {
                pending.insert(i, record);
                while let Some(record) = pending.remove(&results.len()) {
                    *summary.counts.entry(record.outcome).or_insert(0) += 1;
                    if let Some(w) = sink.as_deref_mut() {
                        writeln!(w, "{}", record.to_json_line())?;
                    }
                    results.push(record);
                    if results.len() % FLUSH_EVERY == 0 {
                        if let Some(w) = sink.as_deref_mut() {
                            w.flush()?;
                        }
                        log::info!("assessed {}/{}", results.len(), corpus.len());
                    }
                }
            }
            Ok(())
        })?;
        if let Some(w) = sink {
            w.flush()?;
        }
        Ok((results, summary))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityAggregate {
    pub city_name: String,
    /// State or country qualifier split off the resolved name.
    pub region: Option<String>,
    pub point: GeoPoint,
    pub n: usize,
    pub mean_mmi: f64,
    pub mean_confidence: f64,
}

impl CityAggregate {
    pub fn display_name(&self) -> String {
        match &self.region {
            Some(r) => format!("{}, {}", self.city_name, r),
            None => self.city_name.clone(),
        }
    }
}

fn title_case(word: &str) -> String {
    if !word.chars().any(|c| c.is_ascii_alphabetic()) {
        return word.to_string();
    }
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// Splits `"el  monte, ca"` into `("El Monte", Some("CA"))`.
pub fn normalize_city(name: &str) -> (String, Option<String>) {
    let (head, qualifier) = match name.split_once(',') {
        Some((h, q)) => (h, Some(q)),
        None => (name, None),
    };
    let city = head.split_whitespace().map(title_case).collect::<Vec<_>>().join(" ");
    let region = qualifier
        .map(|q| q.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|q| !q.is_empty())
        .map(|q| if q.len() <= 3 { q.to_uppercase() } else { q });
    (city, region)
}

/// Mean of a set of values, independent of their order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Groups assessed records with a resolved point by normalized city name.
pub fn aggregate_by_city(records: &[AssessmentRecord]) -> Vec<CityAggregate> {
    type CityKey = (String, Option<String>);
    let mut groups: BTreeMap<CityKey, Vec<(&GeoPoint, &DamageVerdict)>> = BTreeMap::new();
    for r in records {
        let (Some(point), Some(verdict)) = (r.resolved.point.as_ref(), r.verdict.as_ref()) else {
            continue;
        };
        if r.outcome != Outcome::Assessed || r.resolved.name.trim().is_empty() {
            continue;
        }
        groups
            .entry(normalize_city(&r.resolved.name))
            .or_default()
            .push((point, verdict));
    }
    let mut out: Vec<CityAggregate> = groups
        .into_iter()
        .map(|((city_name, region), members)| {
            let n = members.len();
            let mmi_sum: u64 = members.iter().map(|(_, v)| u64::from(v.mmi())).sum();
            CityAggregate {
                city_name,
                region,
                point: GeoPoint {
                    lat: stable_mean(members.iter().map(|(p, _)| p.lat).collect()),
                    lon: stable_mean(members.iter().map(|(p, _)| p.lon).collect()),
                },
                n,
                mean_mmi: mmi_sum as f64 / n as f64,
                mean_confidence: stable_mean(members.iter().map(|(_, v)| v.confidence).collect()),
            }
        })
        .collect();
    out.sort_by_key(CityAggregate::display_name);
    out
}

fn point_feature(point: GeoPoint, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [point.lon, point.lat]},
        "properties": properties,
    })
}

/// One point per assessed record, with an `mmi` property.
pub fn records_geojson(records: &[AssessmentRecord]) -> Value {
    let features: Vec<Value> = records
        .iter()
        .filter_map(|r| {
            let v = r.verdict.as_ref()?;
            let p = r.resolved.point?;
            Some(point_feature(
                p,
                json!({
                    "tweet_id": r.tweet_id,
                    "location": r.resolved.name,
                    "mmi": v.mmi(),
                    "damage_type": v.damage_type.as_str(),
                    "confidence": v.confidence,
                }),
            ))
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn cities_geojson(aggregates: &[CityAggregate]) -> Value {
    let features: Vec<Value> = aggregates
        .iter()
        .map(|a| {
            point_feature(
                a.point,
                json!({"city": a.display_name(), "n": a.n, "mmi": a.mean_mmi, "confidence": a.mean_confidence}),
            )
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}
