//! Archived post ingestion and the multilingual damage-term filter.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::GeoPoint;

/// Coarse writing-system classification of a post's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptHint {
    Latin,
    Cjk,
    Mixed,
    Unknown,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x309F      // Hiragana
        | 0x30A0..=0x30FF    // Katakana
        | 0x31F0..=0x31FF    // Katakana phonetic extensions
        | 0x3400..=0x4DBF    // CJK Unified Ideographs Extension A
        | 0x4E00..=0x9FFF    // CJK Unified Ideographs
        | 0xF900..=0xFAFF    // CJK Compatibility Ideographs
        | 0xFF66..=0xFF9F    // Halfwidth Katakana
        | 0x20000..=0x2A6DF) // Extension B
}

fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (c.is_alphabetic()
            && matches!(c as u32,
                0x00C0..=0x024F | 0x1E00..=0x1EFF | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A))
}

/// Classifies `text` as Latin, CJK, both, or neither.
pub fn detect_script(text: &str) -> ScriptHint {
    let mut cjk = false;
    let mut latin = false;
    for c in text.chars() {
        cjk |= is_cjk(c);
        latin |= is_latin_letter(c);
        if cjk && latin {
            return ScriptHint::Mixed;
        }
    }
    match (cjk, latin) {
        (true, false) => ScriptHint::Cjk,
        (false, true) => ScriptHint::Latin,
        _ => ScriptHint::Unknown,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Other,
}

/// A media attachment: a local path or a URL.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MediaRef {
    pub uri: String,
    pub kind: MediaKind,
}

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "gif", "webp", "bmp"];

impl MediaRef {
    /// Builds a reference, inferring the kind from the file extension.
    /// Returns `None` for an empty uri.
    pub fn from_uri(uri: &str) -> Option<Self> {
        let uri = uri.trim();
        if uri.is_empty() {
            return None;
        }
        let path = uri.split(['?', '#']).next().unwrap_or(uri);
        let ext = path
            .rsplit_once('.')
            .map(|(_, e)| e.to_ascii_lowercase())
            .unwrap_or_default();
        let kind = if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            MediaKind::Image
        } else {
            MediaKind::Other
        };
        Some(MediaRef {
            uri: uri.to_string(),
            kind,
        })
    }

    pub fn is_image(&self) -> bool {
        self.kind == MediaKind::Image
    }
}

/// One ingested post.
#[derive(Debug, Clone, PartialEq)]
pub struct TweetRecord {
    pub id: String,
    pub created_at: Option<DateTime<Utc>>,
    pub text: String,
    pub geotag: Option<GeoPoint>,
    pub profile_location: Option<String>,
    pub media: Vec<MediaRef>,
    pub script_hint: ScriptHint,
}

impl TweetRecord {
    /// Minimal record with only an id and text; the script hint is derived.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        TweetRecord {
            id: id.into(),
            created_at: None,
            script_hint: detect_script(&text),
            text,
            geotag: None,
            profile_location: None,
            media: Vec::new(),
        }
    }

    pub fn with_geotag(mut self, point: GeoPoint) -> Self {
        self.geotag = Some(point);
        self
    }

    pub fn with_profile_location(mut self, location: impl Into<String>) -> Self {
        self.profile_location = Some(location.into());
        self
    }

    pub fn with_media(mut self, uri: &str) -> Self {
        if let Some(m) = MediaRef::from_uri(uri) {
            self.media.push(m);
        }
        self
    }

    pub fn images(&self) -> impl Iterator<Item = &MediaRef> {
        self.media.iter().filter(|m| m.is_image())
    }

    /// Serializes back to the corpus JSONL line schema.
    pub fn to_json_line(&self) -> String {
        let line = CorpusLine {
            id: &self.id,
            created_at: self.created_at.map(|t| t.to_rfc3339()),
            text: &self.text,
            lat: self.geotag.map(|p| p.lat),
            lon: self.geotag.map(|p| p.lon),
            user_location: self.profile_location.as_deref(),
            media: self.media.iter().map(|m| m.uri.as_str()).collect(),
        };
        serde_json::to_string(&line).expect("corpus line serializes")
    }
}

#[derive(Serialize)]
struct CorpusLine<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_at: Option<String>,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    user_location: Option<&'a str>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    media: Vec<&'a str>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{malformed} of {total} lines malformed (more than 10%); first problems: {}", summarize(.examples))]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        examples: Vec<MalformedLine>,
    },
    #[error("duplicate record ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("term library {language}: {reason}")]
    InvalidLibrary { language: String, reason: String },
}

fn summarize(lines: &[MalformedLine]) -> String {
    lines
        .iter()
        .take(5)
        .map(|m| format!("line {}: {}", m.line, m.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// A rejected input line, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub records: Vec<TweetRecord>,
    pub malformed: Vec<MalformedLine>,
}

/// Column names for CSV corpora. Defaults mirror the JSONL keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvColumns {
    pub id: String,
    pub created_at: String,
    pub text: String,
    pub lat: String,
    pub lon: String,
    pub user_location: String,
    pub media: String,
    pub media_separator: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns {
            id: "id".into(),
            created_at: "created_at".into(),
            text: "text".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            user_location: "user_location".into(),
            media: "media".into(),
            media_separator: "|".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CorpusFormat {
    Jsonl,
    Csv(CsvColumns),
}

/// Loads a corpus, keeping file order. Blank lines are ignored. Malformed
/// lines are reported in [`LoadedCorpus::malformed`]; the load aborts when
/// more than one line and more than 10% of lines are malformed.
pub fn load_corpus(path: &Path, format: &CorpusFormat) -> Result<LoadedCorpus, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (loaded, total) = match format {
        CorpusFormat::Jsonl => parse_jsonl(&content),
        CorpusFormat::Csv(columns) => parse_csv(&content, columns)?,
    };
    check_malformed(&loaded, total)?;
    check_unique_ids(&loaded.records)?;
    Ok(loaded)
}

fn check_malformed(loaded: &LoadedCorpus, total: usize) -> Result<(), CorpusError> {
    let bad = loaded.malformed.len();
    if bad > 1 && bad * 10 > total {
        return Err(CorpusError::TooManyMalformed {
            malformed: bad,
            total,
            examples: loaded.malformed.clone(),
        });
    }
    Ok(())
}

fn check_unique_ids(records: &[TweetRecord]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    let mut dups = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            dups.insert(r.id.clone());
        }
    }
    if dups.is_empty() {
        Ok(())
    } else {
        Err(CorpusError::DuplicateIds(dups.into_iter().collect()))
    }
}

/// Parses JSONL text. Returns the loaded corpus and the number of
/// non-blank lines.
pub fn parse_jsonl(content: &str) -> (LoadedCorpus, usize) {
    let mut out = LoadedCorpus::default();
    let mut total = 0;
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| format!("invalid json: {e}"))
            .and_then(|v| record_from_json(&v));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.malformed.push(MalformedLine { line: idx + 1, reason }),
        }
    }
    (out, total)
}

fn record_from_json(v: &Value) -> Result<TweetRecord, String> {
    let obj = v.as_object().ok_or("not a JSON object")?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        // numeric ids are common in raw exports
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing or empty `id`".into()),
    };
    let text = obj
        .get("text")
        .and_then(Value::as_str)
        .ok_or("missing `text`")?
        .to_string();
    let created_at = match obj.get("created_at") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_timestamp(s)?),
        Some(_) => return Err("`created_at` is not a string".into()),
    };
    let coord = |key: &str| -> Result<Option<f64>, String> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(_) => Err(format!("`{key}` is not a number")),
        }
    };
    let geotag = make_geotag(coord("lat")?, coord("lon")?)?;
    let profile_location = match obj.get("user_location") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err("`user_location` is not a string".into()),
    };
    let media = match obj.get("media") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|m| m.as_str().ok_or("`media` entries must be strings"))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter_map(MediaRef::from_uri)
            .collect(),
        Some(_) => return Err("`media` is not an array".into()),
    };
    Ok(TweetRecord {
        id,
        created_at,
        script_hint: detect_script(&text),
        text,
        geotag,
        profile_location,
        media,
    })
}

fn make_geotag(lat: Option<f64>, lon: Option<f64>) -> Result<Option<GeoPoint>, String> {
    match (lat, lon) {
        (None, None) => Ok(None),
        (Some(lat), Some(lon)) => GeoPoint::new(lat, lon).map(Some).map_err(|e| e.to_string()),
        _ => Err("`lat` and `lon` must appear together".into()),
    }
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    // Twitter API v1.1 style
    if let Ok(t) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unrecognized timestamp {s:?}"))
}

fn parse_csv(content: &str, cols: &CsvColumns) -> Result<(LoadedCorpus, usize), CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(content.as_bytes());
    let headers = reader.headers()?.clone();
    let index = |name: &str| headers.iter().position(|h| h.trim() == name);
    let idx_id = index(&cols.id);
    let idx_text = index(&cols.text);
    let idx_created = index(&cols.created_at);
    let idx_lat = index(&cols.lat);
    let idx_lon = index(&cols.lon);
    let idx_loc = index(&cols.user_location);
    let idx_media = index(&cols.media);

    let mut out = LoadedCorpus::default();
    let mut total = 0;
    for (n, row) in reader.records().enumerate() {
        total += 1;
        // header is line 1
        let line = n + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.malformed.push(MalformedLine {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |i: Option<usize>| i.and_then(|i| row.get(i)).map(str::trim).filter(|s| !s.is_empty());
        let parsed = (|| -> Result<TweetRecord, String> {
            let id = field(idx_id).ok_or("missing `id`")?.to_string();
            let text = idx_text.and_then(|i| row.get(i)).ok_or("missing `text`")?.to_string();
            let num = |i: Option<usize>, key: &str| -> Result<Option<f64>, String> {
                field(i)
                    .map(|s| s.parse::<f64>().map_err(|_| format!("`{key}` is not a number")))
                    .transpose()
            };
            let geotag = make_geotag(num(idx_lat, "lat")?, num(idx_lon, "lon")?)?;
            let created_at = field(idx_created).map(parse_timestamp).transpose()?;
            let media = field(idx_media)
                .map(|m| {
                    m.split(cols.media_separator.as_str())
                        .filter_map(MediaRef::from_uri)
                        .collect()
                })
                .unwrap_or_default();
            Ok(TweetRecord {
                id,
                created_at,
                script_hint: detect_script(&text),
                text,
                geotag,
                profile_location: field(idx_loc).map(str::to_string),
                media,
            })
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => out.malformed.push(MalformedLine { line, reason }),
        }
    }
    Ok((out, total))
}

/// A set of filter terms for one language. Variants are listed explicitly;
/// no stemming is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermLibrary {
    pub language_tag: String,
    pub terms: BTreeSet<String>,
}

const BUNDLED_EN: &str = include_str!("../data/terms.en.txt");
const BUNDLED_JA: &str = include_str!("../data/terms.ja.txt");

impl TermLibrary {
    pub fn new<I, S>(language_tag: &str, terms: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for t in terms {
            let t: String = t.into();
            if t.trim().is_empty() {
                return Err(CorpusError::InvalidLibrary {
                    language: language_tag.to_string(),
                    reason: "empty term".into(),
                });
            }
            set.insert(t.trim().to_string());
        }
        if set.is_empty() {
            return Err(CorpusError::InvalidLibrary {
                language: language_tag.to_string(),
                reason: "no terms".into(),
            });
        }
        Ok(TermLibrary {
            language_tag: language_tag.to_string(),
            terms: set,
        })
    }

    /// Parses the one-term-per-line format; `#` starts a comment line.
    pub fn parse(language_tag: &str, content: &str) -> Result<Self, CorpusError> {
        let terms = content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(language_tag, terms)
    }

    /// Loads `terms.<lang>.txt`; the language tag comes from the file name.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let lang = file_name
            .strip_prefix("terms.")
            .and_then(|rest| rest.strip_suffix(".txt"))
            .unwrap_or("und");
        Self::parse(lang, &content)
    }

    pub fn bundled_english() -> Self {
        Self::parse("en", BUNDLED_EN).expect("bundled english library is valid")
    }

    pub fn bundled_japanese() -> Self {
        Self::parse("ja", BUNDLED_JA).expect("bundled japanese library is valid")
    }

    pub fn bundled() -> Vec<Self> {
        vec![Self::bundled_english(), Self::bundled_japanese()]
    }
}

/// Compiled matcher over one or more term libraries.
///
/// Latin terms match case-insensitively on word boundaries; terms containing
/// CJK characters match as raw substrings.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    regex: Option<Regex>,
}

impl TermMatcher {
    pub fn new(libraries: &[TermLibrary]) -> Self {
        let mut alternatives: Vec<String> = Vec::new();
        for term in libraries.iter().flat_map(|l| l.terms.iter()) {
            alternatives.push(term_pattern(term));
        }
        // Longer alternatives first so reported matches are the most specific.
        alternatives.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        alternatives.dedup();
        let regex = if alternatives.is_empty() {
            None
        } else {
            let pattern = format!("(?i)(?:{})", alternatives.join("|"));
            Some(Regex::new(&pattern).expect("escaped term pattern compiles"))
        };
        TermMatcher { regex }
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.as_ref().is_some_and(|r| r.is_match(text))
    }

    /// The first matched term occurrence, as it appears in `text`.
    pub fn first_match<'t>(&self, text: &'t str) -> Option<&'t str> {
        self.regex.as_ref()?.find(text).map(|m| m.as_str())
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn term_pattern(term: &str) -> String {
    let escaped = regex::escape(term);
    match detect_script(term) {
        ScriptHint::Cjk | ScriptHint::Mixed => escaped,
        ScriptHint::Latin | ScriptHint::Unknown => {
            let lead = if term.chars().next().is_some_and(is_word_char) {
                r"\b"
            } else {
                ""
            };
            let tail = if term.chars().last().is_some_and(is_word_char) {
                r"\b"
            } else {
                ""
            };
            format!("{lead}{escaped}{tail}")
        }
    }
}

/// Optional extra constraints applied before the term filter.
#[derive(Debug, Clone, Default)]
pub struct FilterOptions {
    /// When non-empty, a record must also contain one of these keywords
    /// (e.g. the collection keyword "earthquake").
    pub require_keywords: Vec<String>,
}

/// Keeps records whose text contains at least one library term. Order is
/// preserved.
pub fn filter_damage_related(corpus: &[TweetRecord], libraries: &[TermLibrary]) -> Vec<TweetRecord> {
    filter_with_options(corpus, libraries, &FilterOptions::default())
}

pub fn filter_with_options(
    corpus: &[TweetRecord],
    libraries: &[TermLibrary],
    options: &FilterOptions,
) -> Vec<TweetRecord> {
    let matcher = TermMatcher::new(libraries);
    let keyword_matcher = if options.require_keywords.is_empty() {
        None
    } else {
        let lib = TermLibrary::new("keywords", options.require_keywords.iter().cloned()).ok();
        lib.map(|l| TermMatcher::new(std::slice::from_ref(&l)))
    };
    corpus
        .iter()
        .filter(|r| keyword_matcher.as_ref().is_none_or(|k| k.is_match(&r.text)))
        .filter(|r| matcher.is_match(&r.text))
        .cloned()
        .collect()
}
