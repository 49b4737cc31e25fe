//! Gazetteer geocoding, tiered location resolution and epicentral distance.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TweetRecord;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Maximum distance for turning a geotag into a gazetteer place name.
pub const REVERSE_GEOCODE_MAX_KM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid coordinates ({lat}, {lon})")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("cannot read gazetteer {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gazetteer line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
            Ok(GeoPoint { lat, lon })
        } else {
            Err(GeoError::InvalidPoint { lat, lon })
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

impl FromStr for GeoPoint {
    type Err = GeoError;

    /// Parses `"lat,lon"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeoError::InvalidPoint {
            lat: f64::NAN,
            lon: f64::NAN,
        };
        let (lat, lon) = s.split_once(',').ok_or_else(bad)?;
        let lat = lat.trim().parse().map_err(|_| bad())?;
        let lon = lon.trim().parse().map_err(|_| bad())?;
        GeoPoint::new(lat, lon)
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    // rounding can push h a hair outside [0, 1]
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Place granularity, ordered finest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Poi,
    Neighborhood,
    City,
    County,
    State,
    Country,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "poi" => Granularity::Poi,
            "neighborhood" | "neighbourhood" => Granularity::Neighborhood,
            "city" => Granularity::City,
            "county" => Granularity::County,
            "state" | "prefecture" => Granularity::State,
            "country" => Granularity::Country,
            other => return Err(format!("unknown granularity {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationTier {
    Geotag,
    Content,
    Profile,
    Unresolved,
}

impl LocationTier {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationTier::Geotag => "geotag",
            LocationTier::Content => "content",
            LocationTier::Profile => "profile",
            LocationTier::Unresolved => "unresolved",
        }
    }
}

/// Where a post was resolved to. `granularity` is absent for unresolved
/// locations and for records reloaded from assessment output.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLocation {
    pub name: String,
    pub point: Option<GeoPoint>,
    pub tier: LocationTier,
    pub granularity: Option<Granularity>,
}

impl ResolvedLocation {
    pub fn unresolved() -> Self {
        ResolvedLocation {
            name: String::new(),
            point: None,
            tier: LocationTier::Unresolved,
            granularity: None,
        }
    }

    pub fn is_resolved(&self) -> bool {
        self.tier != LocationTier::Unresolved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerEntry {
    pub name: String,
    pub aliases: Vec<String>,
    pub point: GeoPoint,
    pub granularity: Granularity,
    /// ISO 3166 alpha-2.
    pub country: String,
}

/// Immutable place-name index.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    index: HashMap<String, Vec<usize>>,
}

const BUNDLED_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");

fn normalize_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Gazetteer {
    pub fn from_entries(entries: Vec<GazetteerEntry>) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let mut keys = vec![normalize_key(&e.name)];
            // "El Monte, CA" is also reachable as "El Monte".
            if let Some((head, _)) = e.name.split_once(',') {
                keys.push(normalize_key(head));
            }
            keys.extend(e.aliases.iter().map(|a| normalize_key(a)));
            keys.sort();
            keys.dedup();
            for k in keys.into_iter().filter(|k| !k.is_empty()) {
                index.entry(k).or_default().push(i);
            }
        }
        Gazetteer { entries, index }
    }

    /// Parses TSV rows `name, aliases(|-separated), lat, lon, granularity,
    /// country`. Blank lines and `#` comments are skipped.
    pub fn parse(content: &str) -> Result<Self, GeoError> {
        let mut entries = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: String| GeoError::Parse { line: line_no, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(err(format!("expected 6 columns, found {}", cols.len())));
            }
            let name = cols[0].trim();
            if name.is_empty() {
                return Err(err("empty name".into()));
            }
            let lat: f64 = cols[2].trim().parse().map_err(|_| err("bad latitude".into()))?;
            let lon: f64 = cols[3].trim().parse().map_err(|_| err("bad longitude".into()))?;
            let point = GeoPoint::new(lat, lon).map_err(|e| err(e.to_string()))?;
            let granularity = cols[4].parse().map_err(err)?;
            entries.push(GazetteerEntry {
                name: name.to_string(),
                aliases: cols[1]
                    .split('|')
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .map(str::to_string)
                    .collect(),
                point,
                granularity,
                country: cols[5].trim().to_ascii_uppercase(),
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let content = fs::read_to_string(path).map_err(|source| GeoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }

    /// The bundled Southern California / Nevada / Tohoku gazetteer.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GAZETTEER).expect("bundled gazetteer is valid")
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive exact lookup on names and aliases. If the full string
    /// is unknown and contains a comma, the part before the first comma is
    /// tried. Ties prefer finer granularity, then `prefer_country`, then the
    /// lexicographically smallest name.
    pub fn geocode(&self, name: &str, prefer_country: Option<&str>) -> Option<&GazetteerEntry> {
        let key = normalize_key(name);
        if key.is_empty() {
            return None;
        }
        let candidates = self.index.get(&key).or_else(|| {
            let (head, _) = name.split_once(',')?;
            self.index.get(&normalize_key(head))
        })?;
        candidates.iter().map(|&i| &self.entries[i]).min_by(|a, b| {
            let in_country = |e: &GazetteerEntry| prefer_country.is_some_and(|c| e.country.eq_ignore_ascii_case(c));
            a.granularity
                .cmp(&b.granularity)
                .then_with(|| in_country(b).cmp(&in_country(a)))
                .then_with(|| a.name.cmp(&b.name))
        })
    }

    /// Nearest city-level entry within `max_km`.
    pub fn nearest_city(&self, point: GeoPoint, max_km: f64) -> Option<(&GazetteerEntry, f64)> {
        self.entries
            .iter()
            .filter(|e| e.granularity == Granularity::City)
            .map(|e| (e, haversine_km(point, e.point)))
            .filter(|(_, d)| *d <= max_km)
            .min_by(|(a, da), (b, db)| da.total_cmp(db).then_with(|| a.name.cmp(&b.name)))
    }
}

/// The event being assessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    pub event_name: String,
    pub epicenter: GeoPoint,
    /// ISO 3166 alpha-2; when set, places outside it do not resolve.
    #[serde(default)]
    pub country: Option<String>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl EventConfig {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.event_name.trim().is_empty() {
            return Err(GeoError::InvalidEvent("event name is empty".into()));
        }
        GeoPoint::new(self.epicenter.lat, self.epicenter.lon)?;
        if self.start >= self.end {
            return Err(GeoError::InvalidEvent("start must precede end".into()));
        }
        Ok(())
    }

    /// M7.1 Ridgecrest, California, July 2019.
    pub fn ridgecrest_2019() -> Self {
        EventConfig {
            event_name: "2019 Ridgecrest".into(),
            epicenter: GeoPoint {
                lat: 35.766,
                lon: -117.605,
            },
            country: Some("US".into()),
            start: Utc.with_ymd_and_hms(2019, 7, 4, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2019, 7, 11, 0, 0, 0).unwrap(),
        }
    }

    /// M7.3 off Fukushima, Japan, February 2021.
    pub fn fukushima_2021() -> Self {
        EventConfig {
            event_name: "2021 Fukushima".into(),
            epicenter: GeoPoint {
                lat: 37.730,
                lon: 141.595,
            },
            country: Some("JP".into()),
            start: Utc.with_ymd_and_hms(2021, 2, 13, 0, 0, 0).unwrap(),
            end: Utc.with_ymd_and_hms(2021, 2, 18, 0, 0, 0).unwrap(),
        }
    }
}

/// Sentinel the location prompt returns when nothing usable was found.
pub const NO_LOCATION: &str = "No";

/// Tiered resolution: geotag, then the model-extracted content location,
/// then the profile location. A raw geotag is never overridden.
pub fn resolve_tiered(
    record: &TweetRecord,
    content_name: Option<&str>,
    gazetteer: &Gazetteer,
    country: Option<&str>,
) -> ResolvedLocation {
    if let Some(point) = record.geotag {
        return match gazetteer.nearest_city(point, REVERSE_GEOCODE_MAX_KM) {
            Some((entry, _)) => ResolvedLocation {
                name: entry.name.clone(),
                point: Some(point),
                tier: LocationTier::Geotag,
                granularity: Some(Granularity::City),
            },
            None => ResolvedLocation {
                name: String::new(),
                point: Some(point),
                tier: LocationTier::Geotag,
                granularity: Some(Granularity::Poi),
            },
        };
    }
    let lookup = |name: &str| {
        gazetteer
            .geocode(name, country)
            .filter(|e| country.is_none_or(|c| e.country.eq_ignore_ascii_case(c)))
    };
    let content = content_name
        .map(str::trim)
        .filter(|n| !n.is_empty() && !n.eq_ignore_ascii_case(NO_LOCATION));
    if let Some(entry) = content.and_then(lookup) {
        return from_entry(entry, LocationTier::Content);
    }
    if let Some(entry) = record.profile_location.as_deref().and_then(lookup) {
        return from_entry(entry, LocationTier::Profile);
    }
    ResolvedLocation::unresolved()
}

fn from_entry(entry: &GazetteerEntry, tier: LocationTier) -> ResolvedLocation {
    ResolvedLocation {
        name: entry.name.clone(),
        point: Some(entry.point),
        tier,
        granularity: Some(entry.granularity),
    }
}
