//! Prompt rendering and response parsing for the three model stages.

mod parse;
pub mod templates;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::corpus::TweetRecord;
use crate::geo::{EventConfig, NO_LOCATION};
use crate::mllm::ChatRequest;

pub use parse::extract_object;

/// Appended to a damage request when the first answer could not be parsed.
pub const REASK_INSTRUCTION: &str = "Return only the JSON object.";

pub const MAX_DAMAGE_LEVEL: u8 = 10;

const EVENT_SLOT: &str = "<2019 ridegcrest>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVersion {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
}

/// Lines of a damage template that refer to one input channel.
struct ChannelLines {
    image: &'static str,
    tweet: &'static str,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 7] = [
        PromptVersion::V1,
        PromptVersion::V2,
        PromptVersion::V3,
        PromptVersion::V4,
        PromptVersion::V5,
        PromptVersion::V6,
        PromptVersion::V7,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PromptVersion::V1 => "v1",
            PromptVersion::V2 => "v2",
            PromptVersion::V3 => "v3",
            PromptVersion::V4 => "v4",
            PromptVersion::V5 => "v5",
            PromptVersion::V6 => "v6",
            PromptVersion::V7 => "v7",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            PromptVersion::V1 => templates::FUSION,
            PromptVersion::V2 => templates::V2,
            PromptVersion::V3 => templates::V3,
            PromptVersion::V4 => templates::V4,
            PromptVersion::V5 => templates::V5,
            PromptVersion::V6 => templates::V6,
            PromptVersion::V7 => templates::V7,
        }
    }

    fn channel_lines(self) -> ChannelLines {
        let (image, tweet) = match self {
            PromptVersion::V1 => (
                "Image Description:\nPlease analyze the image to assess the severity of the earthquake's damage based on MMI Scale. \n\n",
                "Text Description:\n{tweet}\n\n",
            ),
            PromptVersion::V2 => (
                "Image Description:\nPlease analyze the image to assess visible earthquake damage.\n\n",
                "Text Description:\n{tweet}\n\n",
            ),
            PromptVersion::V3 => (
                "Image Description:\nAnalyze for any visible earthquake damage-structural collapse, debris, road cracks, etc.\n\n",
                "Text Description:\n{tweet}\n\n",
            ),
            PromptVersion::V4 => ("Image: [image provided]\n", "Text: {tweet}\n"),
            PromptVersion::V5 | PromptVersion::V6 => ("Image: [Analyze the image]\n", "Tweet: {tweet}\n"),
            PromptVersion::V7 => ("Image Content: [image provided]\n", "Tweet Content: {tweet}\n"),
        };
        ChannelLines { image, tweet }
    }

    /// Template text for one modality, before `{tweet}` substitution.
    pub fn template_for(self, modality: Modality) -> String {
        let lines = self.channel_lines();
        match (self, modality) {
            (_, Modality::Fusion) => self.template().to_string(),
            (PromptVersion::V1, Modality::ImageOnly) => templates::IMAGE_ONLY.to_string(),
            (_, Modality::ImageOnly) => self.template().replacen(lines.tweet, "", 1),
            (_, Modality::TextOnly) => self.template().replacen(lines.image, "", 1),
        }
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PromptVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptVersion::ALL
            .into_iter()
            .find(|v| v.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown prompt version {s:?} (expected v1..v7)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextOnly,
    ImageOnly,
    Fusion,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::TextOnly => "text_only",
            Modality::ImageOnly => "image_only",
            Modality::Fusion => "fusion",
        }
    }

    pub fn needs_image(self) -> bool {
        self != Modality::TextOnly
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "text_only" => Ok(Modality::TextOnly),
            "image" | "image_only" => Ok(Modality::ImageOnly),
            "fusion" => Ok(Modality::Fusion),
            other => Err(format!("unknown modality {other:?} (expected text, image or fusion)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DamageType {
    Interior,
    Exterior,
    Both,
    None,
}

impl DamageType {
    pub const ALL: [DamageType; 4] = [
        DamageType::Interior,
        DamageType::Exterior,
        DamageType::Both,
        DamageType::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DamageType::Interior => "Interior",
            DamageType::Exterior => "Exterior",
            DamageType::Both => "Both",
            DamageType::None => "None",
        }
    }

    pub fn is_exterior(self) -> bool {
        matches!(self, DamageType::Exterior | DamageType::Both)
    }
}

impl FromStr for DamageType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DamageType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown damage_type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageVerdict {
    pub human_impact: u8,
    pub damage_type: DamageType,
    /// 0 means the model saw no damage signal; 1..=10 is the MMI level.
    pub damage_level: u8,
    pub confidence: f64,
    pub reasoning: String,
    pub voted_candidate: Option<String>,
}

impl DamageVerdict {
    /// Level used when joining with intensity data: 0 counts as MMI 1.
    pub fn mmi(&self) -> u8 {
        self.damage_level.max(1)
    }

    /// The verdict as the object the prompts ask for.
    pub fn to_canonical_json(&self) -> String {
        let mut map = Map::new();
        map.insert("human_impact".into(), json!(self.human_impact));
        map.insert("damage_type".into(), json!(self.damage_type.as_str()));
        map.insert("damage_level".into(), json!(self.damage_level));
        map.insert("reasoning".into(), json!(self.reasoning));
        map.insert("confidence".into(), json!(self.confidence));
        // serde_json maps sort keys; write fields in schema order by hand
        let order = ["human_impact", "damage_type", "damage_level", "reasoning", "confidence"];
        let body = order
            .iter()
            .map(|k| format!("{}:{}", json!(k), map[*k]))
            .collect::<Vec<_>>()
            .join(",");
        format!("{{{body}}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationVerdict {
    /// Place name, or [`NO_LOCATION`].
    pub location: String,
    pub reasoning: String,
}

impl LocationVerdict {
    pub fn is_no(&self) -> bool {
        self.location == NO_LOCATION
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventAnswer {
    Yes,
    No,
}

impl EventAnswer {
    pub fn as_str(self) -> &'static str {
        match self {
            EventAnswer::Yes => "Yes",
            EventAnswer::No => "No",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventVerdict {
    pub is_event_related: EventAnswer,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no JSON object found in model output")]
    NoObjectFound { raw: String },
    #[error("field {field}: {reason}")]
    SchemaViolation { field: String, reason: String, raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::NoObjectFound { raw } | ParseError::SchemaViolation { raw, .. } => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("tweet {tweet_id}: {modality} input needs an image but the record has none")]
    MissingImage { tweet_id: String, modality: Modality },
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{(tweet|longitude|latitude|location)\}").expect("placeholder regex"));

/// Single-pass substitution, so values that contain placeholder text are
/// left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    PLACEHOLDER
        .replace_all(template, |caps: &regex::Captures| {
            let key = &caps[1];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

pub fn render_location_prompt(record: &TweetRecord) -> String {
    let (lon, lat) = match record.geotag {
        Some(p) => (p.lon.to_string(), p.lat.to_string()),
        None => ("None".to_string(), "None".to_string()),
    };
    let location = record.profile_location.as_deref().unwrap_or("None");
    fill(
        templates::LOCATION,
        &[
            ("longitude", &lon),
            ("latitude", &lat),
            ("tweet", &record.text),
            ("location", location),
        ],
    )
}

pub fn render_event_prompt(record: &TweetRecord, event: &EventConfig) -> String {
    let template = templates::EVENT.replacen(EVENT_SLOT, &event.event_name, 1);
    fill(&template, &[("tweet", &record.text)])
}

/// Damage prompt text without image parts.
pub fn damage_prompt_text(tweet: &str, modality: Modality, version: PromptVersion) -> String {
    fill(&version.template_for(modality), &[("tweet", tweet)])
}

pub fn render_damage_prompt(
    record: &TweetRecord,
    modality: Modality,
    version: PromptVersion,
) -> Result<ChatRequest, PromptError> {
    let images: Vec<_> = record.images().collect();
    if modality.needs_image() && images.is_empty() {
        return Err(PromptError::MissingImage {
            tweet_id: record.id.clone(),
            modality,
        });
    }
    let mut request = ChatRequest::text(damage_prompt_text(&record.text, modality, version));
    if modality.needs_image() {
        for image in images {
            request = request.with_image(image.uri.clone());
        }
    }
    Ok(request)
}

fn violation(field: &str, reason: impl Into<String>, raw: &str) -> ParseError {
    ParseError::SchemaViolation {
        field: field.to_string(),
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// Looks a field up ignoring key case and surrounding whitespace.
fn field<'m>(map: &'m Map<String, Value>, name: &str) -> Option<&'m Value> {
    map.get(name).or_else(|| {
        map.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })
}

fn object_of(raw: &str) -> Result<Map<String, Value>, ParseError> {
    extract_object(raw).ok_or_else(|| ParseError::NoObjectFound { raw: raw.to_string() })
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(
            items
                .iter()
                .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn number_of(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
}

static VOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)voted candidate\s*[:\-]\s*([^.\n]+)").expect("voted regex"));

pub fn parse_damage_response(raw: &str) -> Result<DamageVerdict, ParseError> {
    let map = object_of(raw)?;
    let get = |name: &str| field(&map, name).ok_or_else(|| violation(name, "missing", raw));

    let human_impact = match get("human_impact")? {
        Value::Bool(b) => u8::from(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "1" | "yes" | "true" => 1,
            "0" | "no" | "false" => 0,
            other => return Err(violation("human_impact", format!("{other:?} is not 0 or 1"), raw)),
        },
        v => match number_of(v) {
            Some(0.0) => 0,
            Some(1.0) => 1,
            _ => return Err(violation("human_impact", format!("{v} is not 0 or 1"), raw)),
        },
    };

    let damage_type = match get("damage_type")? {
        Value::Null => DamageType::None,
        Value::String(s) => s.parse().map_err(|e: String| violation("damage_type", e, raw))?,
        v => return Err(violation("damage_type", format!("{v} is not a string"), raw)),
    };

    let level_value = get("damage_level")?;
    let level = number_of(level_value)
        .filter(|x| x.fract() == 0.0)
        .ok_or_else(|| violation("damage_level", format!("{level_value} is not an integer"), raw))?;
    if !(0.0..=f64::from(MAX_DAMAGE_LEVEL)).contains(&level) {
        return Err(violation(
            "damage_level",
            format!("{level} outside 0..={MAX_DAMAGE_LEVEL}"),
            raw,
        ));
    }

    let conf_value = get("confidence")?;
    let confidence = match conf_value {
        Value::String(s) if s.trim().ends_with('%') => s
            .trim()
            .trim_end_matches('%')
            .trim()
            .parse::<f64>()
            .ok()
            .map(|x| x / 100.0),
        v => number_of(v),
    }
    .filter(|x| x.is_finite())
    .ok_or_else(|| violation("confidence", format!("{conf_value} is not a number"), raw))?
    .clamp(0.0, 1.0);

    let reasoning_value = get("reasoning")?;
    let reasoning = as_text(reasoning_value)
        .ok_or_else(|| violation("reasoning", format!("{reasoning_value} is not text"), raw))?;

    let voted_candidate = field(&map, "voted_candidate")
        .and_then(as_text)
        .or_else(|| VOTED.captures(&reasoning).map(|c| c[1].trim().to_string()));

    Ok(DamageVerdict {
        human_impact,
        damage_type,
        damage_level: level as u8,
        confidence,
        reasoning,
        voted_candidate,
    })
}

pub fn parse_location_response(raw: &str) -> Result<LocationVerdict, ParseError> {
    let map = object_of(raw)?;
    let location = match field(&map, "location") {
        None => return Err(violation("location", "missing", raw)),
        Some(Value::Null) => NO_LOCATION.to_string(),
        Some(Value::String(s)) => {
            let s = s.trim();
            if s.is_empty() || s.eq_ignore_ascii_case("no") {
                NO_LOCATION.to_string()
            } else {
                s.to_string()
            }
        }
        Some(v) => return Err(violation("location", format!("{v} is not a string"), raw)),
    };
    let reasoning = field(&map, "reasoning").and_then(as_text).unwrap_or_default();
    Ok(LocationVerdict { location, reasoning })
}

pub fn parse_event_response(raw: &str) -> Result<EventVerdict, ParseError> {
    let map = object_of(raw)?;
    let answer = match field(&map, "is_event_related") {
        None => return Err(violation("is_event_related", "missing", raw)),
        Some(Value::Bool(true)) => EventAnswer::Yes,
        Some(Value::Bool(false)) => EventAnswer::No,
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "true" => EventAnswer::Yes,
            "no" | "false" => EventAnswer::No,
            other => {
                return Err(violation(
                    "is_event_related",
                    format!("{other:?} is not Yes or No"),
                    raw,
                ))
            }
        },
        Some(v) => return Err(violation("is_event_related", format!("{v} is not Yes or No"), raw)),
    };
    let reasoning = field(&map, "reasoning").and_then(as_text).unwrap_or_default();
    Ok(EventVerdict {
        is_event_related: answer,
        reasoning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::mllm::UserPart;
    use proptest::prelude::*;

    const LLAVA: &str = r#"{"human_impact":0,"damage_type":"Exterior","damage_level":3,"reasoning":"The image shows a window with visible damage","confidence":0.8}"#;

    fn with_image(text: &str) -> TweetRecord {
        TweetRecord::new("t1", text).with_media("img/window.jpg")
    }

    #[test]
    fn registry_has_seven_distinct_templates() {
        let texts: std::collections::HashSet<_> = PromptVersion::ALL.iter().map(|v| v.template()).collect();
        assert_eq!(texts.len(), 7);
        assert!(templates::FUSION.contains("damage accessment experts"));
        assert!(templates::V4.starts_with("Analyze the tweet"));
        for v in PromptVersion::ALL {
            assert_eq!(v.id().parse::<PromptVersion>().unwrap(), v);
        }
    }

    #[test]
    fn channel_lines_exist_in_their_templates() {
        for v in PromptVersion::ALL {
            let lines = v.channel_lines();
            assert_eq!(v.template().matches(lines.image).count(), 1, "{v} image line");
            assert_eq!(v.template().matches(lines.tweet).count(), 1, "{v} tweet line");
            assert!(!v.template_for(Modality::ImageOnly).contains("{tweet}"), "{v}");
            assert!(v.template_for(Modality::TextOnly).contains("{tweet}"), "{v}");
        }
    }

    #[test]
    fn location_prompt_substitution() {
        let r = TweetRecord::new("1", "shaking {location} here").with_geotag(GeoPoint::new(34.05, -118.24).unwrap());
        let p = render_location_prompt(&r);
        assert!(p.contains("Longitude: -118.24\nLatitude: 34.05\n"));
        assert!(p.contains("Tweet Text: shaking {location} here\nLocation: None\n"));
        assert_eq!(p, render_location_prompt(&r));

        let bare = render_location_prompt(&TweetRecord::new("2", "x").with_profile_location("Vegas"));
        assert!(bare.contains("Longitude: None\nLatitude: None\n"));
        assert!(bare.contains("Location: Vegas\n"));
        assert!(bare.contains("\"location\": \"<Provide final location information>\""));
    }

    #[test]
    fn event_prompt_names_the_event() {
        let r = TweetRecord::new("1", "windows broke");
        let p = render_event_prompt(&r, &EventConfig::ridgecrest_2019());
        assert!(p.contains("related to 2019 Ridgecrest earthquake"));
        assert!(!p.contains("ridegcrest"));
        assert!(p.contains("Tweet Text: windows broke\n"));
        assert!(p.contains("-I knew those Trump tanks would cause damage.  #earthquake"));
        let j = render_event_prompt(&r, &EventConfig::fukushima_2021());
        assert!(j.contains("2021 Fukushima"));
    }

    #[test]
    fn damage_prompt_modalities() {
        let r = with_image("My friend's window got damaged in El Monte");
        let fusion = render_damage_prompt(&r, Modality::Fusion, PromptVersion::V1).unwrap();
        assert_eq!(fusion.image_count(), 1);
        assert!(fusion.text_content().contains("Text Description:\nMy friend's window"));

        let text = render_damage_prompt(&r, Modality::TextOnly, PromptVersion::V1).unwrap();
        assert_eq!(text.image_count(), 0);
        assert!(!text.text_content().contains("Image Description"));

        let image = render_damage_prompt(&r, Modality::ImageOnly, PromptVersion::V1).unwrap();
        assert_eq!(image.text_content(), templates::IMAGE_ONLY);
        assert!(matches!(image.user_parts[1], UserPart::Image { .. }));

        let v2 = render_damage_prompt(&r, Modality::Fusion, PromptVersion::V2).unwrap();
        assert!(v2.text_content().starts_with("Task:"));
        assert!(v2.text_content().contains("follow these three steps"));

        let err =
            render_damage_prompt(&TweetRecord::new("9", "x"), Modality::ImageOnly, PromptVersion::V3).unwrap_err();
        assert_eq!(
            err,
            PromptError::MissingImage {
                tweet_id: "9".into(),
                modality: Modality::ImageOnly
            }
        );
    }

    #[test]
    fn parses_the_llava_row() {
        let v = parse_damage_response(LLAVA).unwrap();
        assert_eq!(
            (v.damage_type, v.damage_level, v.confidence, v.human_impact),
            (DamageType::Exterior, 3, 0.8, 0)
        );
        let fenced = format!("```json\n{LLAVA}\n```\nThe window is cracked.");
        assert_eq!(parse_damage_response(&fenced).unwrap(), v);
    }

    #[test]
    fn coercions() {
        let v = parse_damage_response(
            "{'human_impact': '1', 'damage_type': 'interior', 'damage_level': '4.0', 'reasoning': ['a', 'b'], 'confidence': '90%'}",
        )
        .unwrap();
        assert_eq!(v.human_impact, 1);
        assert_eq!(v.damage_type, DamageType::Interior);
        assert_eq!(v.damage_level, 4);
        assert_eq!(v.reasoning, "a b");
        assert!((v.confidence - 0.9).abs() < 1e-12);

        let clamped = parse_damage_response(
            r#"{"human_impact":0,"damage_type":"None","damage_level":0,"reasoning":"","confidence":1.7}"#,
        )
        .unwrap();
        assert_eq!(clamped.confidence, 1.0);
        assert_eq!(clamped.mmi(), 1);
    }

    #[test]
    fn schema_violations() {
        let high = r#"{"human_impact":0,"damage_type":"Exterior","damage_level":15,"reasoning":"x","confidence":0.8}"#;
        assert!(matches!(
            parse_damage_response(high),
            Err(ParseError::SchemaViolation { ref field, .. }) if field == "damage_level"
        ));
        let kind = r#"{"human_impact":0,"damage_type":"Roof","damage_level":5,"reasoning":"x","confidence":0.8}"#;
        assert!(matches!(
            parse_damage_response(kind),
            Err(ParseError::SchemaViolation { ref field, .. }) if field == "damage_type"
        ));
        let err = parse_damage_response("I cannot help").unwrap_err();
        assert_eq!(
            err,
            ParseError::NoObjectFound {
                raw: "I cannot help".into()
            }
        );
        assert_eq!(err.raw(), "I cannot help");
        let missing = parse_damage_response(r#"{"human_impact":0}"#).unwrap_err();
        assert!(matches!(missing, ParseError::SchemaViolation { ref field, .. } if field == "damage_type"));
    }

    #[test]
    fn voted_candidate_is_opportunistic() {
        let v = parse_damage_response(
            r#"{"human_impact":1,"damage_type":"Both","damage_level":4,"reasoning":"Voted candidate: Text and Image. Broken window","confidence":0.9}"#,
        )
        .unwrap();
        assert_eq!(v.voted_candidate.as_deref(), Some("Text and Image"));
        assert_eq!(parse_damage_response(LLAVA).unwrap().voted_candidate, None);
    }

    #[test]
    fn location_and_event_answers() {
        let l = parse_location_response(r#"{"reasoning":"mentions El Monte","location":"El Monte, CA"}"#).unwrap();
        assert_eq!(l.location, "El Monte, CA");
        assert!(parse_location_response(r#"{"reasoning":"none","location":"no"}"#)
            .unwrap()
            .is_no());
        assert!(parse_location_response(r#"{"location": null}"#).unwrap().is_no());
        let e = parse_event_response(r#"{"reasoning":"...","is_event_related":"yes"}"#).unwrap();
        assert_eq!(e.is_event_related, EventAnswer::Yes);
        assert!(parse_event_response(r#"{"is_event_related":"maybe"}"#).is_err());
    }

    fn arb_verdict() -> impl Strategy<Value = DamageVerdict> {
        (
            0u8..=1,
            0usize..4,
            0u8..=10,
            0.0f64..=1.0,
            "[ -~\\p{Han}\\n\"'{}]{0,60}",
        )
            .prop_map(|(h, t, l, c, r)| DamageVerdict {
                human_impact: h,
                damage_type: DamageType::ALL[t],
                damage_level: l,
                confidence: c,
                reasoning: r,
                voted_candidate: None,
            })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(v in arb_verdict()) {
            let text = v.to_canonical_json();
            let mut back = parse_damage_response(&text).unwrap();
            back.voted_candidate = None;
            prop_assert_eq!(back, v);
        }

        #[test]
        fn parsers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let s = String::from_utf8_lossy(&bytes);
            let _ = parse_damage_response(&s);
            let _ = parse_location_response(&s);
            let _ = parse_event_response(&s);
        }
    }
}
