//! The run configuration file: one JSON document, paths relative to the
//! file's own directory.
//!
//! ```json
//! {
//!   "event": "ridgecrest_2019",
//!   "backends": [{"name": "qwen", "base_url": "https://host/v1", "model_id": "qwen-2.5-vl-7b", "mode": "live"}],
//!   "backend": "qwen",
//!   "modality": "fusion",
//!   "prompt_version": "v1",
//!   "parallelism": 4,
//!   "transcript": "runs/qwen.jsonl"
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use quake3m::assess::PipelineConfig;
use quake3m::geo::EventConfig;
use quake3m::mllm::{BackendMode, BackendProfile};
use quake3m::prompts::{Modality, PromptVersion};

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EventSpec {
    Preset(String),
    Custom(EventConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub event: EventSpec,
    pub backends: Vec<BackendProfile>,
    /// Name of the backend to use; defaults to the first one.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default = "default_modality")]
    pub modality: String,
    #[serde(default = "default_version")]
    pub prompt_version: String,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    #[serde(default)]
    pub recheck_filter: bool,
    /// Extra term libraries for `recheck_filter`.
    #[serde(default)]
    pub terms: Vec<PathBuf>,
    /// Script rules for a backend in script mode.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Replay source in replay mode. In live and script mode responses are
    /// also recorded here, so an interrupted run resumes from it.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
}

fn default_modality() -> String {
    "fusion".into()
}

fn default_version() -> String {
    "v1".into()
}

fn one() -> usize {
    1
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub backend: Option<String>,
    pub modality: Option<String>,
    pub prompt_version: Option<String>,
    pub parallelism: Option<usize>,
}

/// A validated configuration with absolute paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub terms: Vec<PathBuf>,
    pub script: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
}

pub fn preset(name: &str) -> Option<EventConfig> {
    match name {
        "ridgecrest_2019" => Some(EventConfig::ridgecrest_2019()),
        "fukushima_2021" => Some(EventConfig::fukushima_2021()),
        _ => None,
    }
}

/// Loads and checks a configuration, reporting every problem found.
pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    let file: ConfigFile = serde_json::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(file, base, overrides)
}

fn resolve(file: ConfigFile, base: &Path, overrides: &Overrides) -> Result<RunConfig, Vec<String>> {
    let mut problems = Vec::new();
    let rel = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

    let event = match &file.event {
        EventSpec::Preset(name) => preset(name).unwrap_or_else(|| {
            problems.push(format!(
                "event: unknown preset {name:?} (ridgecrest_2019, fukushima_2021)"
            ));
            EventConfig::ridgecrest_2019()
        }),
        EventSpec::Custom(e) => e.clone(),
    };

    let wanted = overrides.backend.clone().or(file.backend.clone());
    let backend = match &wanted {
        Some(name) => file.backends.iter().find(|b| &b.name == name).cloned(),
        None => file.backends.first().cloned(),
    };
    let backend = backend.unwrap_or_else(|| {
        problems.push(match &wanted {
            Some(name) => format!("backend {name:?} is not defined in backends"),
            None => "backends is empty".to_string(),
        });
        BackendProfile::scripted("unset", "unset")
    });

    let modality_text = overrides.modality.as_ref().unwrap_or(&file.modality);
    let modality = modality_text.parse::<Modality>().unwrap_or_else(|e| {
        problems.push(format!("modality: {e}"));
        Modality::Fusion
    });
    let version_text = overrides.prompt_version.as_ref().unwrap_or(&file.prompt_version);
    let prompt_version = version_text.parse::<PromptVersion>().unwrap_or_else(|e| {
        problems.push(format!("prompt_version: {e}"));
        PromptVersion::V1
    });

    let script = file.script.as_ref().map(rel);
    let transcript = file.transcript.as_ref().map(rel);
    let terms: Vec<PathBuf> = file.terms.iter().map(rel).collect();
    match backend.mode {
        BackendMode::Script if script.is_none() => problems.push(format!(
            "backend {:?} is in script mode but no script is configured",
            backend.name
        )),
        BackendMode::Replay if transcript.is_none() => problems.push(format!(
            "backend {:?} is in replay mode but no transcript is configured",
            backend.name
        )),
        BackendMode::Replay if transcript.as_ref().is_some_and(|t| !t.is_file()) => problems.push(format!(
            "transcript {} does not exist",
            transcript.as_ref().unwrap().display()
        )),
        _ => {}
    }
    if let Some(s) = script.as_ref().filter(|s| !s.is_file()) {
        problems.push(format!("script {} does not exist", s.display()));
    }
    for t in terms.iter().filter(|t| !t.is_file()) {
        problems.push(format!("term library {} does not exist", t.display()));
    }

    let mut pipeline = PipelineConfig::new(event, backend, modality, prompt_version);
    pipeline.parallelism = overrides.parallelism.unwrap_or(file.parallelism);
    pipeline.gazetteer = file.gazetteer.as_ref().map(rel);
    pipeline.recheck_filter = file.recheck_filter;
    problems.extend(pipeline.problems());

    if problems.is_empty() {
        Ok(RunConfig {
            pipeline,
            terms,
            script,
            transcript,
        })
    } else {
        Err(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> ConfigFile {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn minimal_script_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rules.json"), "{}").unwrap();
        let file = parse(
            r#"{"event": "ridgecrest_2019", "script": "rules.json",
                "backends": [{"name": "mock", "model_id": "m", "mode": "script"}]}"#,
        );
        let cfg = resolve(file, dir.path(), &Overrides::default()).unwrap();
        assert_eq!(cfg.script.unwrap(), dir.path().join("rules.json"));
        assert_eq!(cfg.pipeline.modality, Modality::Fusion);
        assert_eq!(cfg.pipeline.parallelism, 1);
    }

    #[test]
    fn all_problems_are_reported() {
        let file = parse(
            r#"{"event": "atlantis", "modality": "smell", "prompt_version": "v9", "parallelism": 0,
                "backends": [{"name": "live", "model_id": "", "mode": "live"}]}"#,
        );
        let problems = resolve(file, Path::new("."), &Overrides::default()).unwrap_err();
        let joined = problems.join("\n");
        for needle in [
            "atlantis",
            "modality",
            "prompt_version",
            "model_id",
            "base_url",
            "parallelism",
        ] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
    }

    #[test]
    fn overrides_win() {
        let file = parse(
            r#"{"event": "fukushima_2021", "transcript": "t.jsonl",
                "backends": [{"name": "a", "model_id": "m", "mode": "live", "base_url": "https://x"},
                             {"name": "b", "model_id": "n", "mode": "live", "base_url": "https://y"}]}"#,
        );
        let overrides = Overrides {
            backend: Some("b".into()),
            modality: Some("text".into()),
            prompt_version: Some("v4".into()),
            parallelism: Some(3),
        };
        let cfg = resolve(file, Path::new("/base"), &overrides).unwrap();
        assert_eq!(cfg.pipeline.backend.name, "b");
        assert_eq!(cfg.pipeline.modality, Modality::TextOnly);
        assert_eq!(cfg.pipeline.prompt_version, PromptVersion::V4);
        assert_eq!(cfg.pipeline.parallelism, 3);
        assert_eq!(cfg.transcript.unwrap(), PathBuf::from("/base/t.jsonl"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            serde_json::from_str::<ConfigFile>(r#"{"event": "ridgecrest_2019", "backends": [], "modalty": "x"}"#)
                .is_err()
        );
    }
}
