//! Earthquake damage assessment from social-media posts with multimodal
//! language models.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] loads archived posts and keeps the damage-related ones.
//! * [`geo`] resolves where a post came from and how far it is from the
//!   epicenter.
//! * [`mllm`] talks to a chat-completion backend (live, replayed or scripted).
//! * [`prompts`] renders the location, event and damage prompts and parses
//!   the model's JSON verdicts.
//! * [`assess`] runs the per-post stages and aggregates results per city.
//! * [`validate`] compares the aggregates against "Did You Feel It?" intensity
//!   data and computes the robustness statistics.

pub mod assess;
pub mod corpus;
pub mod geo;
pub mod mllm;
pub mod prompts;
pub mod validate;

pub use assess::{AssessmentRecord, CityAggregate, Outcome, Pipeline, PipelineConfig};
pub use corpus::{MediaRef, ScriptHint, TermLibrary, TweetRecord};
pub use geo::{EventConfig, Gazetteer, GeoPoint, Granularity, LocationTier, ResolvedLocation};
pub use mllm::{BackendMode, BackendProfile, ChatRequest, ChatResponse, Client};
pub use prompts::{DamageType, DamageVerdict, Modality, PromptVersion};
