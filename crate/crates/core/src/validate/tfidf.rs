//! Distinctive reasoning vocabulary per MMI bucket.
//!
//! Each bucket's reasoning texts form one document. `tf` is the raw count in
//! the bucket, `idf = ln(B / df)` over the `B` buckets.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::assess::{AssessmentRecord, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MmiBucket {
    pub label: String,
    pub lo: u8,
    pub hi: u8,
}

impl MmiBucket {
    pub fn new(lo: u8, hi: u8) -> Self {
        let label = if lo == hi {
            format!("{lo}")
        } else {
            format!("{lo}-{hi}")
        };
        MmiBucket { label, lo, hi }
    }

    pub fn contains(&self, level: u8) -> bool {
        (self.lo..=self.hi).contains(&level)
    }
}

/// One bucket per damage level 0..=10.
pub fn per_level_buckets() -> Vec<MmiBucket> {
    (0..=10).map(|l| MmiBucket::new(l, l)).collect()
}

/// Low / moderate / high bands: 0-3, 4-5, 6-9.
pub fn narrative_bands() -> Vec<MmiBucket> {
    vec![MmiBucket::new(0, 3), MmiBucket::new(4, 5), MmiBucket::new(6, 9)]
}

#[derive(Debug, Clone, Default)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(content: &str) -> Self {
        StopWords(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    /// Bundled English and Japanese lists.
    pub fn bundled() -> Self {
        let mut s = Self::parse(include_str!("../../data/stopwords.en.txt"));
        s.0.extend(Self::parse(include_str!("../../data/stopwords.ja.txt")).0);
        s
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

pub fn tokenize(text: &str, stop: &StopWords) -> Vec<String> {
    text.unicode_words()
        .map(str::to_lowercase)
        .filter(|w| !stop.contains(w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TfidfError {
    #[error("bucket {0} has no assessed records")]
    EmptyBucket(String),
    #[error("no buckets given")]
    NoBuckets,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketTerms {
    pub bucket: MmiBucket,
    pub documents: usize,
    pub terms: Vec<(String, f64)>,
}

/// Per-bucket document counts and every term's `tf * ln(B / df)` score,
/// including the zero scores of terms present in every bucket.
/// Documents in a bucket and its term scores.
pub type BucketScores = (usize, BTreeMap<String, f64>);

pub fn term_scores(
    records: &[AssessmentRecord],
    buckets: &[MmiBucket],
    stop: &StopWords,
) -> Result<Vec<BucketScores>, TfidfError> {
    if buckets.is_empty() {
        return Err(TfidfError::NoBuckets);
    }
    let mut counts: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); buckets.len()];
    let mut docs = vec![0usize; buckets.len()];
    for r in records.iter().filter(|r| r.outcome == Outcome::Assessed) {
        let Some(v) = &r.verdict else { continue };
        for (i, b) in buckets.iter().enumerate() {
            if b.contains(v.damage_level) {
                docs[i] += 1;
                for t in tokenize(&v.reasoning, stop) {
                    *counts[i].entry(t).or_insert(0) += 1;
                }
            }
        }
    }
    if let Some(i) = docs.iter().position(|d| *d == 0) {
        return Err(TfidfError::EmptyBucket(buckets[i].label.clone()));
    }
    let n_buckets = buckets.len() as f64;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &counts {
        for t in c.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    Ok(counts
        .iter()
        .zip(docs)
        .map(|(c, documents)| {
            let scores = c
                .iter()
                .map(|(t, &tf)| (t.clone(), tf as f64 * (n_buckets / df[t.as_str()] as f64).ln()))
                .collect();
            (documents, scores)
        })
        .collect())
}

/// Top-`k` terms per bucket by `tf * idf`, ties broken alphabetically.
/// Terms scoring 0 (present in every bucket) are never listed.
pub fn tfidf_by_mmi(
    records: &[AssessmentRecord],
    buckets: &[MmiBucket],
    top_k: usize,
    stop: &StopWords,
) -> Result<Vec<BucketTerms>, TfidfError> {
    let scores = term_scores(records, buckets, stop)?;
    Ok(buckets
        .iter()
        .zip(scores)
        .map(|(bucket, (documents, scores))| {
            let mut scored: Vec<(String, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored.truncate(top_k);
            BucketTerms {
                bucket: bucket.clone(),
                documents,
                terms: scored,
            }
        })
        .collect())
}

/// Buckets with at least one assessed record; used by the per-level default
/// where most levels are usually empty.
pub fn non_empty_buckets(records: &[AssessmentRecord], buckets: &[MmiBucket]) -> Vec<MmiBucket> {
    let levels: BTreeSet<u8> = records
        .iter()
        .filter(|r| r.outcome == Outcome::Assessed)
        .filter_map(|r| r.verdict.as_ref().map(|v| v.damage_level))
        .collect();
    buckets
        .iter()
        .filter(|b| levels.iter().any(|l| b.contains(*l)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::ResolvedLocation;
    use crate::prompts::{DamageType, DamageVerdict, EventAnswer, Modality, PromptVersion};

    fn rec(level: u8, reasoning: &str) -> AssessmentRecord {
        AssessmentRecord {
            tweet_id: String::new(),
            resolved: ResolvedLocation::unresolved(),
            event_related: Some(EventAnswer::Yes),
            verdict: Some(DamageVerdict {
                human_impact: 0,
                damage_type: DamageType::None,
                damage_level: level,
                confidence: 0.5,
                reasoning: reasoning.into(),
                voted_candidate: None,
            }),
            distance_km: None,
            model: String::new(),
            modality: Modality::TextOnly,
            prompt_version: PromptVersion::V1,
            outcome: Outcome::Assessed,
            diagnostic: None,
        }
    }

    #[test]
    fn shared_terms_score_zero_and_unique_terms_rank_first() {
        let records = [
            rec(2, "shaking felt"),
            rec(4, "shaking felt cracked"),
            rec(7, "shaking rockslides rockslides rockslides roadway"),
        ];
        let out = tfidf_by_mmi(&records, &narrative_bands(), 5, &StopWords::default()).unwrap();
        assert!(out.iter().all(|b| b.terms.iter().all(|(t, _)| t != "shaking")));
        let (top, score) = &out[2].terms[0];
        assert_eq!(top, "rockslides");
        assert!((score - 3.0 * 3f64.ln()).abs() < 1e-12);
        assert_eq!(out[2].terms[1].0, "roadway");
        // "felt" is in two of three buckets
        assert!((out[0].terms[0].1 - (1.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_bucket_is_an_error() {
        let err = tfidf_by_mmi(&[rec(2, "x")], &narrative_bands(), 5, &StopWords::default()).unwrap_err();
        assert_eq!(err, TfidfError::EmptyBucket("4-5".into()));
        assert_eq!(
            non_empty_buckets(&[rec(2, "x"), rec(9, "y")], &per_level_buckets()).len(),
            2
        );
    }

    #[test]
    fn tokenizer_lowercases_and_drops_stop_words() {
        let stop = StopWords::bundled();
        assert_eq!(tokenize("The Roadway is CRACKED.", &stop), ["roadway", "cracked"]);
        assert!(!tokenize("地震で停電", &StopWords::default()).is_empty());
    }
}
