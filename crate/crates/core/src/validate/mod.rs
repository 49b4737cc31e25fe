//! Ground-truth comparison and robustness statistics.

pub mod dyfi;
pub mod stats;
pub mod tfidf;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::assess::{aggregate_by_city, AssessmentRecord, Outcome};
use crate::geo::{haversine_km, GeoPoint};
use crate::prompts::{DamageType, PromptVersion};

pub use dyfi::{
    join_with_dyfi, load_dyfi, parse_dyfi_csv, DyfiColumns, DyfiJoin, DyfiRecord, JoinedCity, DEFAULT_MAX_JOIN_KM,
};
pub use stats::{
    cramers_v, krippendorff_alpha, pearson_r, population_std, weighted_pearson_r, ContingencyTable, StatsError,
};
pub use tfidf::{tfidf_by_mmi, BucketTerms, MmiBucket, StopWords, TfidfError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidateError {
    #[error("only {matched} cities matched DYFI rows; at least 2 are needed")]
    TooFewCities { matched: usize },
    #[error("sensitivity needs at least 2 prompt versions with assessed records, got {0}")]
    TooFewVersions(usize),
    #[error("version {0} has no assessed records")]
    EmptyVersion(PromptVersion),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// City-level correlation between mean model MMI and DYFI intensity.
pub fn city_correlation(join: &DyfiJoin, weight_nresp: bool) -> Result<f64, ValidateError> {
    if join.matched.len() < 2 {
        return Err(ValidateError::TooFewCities {
            matched: join.matched.len(),
        });
    }
    let x: Vec<f64> = join.matched.iter().map(|m| m.mean_mmi).collect();
    let y: Vec<f64> = join.matched.iter().map(|m| m.cdi).collect();
    Ok(if weight_nresp {
        let w: Vec<f64> = join.matched.iter().map(|m| f64::from(m.nresp)).collect();
        weighted_pearson_r(&x, &y, &w)?
    } else {
        pearson_r(&x, &y)?
    })
}

/// `(distance_km, mmi)` for every assessed record with a point.
pub fn distance_pairs(records: &[AssessmentRecord], epicenter: GeoPoint) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.outcome == Outcome::Assessed)
        .filter_map(|r| {
            Some((
                haversine_km(r.resolved.point?, epicenter),
                f64::from(r.verdict.as_ref()?.mmi()),
            ))
        })
        .collect()
}

/// Tweet-level correlation of epicentral distance against model MMI.
pub fn distance_attenuation(
    records: &[AssessmentRecord],
    epicenter: GeoPoint,
) -> Result<(f64, Vec<(f64, f64)>), StatsError> {
    let pairs = distance_pairs(records, epicenter);
    let (d, m): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    Ok((pearson_r(&d, &m)?, pairs))
}

/// City-level correlation restricted to Exterior/Both verdicts. Returns `r`
/// and the number of tweets in matched cities.
pub fn exterior_subset_correlation(
    records: &[AssessmentRecord],
    dyfi: &[DyfiRecord],
    max_km: f64,
) -> Result<(f64, usize), ValidateError> {
    let exterior: Vec<AssessmentRecord> = records
        .iter()
        .filter(|r| r.verdict.as_ref().is_some_and(|v| v.damage_type.is_exterior()))
        .cloned()
        .collect();
    let join = join_with_dyfi(&aggregate_by_city(&exterior), dyfi, max_km);
    let r = city_correlation(&join, false)?;
    Ok((r, join.matched.iter().map(|m| m.n_tweets).sum()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionRow {
    pub version: PromptVersion,
    pub n: usize,
    #[serde(rename = "DL_mean")]
    pub dl_mean: f64,
    #[serde(rename = "DL_std")]
    pub dl_std: f64,
    #[serde(rename = "Conf_mean")]
    pub conf_mean: f64,
    #[serde(rename = "Conf_std")]
    pub conf_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Association {
    pub cramers_v: f64,
    /// Fewer than two categories were observed, so V is reported as 0.
    pub degenerate: bool,
    pub table: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub versions: Vec<VersionRow>,
    pub human_impact: Association,
    pub damage_type: Association,
}

fn association(pairs: Vec<(PromptVersion, u8)>) -> Result<Association, StatsError> {
    let table = ContingencyTable::from_pairs(pairs)?;
    let reduced = table.without_empty_columns().unwrap_or(table);
    if reduced.cols() < 2 || reduced.rows() < 2 {
        return Ok(Association {
            cramers_v: 0.0,
            degenerate: true,
            table: reduced.counts().to_vec(),
        });
    }
    Ok(Association {
        cramers_v: cramers_v(&reduced)?,
        degenerate: false,
        table: reduced.counts().to_vec(),
    })
}

/// Per-version damage-level and confidence spread, plus Cramér's V of the
/// version x category tables for human impact and damage type.
pub fn prompt_sensitivity(
    runs: &BTreeMap<PromptVersion, Vec<AssessmentRecord>>,
) -> Result<SensitivityReport, ValidateError> {
    if runs.len() < 2 {
        return Err(ValidateError::TooFewVersions(runs.len()));
    }
    let mut versions = Vec::new();
    let mut impact = Vec::new();
    let mut kind = Vec::new();
    for (&version, records) in runs {
        let verdicts: Vec<_> = records
            .iter()
            .filter(|r| r.outcome == Outcome::Assessed)
            .filter_map(|r| r.verdict.as_ref())
            .collect();
        if verdicts.is_empty() {
            return Err(ValidateError::EmptyVersion(version));
        }
        let levels: Vec<f64> = verdicts.iter().map(|v| f64::from(v.damage_level)).collect();
        let conf: Vec<f64> = verdicts.iter().map(|v| v.confidence).collect();
        versions.push(VersionRow {
            version,
            n: verdicts.len(),
            dl_mean: stats::mean(&levels),
            dl_std: population_std(&levels),
            conf_mean: stats::mean(&conf),
            conf_std: population_std(&conf),
        });
        for v in &verdicts {
            impact.push((version, v.human_impact));
            let idx = DamageType::ALL.iter().position(|t| *t == v.damage_type).unwrap_or(0);
            kind.push((version, idx as u8));
        }
    }
    Ok(SensitivityReport {
        versions,
        human_impact: association(impact)?,
        damage_type: association(kind)?,
    })
}

impl SensitivityReport {
    /// Aligned table: one row per version, then the two V values.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<8}{:>5}{:>10}{:>10}{:>11}{:>11}\n",
            "version", "n", "DL_mean", "DL_std", "Conf_mean", "Conf_std"
        );
        for r in &self.versions {
            let _ = writeln!(
                s,
                "{:<8}{:>5}{:>10.3}{:>10.3}{:>11.3}{:>11.3}",
                r.version.id(),
                r.n,
                r.dl_mean,
                r.dl_std,
                r.conf_mean,
                r.conf_std
            );
        }
        let flag = |a: &Association| if a.degenerate { " (degenerate)" } else { "" };
        let _ = writeln!(
            s,
            "Cramer's V human_impact: {:.3}{}",
            self.human_impact.cramers_v,
            flag(&self.human_impact)
        );
        let _ = writeln!(
            s,
            "Cramer's V damage_type:  {:.3}{}",
            self.damage_type.cramers_v,
            flag(&self.damage_type)
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetResult {
    pub r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub assessed: usize,
    pub cities: usize,
    pub max_join_km: f64,
    pub weighted_by_nresp: bool,
    pub city_r: f64,
    pub join: DyfiJoin,
    /// Tweet-level distance correlation; `None` with a reason when undefined.
    pub distance_r: Option<f64>,
    pub distance_pairs: usize,
    pub distance_note: Option<String>,
    pub exterior: Option<SubsetResult>,
    pub exterior_note: Option<String>,
}

/// Runs the city join, the distance analysis and the exterior subset.
/// Only the city correlation is required to succeed.
pub fn build_report(
    records: &[AssessmentRecord],
    dyfi: &[DyfiRecord],
    epicenter: GeoPoint,
    max_km: f64,
    weight_nresp: bool,
) -> Result<(ValidationReport, Vec<(f64, f64)>), ValidateError> {
    let aggregates = aggregate_by_city(records);
    let join = join_with_dyfi(&aggregates, dyfi, max_km);
    let city_r = city_correlation(&join, weight_nresp)?;
    let (distance_r, pairs, distance_note) = match distance_attenuation(records, epicenter) {
        Ok((r, pairs)) => (Some(r), pairs, None),
        Err(e) => (None, distance_pairs(records, epicenter), Some(e.to_string())),
    };
    let (exterior, exterior_note) = match exterior_subset_correlation(records, dyfi, max_km) {
        Ok((r, n)) => (Some(SubsetResult { r, n }), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let report = ValidationReport {
        assessed: records.iter().filter(|r| r.outcome == Outcome::Assessed).count(),
        cities: aggregates.len(),
        max_join_km: max_km,
        weighted_by_nresp: weight_nresp,
        city_r,
        join,
        distance_r,
        distance_pairs: pairs.len(),
        distance_note,
        exterior,
        exterior_note,
    };
    Ok((report, pairs))
}

impl ValidationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "assessed records     {}", self.assessed);
        let _ = writeln!(s, "cities               {}", self.cities);
        let _ = writeln!(
            s,
            "matched / unmatched  {} / {}",
            self.join.matched.len(),
            self.join.unmatched.len()
        );
        let _ = writeln!(
            s,
            "city-level r         {:.4}{}",
            self.city_r,
            if self.weighted_by_nresp {
                " (nresp-weighted)"
            } else {
                ""
            }
        );
        match (self.distance_r, &self.distance_note) {
            (Some(r), _) => drop(writeln!(
                s,
                "distance r           {r:.4} over {} tweets",
                self.distance_pairs
            )),
            (None, note) => drop(writeln!(
                s,
                "distance r           n/a ({})",
                note.as_deref().unwrap_or("")
            )),
        }
        match (&self.exterior, &self.exterior_note) {
            (Some(e), _) => drop(writeln!(s, "exterior subset      r = {:.4}, n = {}", e.r, e.n)),
            (None, note) => drop(writeln!(
                s,
                "exterior subset      n/a ({})",
                note.as_deref().unwrap_or("")
            )),
        }
        let _ = writeln!(s);
        let width = self
            .join
            .matched
            .iter()
            .map(|m| m.city.chars().count())
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>8}  {:>6}  {:>6}  {:>8}",
            "city", "n", "mean_mmi", "cdi", "nresp", "km"
        );
        for m in &self.join.matched {
            let km = m.distance_km.map_or("name".to_string(), |d| format!("{d:.1}"));
            let pad = width - m.city.chars().count() + m.city.len();
            let _ = writeln!(
                s,
                "{:<pad$}  {:>5}  {:>8.3}  {:>6.2}  {:>6}  {:>8}",
                m.city, m.n_tweets, m.mean_mmi, m.cdi, m.nresp, km
            );
        }
        for u in &self.join.unmatched {
            let _ = writeln!(s, "unmatched: {u}");
        }
        s
    }
}

/// Scatter data for plotting distance against MMI.
pub fn scatter_csv(pairs: &[(f64, f64)]) -> String {
    let mut s = String::from("distance_km,mmi\n");
    for (d, m) in pairs {
        let _ = writeln!(s, "{d},{m}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{LocationTier, ResolvedLocation};
    use crate::prompts::{DamageVerdict, EventAnswer, Modality};

    fn rec(version: PromptVersion, human: u8, kind: DamageType, level: u8, conf: f64) -> AssessmentRecord {
        AssessmentRecord {
            tweet_id: String::new(),
            resolved: ResolvedLocation::unresolved(),
            event_related: Some(EventAnswer::Yes),
            verdict: Some(DamageVerdict {
                human_impact: human,
                damage_type: kind,
                damage_level: level,
                confidence: conf,
                reasoning: String::new(),
                voted_candidate: None,
            }),
            distance_km: None,
            model: String::new(),
            modality: Modality::Fusion,
            prompt_version: version,
            outcome: Outcome::Assessed,
            diagnostic: None,
        }
    }

    fn located(name: &str, lat: f64, level: u8, kind: DamageType) -> AssessmentRecord {
        let mut r = rec(PromptVersion::V1, 0, kind, level, 0.5);
        r.resolved = ResolvedLocation {
            name: name.into(),
            point: Some(GeoPoint::new(lat, 0.0).unwrap()),
            tier: LocationTier::Geotag,
            granularity: None,
        };
        r
    }

    #[test]
    fn planted_contingency_gives_point_two() {
        let mut runs = BTreeMap::new();
        let mk = |v, ones: usize, zeros: usize| {
            let mut out: Vec<_> = (0..ones).map(|_| rec(v, 1, DamageType::Interior, 4, 0.8)).collect();
            out.extend((0..zeros).map(|_| rec(v, 0, DamageType::Exterior, 4, 0.8)));
            out
        };
        runs.insert(PromptVersion::V1, mk(PromptVersion::V1, 6, 4));
        runs.insert(PromptVersion::V2, mk(PromptVersion::V2, 4, 6));
        let report = prompt_sensitivity(&runs).unwrap();
        assert!((report.human_impact.cramers_v - 0.2).abs() < 1e-12);
        assert!((report.damage_type.cramers_v - 0.2).abs() < 1e-12);
        assert!(report.versions.iter().all(|r| r.dl_std == 0.0));
    }

    #[test]
    fn constant_outputs_are_degenerate() {
        let runs: BTreeMap<_, _> = PromptVersion::ALL
            .iter()
            .map(|&v| (v, vec![rec(v, 1, DamageType::Both, 5, 0.9); 3]))
            .collect();
        let report = prompt_sensitivity(&runs).unwrap();
        assert_eq!(report.versions.len(), 7);
        assert!(report.human_impact.degenerate && report.damage_type.degenerate);
        assert_eq!(report.human_impact.cramers_v, 0.0);
        assert!(report.to_text().starts_with("version"));
        let json = serde_json::to_value(&report).unwrap();
        let row = json["versions"][0].as_object().unwrap();
        for k in ["DL_mean", "DL_std", "Conf_mean", "Conf_std"] {
            assert!(row.contains_key(k), "{k}");
        }
    }

    #[test]
    fn sensitivity_preconditions() {
        let mut runs = BTreeMap::new();
        runs.insert(
            PromptVersion::V1,
            vec![rec(PromptVersion::V1, 1, DamageType::Both, 5, 0.9)],
        );
        assert_eq!(prompt_sensitivity(&runs), Err(ValidateError::TooFewVersions(1)));
        runs.insert(PromptVersion::V3, vec![]);
        assert_eq!(
            prompt_sensitivity(&runs),
            Err(ValidateError::EmptyVersion(PromptVersion::V3))
        );
    }

    #[test]
    fn attenuation_exact_line() {
        let epi = GeoPoint::new(0.0, 0.0).unwrap();
        let records: Vec<_> = (0..9)
            .map(|i| located("c", i as f64, 9 - i as u8, DamageType::None))
            .collect();
        let (r, pairs) = distance_attenuation(&records, epi).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        assert_eq!(pairs.len(), 9);
        let flat: Vec<_> = (0..4).map(|i| located("c", i as f64, 5, DamageType::None)).collect();
        assert_eq!(
            distance_attenuation(&flat, epi).unwrap_err(),
            StatsError::ConstantSeries
        );
    }

    #[test]
    fn exterior_subset() {
        let dyfi: Vec<DyfiRecord> = (0..4)
            .map(|i| DyfiRecord {
                location_id: format!("b{i}"),
                cdi: 2.0 + i as f64,
                nresp: 5,
                point: GeoPoint::new(i as f64, 0.0).unwrap(),
            })
            .collect();
        let interior: Vec<_> = (0..4)
            .map(|i| located(&format!("c{i}"), i as f64, 2 + i as u8, DamageType::Interior))
            .collect();
        assert!(matches!(
            exterior_subset_correlation(&interior, &dyfi, 30.0),
            Err(ValidateError::TooFewCities { matched: 0 })
        ));

        let exterior: Vec<_> = (0..4)
            .map(|i| located(&format!("c{i}"), i as f64, 2 + (i as u8 % 3), DamageType::Exterior))
            .collect();
        let (r, n) = exterior_subset_correlation(&exterior, &dyfi, 30.0).unwrap();
        let whole = city_correlation(&join_with_dyfi(&aggregate_by_city(&exterior), &dyfi, 30.0), false).unwrap();
        assert_eq!((r, n), (whole, 4));

        let (report, pairs) = build_report(&exterior, &dyfi, GeoPoint::new(0.0, 0.0).unwrap(), 30.0, false).unwrap();
        assert_eq!(report.exterior.as_ref().unwrap().n, 4);
        assert!(report.to_text().contains("exterior subset"));
        assert_eq!(scatter_csv(&pairs).lines().count(), 5);
        assert!(matches!(
            build_report(&exterior[..1], &dyfi, GeoPoint::new(0.0, 0.0).unwrap(), 30.0, false),
            Err(ValidateError::TooFewCities { matched: 1 })
        ));
    }
}
