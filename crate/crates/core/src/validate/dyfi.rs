//! "Did You Feel It?" intensity rows and the city join.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assess::{normalize_city, CityAggregate};
use crate::geo::{haversine_km, GeoPoint};

pub const DEFAULT_MAX_JOIN_KM: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyfiRecord {
    pub location_id: String,
    pub cdi: f64,
    pub nresp: u32,
    pub point: GeoPoint,
}

#[derive(Debug, Error)]
pub enum DyfiError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Header names for each required field. Matching ignores case and
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyfiColumns {
    pub location_id: String,
    pub cdi: String,
    pub nresp: String,
    pub lat: String,
    pub lon: String,
}

impl Default for DyfiColumns {
    fn default() -> Self {
        DyfiColumns {
            location_id: "location_id".into(),
            cdi: "cdi".into(),
            nresp: "nresp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
        }
    }
}

impl DyfiColumns {
    /// USGS geocoded-box export (`cdi_geo`) headers.
    pub fn usgs_cdi_geo() -> Self {
        DyfiColumns {
            location_id: "Geocoded box".into(),
            cdi: "CDI".into(),
            nresp: "No. of responses".into(),
            lat: "Latitude".into(),
            lon: "Longitude".into(),
        }
    }
}

pub fn parse_dyfi_csv(content: &str, columns: &DyfiColumns) -> Result<Vec<DyfiRecord>, DyfiError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| DyfiError::MissingColumn(name.to_string()))
    };
    let (id, cdi, nresp, lat, lon) = (
        find(&columns.location_id)?,
        find(&columns.cdi)?,
        find(&columns.nresp)?,
        find(&columns.lat)?,
        find(&columns.lon)?,
    );
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |reason: String| DyfiError::BadRow { row: line, reason };
        let num = |idx: usize, what: &str| {
            row.get(idx)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|_| bad(format!("{what} {:?} is not a number", row.get(idx).unwrap_or(""))))
        };
        let cdi_v = num(cdi, "cdi")?;
        if !(1.0..=10.0).contains(&cdi_v) {
            return Err(bad(format!("cdi {cdi_v} outside 1..10")));
        }
        let n = num(nresp, "nresp")?;
        if n < 1.0 || n.fract() != 0.0 {
            return Err(bad(format!("nresp {n} is not a positive integer")));
        }
        let point = GeoPoint::new(num(lat, "lat")?, num(lon, "lon")?).map_err(|e| bad(e.to_string()))?;
        out.push(DyfiRecord {
            location_id: row.get(id).unwrap_or("").to_string(),
            cdi: cdi_v,
            nresp: n as u32,
            point,
        });
    }
    Ok(out)
}

pub fn load_dyfi(path: &Path, columns: &DyfiColumns) -> Result<Vec<DyfiRecord>, DyfiError> {
    let content = std::fs::read_to_string(path).map_err(|source| DyfiError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dyfi_csv(&content, columns)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinedCity {
    pub city: String,
    pub mean_mmi: f64,
    pub n_tweets: usize,
    pub location_id: String,
    pub cdi: f64,
    pub nresp: u32,
    /// `None` when matched by name.
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DyfiJoin {
    pub matched: Vec<JoinedCity>,
    pub unmatched: Vec<String>,
}

/// Matches each aggregate to the nearest DYFI row within `max_km`; failing
/// that, to a row whose id names the same city.
pub fn join_with_dyfi(aggregates: &[CityAggregate], dyfi: &[DyfiRecord], max_km: f64) -> DyfiJoin {
    let mut join = DyfiJoin::default();
    for agg in aggregates {
        let nearest = dyfi
            .iter()
            .map(|d| (d, haversine_km(agg.point, d.point)))
            .filter(|(_, km)| *km <= max_km)
            .min_by(|(a, da), (b, db)| da.total_cmp(db).then_with(|| a.location_id.cmp(&b.location_id)));
        let by_name = || {
            dyfi.iter()
                .filter(|d| normalize_city(&d.location_id).0.eq_ignore_ascii_case(&agg.city_name))
                .min_by(|a, b| a.location_id.cmp(&b.location_id))
        };
        let hit = match nearest {
            Some((d, km)) => Some((d, Some(km))),
            None => by_name().map(|d| (d, None)),
        };
        match hit {
            Some((d, distance_km)) => join.matched.push(JoinedCity {
                city: agg.display_name(),
                mean_mmi: agg.mean_mmi,
                n_tweets: agg.n,
                location_id: d.location_id.clone(),
                cdi: d.cdi,
                nresp: d.nresp,
                distance_km,
            }),
            None => join.unmatched.push(agg.display_name()),
        }
    }
    join
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(name: &str, lat: f64, lon: f64) -> CityAggregate {
        CityAggregate {
            city_name: name.into(),
            region: None,
            point: GeoPoint::new(lat, lon).unwrap(),
            n: 1,
            mean_mmi: 4.0,
            mean_confidence: 0.5,
        }
    }

    fn row(id: &str, lat: f64, lon: f64) -> DyfiRecord {
        DyfiRecord {
            location_id: id.into(),
            cdi: 5.0,
            nresp: 3,
            point: GeoPoint::new(lat, lon).unwrap(),
        }
    }

    // one degree of latitude is about 111.19 km
    const KM_PER_DEG: f64 = 6371.0 * std::f64::consts::PI / 180.0;

    #[test]
    fn nearest_within_radius() {
        let boxes = [
            row("far", 80.0 / KM_PER_DEG, 0.0),
            row("b12", 12.0 / KM_PER_DEG, 0.0),
            row("b10", -10.0 / KM_PER_DEG, 0.0),
        ];
        let j = join_with_dyfi(&[agg("X", 0.0, 0.0)], &boxes, 30.0);
        assert_eq!(j.matched[0].location_id, "b10");
        assert!((j.matched[0].distance_km.unwrap() - 10.0).abs() < 1e-6);

        let j = join_with_dyfi(&[agg("X", 0.0, 0.0)], &[row("far", 80.0 / KM_PER_DEG, 0.0)], 30.0);
        assert!(j.matched.is_empty());
        assert_eq!(j.unmatched, ["X"]);

        let j = join_with_dyfi(&[agg("X", 0.0, 0.0)], &[row("near", 5.0 / KM_PER_DEG, 0.0)], 30.0);
        assert_eq!(j.matched.len(), 1);
    }

    #[test]
    fn name_fallback_and_shared_rows() {
        let boxes = [row("Trona, CA", 10.0, 10.0), row("b", 0.0, 0.0)];
        let j = join_with_dyfi(
            &[agg("Trona", 35.0, -117.0), agg("A", 0.0, 0.0), agg("B", 0.01, 0.0)],
            &boxes,
            30.0,
        );
        assert_eq!(j.matched.len(), 3);
        assert_eq!(j.matched[0].distance_km, None);
        assert_eq!(j.matched[1].location_id, j.matched[2].location_id);
    }

    #[test]
    fn csv_parsing() {
        let csv = "location_id,cdi,nresp,lat,lon\n93555,6.2,40,35.62,-117.67\n90001,3.1,12,33.97,-118.25\n";
        let rows = parse_dyfi_csv(csv, &DyfiColumns::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            (rows[0].location_id.as_str(), rows[0].cdi, rows[0].nresp),
            ("93555", 6.2, 40)
        );

        let usgs = "Geocoded box,CDI,No. of responses,Hypocentral distance,Latitude,Longitude\nUTM:(11S 0440 3960 10000),5.4,7,18,35.77,-117.66\n";
        assert_eq!(parse_dyfi_csv(usgs, &DyfiColumns::usgs_cdi_geo()).unwrap()[0].nresp, 7);

        assert!(matches!(
            parse_dyfi_csv("a,b\n1,2\n", &DyfiColumns::default()),
            Err(DyfiError::MissingColumn(_))
        ));
        let bad = "location_id,cdi,nresp,lat,lon\nx,11,1,0,0\n";
        assert!(matches!(
            parse_dyfi_csv(bad, &DyfiColumns::default()),
            Err(DyfiError::BadRow { row: 2, .. })
        ));
        let zero = "location_id,cdi,nresp,lat,lon\nx,3,0,0,0\n";
        assert!(parse_dyfi_csv(zero, &DyfiColumns::default()).is_err());
    }
}
