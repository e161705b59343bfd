//! Derived variability and calendar features, and the model-ready matrix.
//!
//! Feature names follow a fixed grammar: raw column names as ingested,
//! variability features as `V{base}P{HR|D|W|M|Y}` (for example `VWS100mPHR`),
//! and the calendar features `day`, `week`, `month` and `HSMR`.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, FeatureRange, TimeSeriesDataset};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series of length {len} is too short for horizon {horizon}")]
    SeriesTooShort { len: usize, horizon: usize },
    #[error("horizon must be at least one hour")]
    InvalidHorizon,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} requested twice")]
    DuplicateFeature(String),
    #[error("no NWP model run at or before {0}")]
    ModelRunAfterTimestamp(String),
    #[error("all rows were dropped while building the feature matrix")]
    NoRows,
    #[error("feature {0:?} not present in matrix")]
    MissingColumn(String),
    #[error("malformed matrix CSV: {0}")]
    Csv(String),
}

/// Named look-back horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    #[serde(rename = "HR")]
    Hour,
    #[serde(rename = "D")]
    Day,
    #[serde(rename = "W")]
    Week,
    #[serde(rename = "M")]
    Month,
    #[serde(rename = "Y")]
    Year,
}

impl Horizon {
    pub fn suffix(self) -> &'static str {
        match self {
            Horizon::Hour => "HR",
            Horizon::Day => "D",
            Horizon::Week => "W",
            Horizon::Month => "M",
            Horizon::Year => "Y",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "HR" => Horizon::Hour,
            "D" => Horizon::Day,
            "W" => Horizon::Week,
            "M" => Horizon::Month,
            "Y" => Horizon::Year,
            _ => return None,
        })
    }
}

/// Hour counts behind each named horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonHours {
    pub hour: usize,
    pub day: usize,
    pub week: usize,
    pub month: usize,
    pub year: usize,
}

impl Default for HorizonHours {
    fn default() -> Self {
        Self {
            hour: 1,
            day: 24,
            week: 168,
            month: 730,
            year: 8760,
        }
    }
}

impl HorizonHours {
    pub fn hours(&self, h: Horizon) -> usize {
        match h {
            Horizon::Hour => self.hour,
            Horizon::Day => self.day,
            Horizon::Week => self.week,
            Horizon::Month => self.month,
            Horizon::Year => self.year,
        }
    }
}

/// A backward-looking variability feature on one base column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariabilityFeatureSpec {
    pub base_feature: String,
    pub horizon: Horizon,
}

impl VariabilityFeatureSpec {
    pub fn name(&self) -> String {
        format!("V{}P{}", self.base_feature, self.horizon.suffix())
    }

    /// Parse a `V{base}P{horizon}` name. Does not check that the base exists.
    pub fn parse(name: &str) -> Option<Self> {
        let body = name.strip_prefix('V')?;
        let p = body.rfind('P')?;
        let (base, suffix) = (&body[..p], &body[p + 1..]);
        if base.is_empty() {
            return None;
        }
        Some(Self {
            base_feature: base.to_string(),
            horizon: Horizon::from_suffix(suffix)?,
        })
    }
}

/// `|mean(series[t-k..t]) - series[t]|`, undefined for the first `k` entries.
pub fn variability_feature(series: &[f64], k: usize) -> Result<Vec<Option<f64>>, FeatureError> {
    if k == 0 {
        return Err(FeatureError::InvalidHorizon);
    }
    if series.len() <= k {
        return Err(FeatureError::SeriesTooShort {
            len: series.len(),
            horizon: k,
        });
    }
    let mut out = vec![None; series.len()];
    let mut window: f64 = series[..k].iter().sum();
    for t in k..series.len() {
        out[t] = Some((window / k as f64 - series[t]).abs());
        window += series[t] - series[t - k];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalendarColumns {
    pub day: Vec<f64>,
    pub week: Vec<f64>,
    pub month: Vec<f64>,
    pub hsmr: Vec<f64>,
    /// True when no run list was given and HSMR is the zero placeholder.
    pub hsmr_synthetic: bool,
}

pub const CALENDAR_FEATURES: [&str; 4] = ["day", "week", "month", "HSMR"];

/// Day of month, ISO week, month and hours since the last NWP run.
pub fn calendar_features(
    timestamps: &[DateTime<Utc>],
    model_runs: Option<&[DateTime<Utc>]>,
) -> Result<CalendarColumns, FeatureError> {
    let day = timestamps.iter().map(|t| t.day() as f64).collect();
    let week = timestamps
        .iter()
        .map(|t| t.iso_week().week() as f64)
        .collect();
    let month = timestamps.iter().map(|t| t.month() as f64).collect();
    let (hsmr, hsmr_synthetic) = match model_runs {
        None => (vec![0.0; timestamps.len()], true),
        Some(runs) => {
            let mut out = Vec::with_capacity(timestamps.len());
            let mut j = 0usize;
            for t in timestamps {
                while j < runs.len() && runs[j] <= *t {
                    j += 1;
                }
                if j == 0 {
                    return Err(FeatureError::ModelRunAfterTimestamp(format_timestamp(t)));
                }
                out.push((*t - runs[j - 1]).num_seconds() as f64 / 3600.0);
            }
            (out, false)
        }
    };
    Ok(CalendarColumns {
        day,
        week,
        month,
        hsmr,
        hsmr_synthetic,
    })
}

/// Selected feature columns, row-major, with their target and SA box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub timestamps: Vec<DateTime<Utc>>,
    /// Row-major `n_rows x n_features` values.
    pub data: Vec<f64>,
    pub target: Vec<f64>,
    /// Per-feature `(lo, hi)` observed on these rows.
    pub bounds: Vec<(f64, f64)>,
    /// Rows dropped while building (warm-up of derived features).
    pub dropped_rows: usize,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        timestamps: Vec<DateTime<Utc>>,
        data: Vec<f64>,
        target: Vec<f64>,
    ) -> Self {
        assert_eq!(timestamps.len(), target.len());
        assert_eq!(data.len(), target.len() * feature_names.len());
        let mut m = Self {
            feature_names,
            timestamps,
            data,
            target,
            bounds: Vec::new(),
            dropped_rows: 0,
        };
        m.bounds = m.observed_bounds();
        m
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_features();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.data[i * self.n_features() + j])
            .collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.feature_index(name).map(|j| self.column(j))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    fn observed_bounds(&self) -> Vec<(f64, f64)> {
        (0..self.n_features())
            .map(|j| {
                let col = self.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect()
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| FeatureError::MissingColumn(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut data = Vec::with_capacity(self.n_rows() * idx.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Ok(FeatureMatrix {
            feature_names: names.to_vec(),
            timestamps: self.timestamps.clone(),
            data,
            target: self.target.clone(),
            bounds: idx.iter().map(|&j| self.bounds[j]).collect(),
            dropped_rows: self.dropped_rows,
        })
    }

    /// Rows in `range`, with bounds recomputed on the slice.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        let k = self.n_features();
        FeatureMatrix::new(
            self.feature_names.clone(),
            self.timestamps[range.clone()].to_vec(),
            self.data[range.start * k..range.end * k].to_vec(),
            self.target[range].to_vec(),
        )
    }

    /// Rows at `indices`, in that order.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_features());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(
            self.feature_names.clone(),
            indices.iter().map(|&i| self.timestamps[i]).collect(),
            data,
            indices.iter().map(|&i| self.target[i]).collect(),
        )
    }

    /// Row order sorted by timestamp (stable), used before any training.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_rows()).collect();
        idx.sort_by_key(|&i| self.timestamps[i]);
        idx
    }

    /// Fit per-column min-max ranges on this matrix.
    pub fn fit_minmax(&self) -> MatrixScaling {
        let mut ranges = BTreeMap::new();
        let mut constant = Vec::new();
        for (name, &(lo, hi)) in self.feature_names.iter().zip(&self.bounds) {
            if hi > lo {
                ranges.insert(name.clone(), FeatureRange { min: lo, max: hi });
            } else {
                constant.push(name.clone());
            }
        }
        MatrixScaling { ranges, constant }
    }

    /// Apply fitted ranges; columns without a range (constant) are removed.
    pub fn apply_minmax(&self, scaling: &MatrixScaling) -> FeatureMatrix {
        let keep: Vec<String> = self
            .feature_names
            .iter()
            .filter(|n| scaling.ranges.contains_key(*n))
            .cloned()
            .collect();
        let mut m = self.select(&keep).expect("kept names come from the matrix");
        let k = m.n_features();
        let ranges: Vec<FeatureRange> = keep.iter().map(|n| scaling.ranges[n]).collect();
        for (i, v) in m.data.iter_mut().enumerate() {
            *v = ranges[i % k].normalize(*v);
        }
        m.bounds = m.observed_bounds();
        m
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| FeatureError::Csv(e.to_string());
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push("power".into());
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![format_timestamp(&self.timestamps[i])];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            rec.push(self.target[i].to_string());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| FeatureError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureMatrix, FeatureError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let csv_err = |e: csv::Error| FeatureError::Csv(e.to_string());
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.len() < 2 || &headers[0] != "timestamp" || &headers[headers.len() - 1] != "power"
        {
            return Err(FeatureError::Csv(
                "expected timestamp,...,power header".into(),
            ));
        }
        let names: Vec<String> = headers
            .iter()
            .skip(1)
            .take(headers.len() - 2)
            .map(String::from)
            .collect();
        let mut timestamps = Vec::new();
        let mut data = Vec::new();
        let mut target = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let ts = DateTime::parse_from_rfc3339(&rec[0])
                .map_err(|e| FeatureError::Csv(e.to_string()))?
                .with_timezone(&Utc);
            timestamps.push(ts);
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| FeatureError::Csv(format!("{s:?}: {e}")))
            };
            for j in 1..rec.len() - 1 {
                data.push(parse(&rec[j])?);
            }
            target.push(parse(&rec[rec.len() - 1])?);
        }
        Ok(FeatureMatrix::new(names, timestamps, data, target))
    }
}

/// Min-max ranges fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixScaling {
    pub ranges: BTreeMap<String, FeatureRange>,
    pub constant: Vec<String>,
}

enum Source<'a> {
    Raw(&'a [f64]),
    Derived(Vec<Option<f64>>),
    Calendar(usize),
}

/// Resolve `requested` names against `dataset` and assemble the matrix.
///
/// Names resolve as raw columns first, then as variability features, then
/// as calendar features. Rows where any derived value is undefined are
/// dropped.
pub fn build_feature_matrix(
    dataset: &TimeSeriesDataset,
    requested: &[String],
) -> Result<FeatureMatrix, FeatureError> {
    build_feature_matrix_with(dataset, requested, &HorizonHours::default())
}

pub fn build_feature_matrix_with(
    dataset: &TimeSeriesDataset,
    requested: &[String],
    horizons: &HorizonHours,
) -> Result<FeatureMatrix, FeatureError> {
    for (i, name) in requested.iter().enumerate() {
        if requested[..i].contains(name) {
            return Err(FeatureError::DuplicateFeature(name.clone()));
        }
    }
    let needs_calendar = requested
        .iter()
        .any(|n| dataset.column(n).is_none() && CALENDAR_FEATURES.contains(&n.as_str()));
    let calendar = if needs_calendar {
        let cal = calendar_features(&dataset.timestamps, dataset.model_runs.as_deref())?;
        if cal.hsmr_synthetic && requested.iter().any(|n| n == "HSMR") {
            log::warn!("{}: no NWP run times, HSMR set to 0", dataset.park_id);
        }
        Some(cal)
    } else {
        None
    };

    let mut sources = Vec::with_capacity(requested.len());
    for name in requested {
        let source = if let Some(col) = dataset.column(name) {
            Source::Raw(col)
        } else if let Some(spec) = VariabilityFeatureSpec::parse(name) {
            let base = dataset
                .column(&spec.base_feature)
                .ok_or_else(|| FeatureError::UnknownFeature(name.clone()))?;
            Source::Derived(variability_feature(base, horizons.hours(spec.horizon))?)
        } else if let Some(pos) = CALENDAR_FEATURES.iter().position(|c| c == name) {
            Source::Calendar(pos)
        } else {
            return Err(FeatureError::UnknownFeature(name.clone()));
        };
        sources.push(source);
    }

    let n = dataset.len();
    let k = requested.len();
    let mut data = Vec::with_capacity(n * k);
    let mut timestamps = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    let mut dropped = 0;
    let mut row = Vec::with_capacity(k);
    for i in 0..n {
        row.clear();
        for s in &sources {
            let v = match s {
                Source::Raw(col) => Some(col[i]),
                Source::Derived(col) => col[i],
                Source::Calendar(pos) => {
                    let cal = calendar.as_ref().expect("calendar computed when requested");
                    Some(match pos {
                        0 => cal.day[i],
                        1 => cal.week[i],
                        2 => cal.month[i],
                        _ => cal.hsmr[i],
                    })
                }
            };
            match v {
                Some(v) => row.push(v),
                None => break,
            }
        }
        if row.len() < k {
            dropped += 1;
            continue;
        }
        data.extend_from_slice(&row);
        timestamps.push(dataset.timestamps[i]);
        target.push(dataset.power[i]);
    }
    if target.is_empty() {
        return Err(FeatureError::NoRows);
    }
    let mut m = FeatureMatrix::new(requested.to_vec(), timestamps, data, target);
    m.dropped_rows = dropped;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Terrain;
    use chrono::Duration;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn dataset(n: usize) -> TimeSeriesDataset {
        let t0 = ts("2016-08-01T00:00:00Z");
        TimeSeriesDataset {
            park_id: "p".into(),
            terrain: Terrain::Os,
            timestamps: (0..n).map(|i| t0 + Duration::hours(i as i64)).collect(),
            columns: vec![
                (
                    "WS100m".into(),
                    (0..n).map(|i| (i as f64).sin() + 2.0).collect(),
                ),
                (
                    "WS10m".into(),
                    (0..n).map(|i| (i as f64).cos() + 2.0).collect(),
                ),
            ],
            power: (0..n).map(|i| (i % 3) as f64 / 3.0).collect(),
            meta: Default::default(),
            model_runs: None,
            dropped_rows: vec![],
        }
    }

    #[test]
    fn variability_examples() {
        let v = variability_feature(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!(v, vec![None, Some(1.0), Some(1.0), Some(1.0)]);
        let c = variability_feature(&[5.0; 10], 3).unwrap();
        assert!(c[3..].iter().all(|v| *v == Some(0.0)));
        let w = variability_feature(&[0.0, 2.0, 4.0, 6.0], 2).unwrap();
        assert_eq!(w[3], Some(3.0));
        assert!(matches!(
            variability_feature(&[1.0, 2.0], 2),
            Err(FeatureError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn variability_names_round_trip() {
        let s = VariabilityFeatureSpec::parse("VWS100mPHR").unwrap();
        assert_eq!(s.base_feature, "WS100m");
        assert_eq!(s.horizon, Horizon::Hour);
        assert_eq!(s.name(), "VWS100mPHR");
        assert_eq!(
            VariabilityFeatureSpec::parse("VAPPW").unwrap().horizon,
            Horizon::Week
        );
        assert!(VariabilityFeatureSpec::parse("WS100m").is_none());
        assert!(VariabilityFeatureSpec::parse("VWS100mPX").is_none());
    }

    #[test]
    fn calendar_lookup_and_hsmr() {
        let cal = calendar_features(&[ts("2016-08-01T00:00:00Z")], None).unwrap();
        assert_eq!(cal.day, vec![1.0]);
        assert_eq!(cal.month, vec![8.0]);
        assert_eq!(cal.week, vec![31.0]);
        assert_eq!(cal.hsmr, vec![0.0]);
        assert!(cal.hsmr_synthetic);

        let runs = [ts("2016-08-01T00:00:00Z"), ts("2016-08-01T06:00:00Z")];
        let cal = calendar_features(
            &[ts("2016-08-01T05:00:00Z"), ts("2016-08-01T07:00:00Z")],
            Some(&runs),
        )
        .unwrap();
        assert_eq!(cal.hsmr, vec![5.0, 1.0]);

        let late = [ts("2016-08-02T00:00:00Z")];
        assert!(matches!(
            calendar_features(&[ts("2016-08-01T05:00:00Z")], Some(&late)),
            Err(FeatureError::ModelRunAfterTimestamp(_))
        ));
    }

    #[test]
    fn matrix_resolution() {
        let ds = dataset(20);
        let m = build_feature_matrix(&ds, &["WS100m".into(), "WS10m".into()]).unwrap();
        assert_eq!((m.n_rows(), m.n_features(), m.dropped_rows), (20, 2, 0));
        for (j, &(lo, hi)) in m.bounds.iter().enumerate() {
            assert!(m.column(j).iter().all(|v| (lo..=hi).contains(v)));
        }

        let m = build_feature_matrix(&ds, &["WS100m".into(), "VWS100mPHR".into(), "month".into()])
            .unwrap();
        assert_eq!((m.n_rows(), m.dropped_rows), (19, 1));
        assert_eq!(m.timestamps[0], ds.timestamps[1]);

        let err = build_feature_matrix(&ds, &["WS100m".into(), "BOGUS".into()]).unwrap_err();
        assert!(matches!(err, FeatureError::UnknownFeature(ref n) if n == "BOGUS"));
        let err = build_feature_matrix(&ds, &["VBOGUSPHR".into()]).unwrap_err();
        assert!(matches!(err, FeatureError::UnknownFeature(_)));
    }

    #[test]
    fn matrix_is_deterministic_and_csv_round_trips() {
        let ds = dataset(30);
        let names: Vec<String> = ["WS10m", "VWS10mPD", "HSMR", "week"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let a = build_feature_matrix(&ds, &names).unwrap();
        let b = build_feature_matrix(&ds, &names).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dropped_rows, 24);

        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.data, a.data);
        assert_eq!(back.target, a.target);
        assert_eq!(back.timestamps, a.timestamps);
    }

    #[test]
    fn minmax_on_matrix_drops_constants() {
        let ds = dataset(10);
        let m = build_feature_matrix(&ds, &["WS100m".into(), "HSMR".into()]).unwrap();
        let scaling = m.fit_minmax();
        assert_eq!(scaling.constant, vec!["HSMR".to_string()]);
        let scaled = m.apply_minmax(&scaling);
        assert_eq!(scaled.feature_names, vec!["WS100m".to_string()]);
        assert_eq!(scaled.bounds, vec![(0.0, 1.0)]);
    }

    proptest! {
        #[test]
        fn variability_translation_invariant_and_nonnegative(
            series in prop::collection::vec(-100.0f64..100.0, 5..60),
            k in 1usize..5,
            c in -1e3f64..1e3,
        ) {
            let base = variability_feature(&series, k).unwrap();
            let shifted: Vec<f64> = series.iter().map(|v| v + c).collect();
            let moved = variability_feature(&shifted, k).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                match (a, b) {
                    (None, None) => {}
                    (Some(a), Some(b)) => {
                        prop_assert!(*a >= 0.0);
                        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + c.abs() + a.abs()));
                    }
                    _ => prop_assert!(false, "definedness differs"),
                }
            }
        }
    }
}
