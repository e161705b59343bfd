//! Time-series ingestion, min-max normalization and chronological splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {column:?} value {raw:?}")]
    InvalidCell {
        row: usize,
        column: String,
        raw: String,
    },
    #[error("timestamps not strictly increasing at row {0}")]
    NonMonotonicTimestamps(usize),
    #[error("power scale must be positive, got {0}")]
    InvalidPowerScale(f64),
    #[error("dataset needs at least 2 rows, has {0}")]
    DatasetTooSmall(usize),
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("column {name:?} has {got} values, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
}

/// Use-case grouping of wind parks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Terrain {
    /// Non-complex terrain (farmland).
    #[serde(rename = "NCT")]
    Nct,
    /// Complex terrain (forest).
    #[serde(rename = "CT")]
    Ct,
    /// Offshore.
    #[serde(rename = "OS")]
    Os,
}

impl Terrain {
    pub const ALL: [Terrain; 3] = [Terrain::Nct, Terrain::Ct, Terrain::Os];

    pub fn as_str(self) -> &'static str {
        match self {
            Terrain::Nct => "NCT",
            Terrain::Ct => "CT",
            Terrain::Os => "OS",
        }
    }
}

impl fmt::Display for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terrain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NCT" => Ok(Terrain::Nct),
            "CT" => Ok(Terrain::Ct),
            "OS" => Ok(Terrain::Os),
            other => Err(format!(
                "unknown terrain {other:?} (expected NCT, CT or OS)"
            )),
        }
    }
}

/// Per-park metadata that accompanies a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkMeta {
    pub park_id: String,
    pub terrain: Terrain,
    /// `max_power`, `max_diameter`, `max_hub_height`, `elevation`.
    pub meta: BTreeMap<String, f64>,
}

/// Column layout expected in an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub power: String,
    pub features: Vec<String>,
    /// Optional column holding the issue time of the NWP run behind each row.
    #[serde(default)]
    pub model_run: Option<String>,
}

impl CsvSchema {
    pub fn new<S: Into<String>>(features: impl IntoIterator<Item = S>) -> Self {
        Self {
            timestamp: "timestamp".into(),
            power: "power".into(),
            features: features.into_iter().map(Into::into).collect(),
            model_run: None,
        }
    }

    pub fn with_model_run(mut self, column: impl Into<String>) -> Self {
        self.model_run = Some(column.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub park_id: String,
    pub terrain: Terrain,
    pub timestamps: Vec<DateTime<Utc>>,
    /// Feature columns in declared order.
    pub columns: Vec<(String, Vec<f64>)>,
    pub power: Vec<f64>,
    pub meta: BTreeMap<String, f64>,
    /// Sorted, de-duplicated NWP run issue times, when known.
    pub model_runs: Option<Vec<DateTime<Utc>>>,
    /// Source row indices dropped at ingestion because a cell was missing.
    pub dropped_rows: Vec<usize>,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Check the length invariants shared by all columns.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.timestamps.len();
        for (name, col) in self
            .columns
            .iter()
            .map(|(n, c)| (n.as_str(), c))
            .chain(std::iter::once(("power", &self.power)))
        {
            if col.len() != n {
                return Err(DatasetError::LengthMismatch {
                    name: name.to_string(),
                    got: col.len(),
                    expected: n,
                });
            }
        }
        if let Some(i) = (1..n).find(|&i| self.timestamps[i] <= self.timestamps[i - 1]) {
            return Err(DatasetError::NonMonotonicTimestamps(i));
        }
        Ok(())
    }

    /// Indices `i` where the step from row `i - 1` is not exactly one hour.
    pub fn gaps(&self) -> Vec<usize> {
        (1..self.len())
            .filter(|&i| self.timestamps[i] - self.timestamps[i - 1] != Duration::hours(1))
            .collect()
    }

    /// Rows `range` as a new dataset sharing metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> TimeSeriesDataset {
        TimeSeriesDataset {
            park_id: self.park_id.clone(),
            terrain: self.terrain,
            timestamps: self.timestamps[range.clone()].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(n, c)| (n.clone(), c[range.clone()].to_vec()))
                .collect(),
            power: self.power[range].to_vec(),
            meta: self.meta.clone(),
            model_runs: self.model_runs.clone(),
            dropped_rows: Vec::new(),
        }
    }
}

fn is_missing(raw: &str) -> bool {
    matches!(raw.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    // Naive ISO-8601 timestamps are taken to be UTC.
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

/// Read a time-series CSV file for one park.
pub fn load_timeseries_csv(
    path: &Path,
    schema: &CsvSchema,
    park: &ParkMeta,
) -> Result<TimeSeriesDataset, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_timeseries_csv(file, schema, park)
}

/// Parse time-series CSV data from any reader.
///
/// Rows with a missing cell (empty, `NA`, `NaN`) are dropped and recorded in
/// [`TimeSeriesDataset::dropped_rows`]; any other unparseable cell is an
/// error naming the row. Rows are returned sorted by timestamp.
pub fn read_timeseries_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    park: &ParkMeta,
) -> Result<TimeSeriesDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    let find = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let ts_idx = find(&schema.timestamp)?;
    let feature_idx = schema
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>, _>>()?;
    let power_idx = find(&schema.power)?;
    let run_idx = schema.model_run.as_deref().map(find).transpose()?;

    struct Row {
        source: usize,
        ts: DateTime<Utc>,
        values: Vec<f64>,
        power: f64,
        run: Option<DateTime<Utc>>,
    }

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut cells = vec![ts_idx, power_idx];
        cells.extend(&feature_idx);
        cells.extend(run_idx);
        if cells.iter().any(|&i| is_missing(cell(i))) {
            dropped.push(row);
            continue;
        }
        let invalid = |column: &str, raw: &str| DatasetError::InvalidCell {
            row,
            column: column.to_string(),
            raw: raw.to_string(),
        };
        let ts = parse_timestamp(cell(ts_idx))
            .ok_or_else(|| invalid(&schema.timestamp, cell(ts_idx)))?;
        let number = |i: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = cell(i);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| invalid(name, raw))
        };
        let values = feature_idx
            .iter()
            .zip(&schema.features)
            .map(|(&i, name)| number(i, name))
            .collect::<Result<Vec<_>, _>>()?;
        let power = number(power_idx, &schema.power)?;
        let run = match (run_idx, &schema.model_run) {
            (Some(i), Some(name)) => {
                Some(parse_timestamp(cell(i)).ok_or_else(|| invalid(name, cell(i)))?)
            }
            _ => None,
        };
        rows.push(Row {
            source: row,
            ts,
            values,
            power,
            run,
        });
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }

    rows.sort_by_key(|r| (r.ts, r.source));
    if let Some(w) = rows.windows(2).find(|w| w[0].ts == w[1].ts) {
        return Err(DatasetError::NonMonotonicTimestamps(w[1].source));
    }

    let mut columns: Vec<(String, Vec<f64>)> = schema
        .features
        .iter()
        .map(|f| (f.clone(), Vec::with_capacity(rows.len())))
        .collect();
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut power = Vec::with_capacity(rows.len());
    let mut runs = Vec::new();
    for r in rows {
        timestamps.push(r.ts);
        power.push(r.power);
        for ((_, col), v) in columns.iter_mut().zip(r.values) {
            col.push(v);
        }
        runs.extend(r.run);
    }
    let model_runs = run_idx.map(|_| {
        runs.sort();
        runs.dedup();
        runs
    });

    Ok(TimeSeriesDataset {
        park_id: park.park_id.clone(),
        terrain: park.terrain,
        timestamps,
        columns,
        power,
        meta: park.meta.clone(),
        model_runs,
        dropped_rows: dropped,
    })
}

/// Write a dataset in the CSV layout [`read_timeseries_csv`] ingests.
pub fn write_timeseries_csv<W: std::io::Write>(
    writer: W,
    dataset: &TimeSeriesDataset,
    run_column: Option<(&str, &[DateTime<Utc>])>,
) -> Result<(), DatasetError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(dataset.columns.iter().map(|(n, _)| n.clone()));
    if let Some((name, _)) = run_column {
        header.push(name.to_string());
    }
    header.push("power".into());
    wtr.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec = vec![format_timestamp(&dataset.timestamps[i])];
        rec.extend(dataset.columns.iter().map(|(_, c)| c[i].to_string()));
        if let Some((_, runs)) = run_column {
            rec.push(format_timestamp(&runs[i]));
        }
        rec.push(dataset.power[i].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| DatasetError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Min and max observed for one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Fitted min-max scaling. Constant features are listed and excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub features: BTreeMap<String, FeatureRange>,
    #[serde(default)]
    pub constant: Vec<String>,
    pub power_scale: f64,
}

/// Values that fell outside `[0, 1]` after applying a fixed spec.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    /// Feature name to count of out-of-range values.
    pub out_of_range: BTreeMap<String, usize>,
    pub power_out_of_range: usize,
    /// Human-readable warnings (constant features dropped and similar).
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub dataset: TimeSeriesDataset,
    pub spec: NormalizationSpec,
    pub report: RangeReport,
}

/// Min-max normalize every feature column and scale power.
///
/// With `spec == None` the ranges are fitted on `dataset` and the power scale
/// is taken from the `max_power` meta entry; constant columns are dropped
/// with a warning. With a fixed spec, values outside the fitted range are
/// kept as-is and counted in the report.
pub fn minmax_normalize(
    dataset: &TimeSeriesDataset,
    spec: Option<&NormalizationSpec>,
) -> Result<Normalized, DatasetError> {
    dataset.validate()?;
    let mut report = RangeReport::default();
    let spec = match spec {
        Some(s) => s.clone(),
        None => {
            let power_scale = dataset.meta.get("max_power").copied().unwrap_or(f64::NAN);
            let mut features = BTreeMap::new();
            let mut constant = Vec::new();
            for (name, col) in &dataset.columns {
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max > min {
                    features.insert(name.clone(), FeatureRange { min, max });
                } else {
                    constant.push(name.clone());
                }
            }
            NormalizationSpec {
                features,
                constant,
                power_scale,
            }
        }
    };
    if !(spec.power_scale > 0.0 && spec.power_scale.is_finite()) {
        return Err(DatasetError::InvalidPowerScale(spec.power_scale));
    }

    let mut columns = Vec::with_capacity(dataset.columns.len());
    for (name, col) in &dataset.columns {
        match spec.features.get(name) {
            Some(range) => {
                let scaled: Vec<f64> = col.iter().map(|&v| range.normalize(v)).collect();
                let outside = scaled.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
                if outside > 0 {
                    report.out_of_range.insert(name.clone(), outside);
                }
                columns.push((name.clone(), scaled));
            }
            None => {
                let msg = if spec.constant.contains(name) {
                    format!("feature {name} is constant and was excluded")
                } else {
                    format!("feature {name} has no fitted range and was excluded")
                };
                log::warn!("{} ({})", msg, dataset.park_id);
                report.warnings.push(msg);
            }
        }
    }
    let power: Vec<f64> = dataset.power.iter().map(|p| p / spec.power_scale).collect();
    report.power_out_of_range = power.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();

    Ok(Normalized {
        dataset: TimeSeriesDataset {
            columns,
            power,
            ..dataset.clone()
        },
        spec,
        report,
    })
}

/// Chronological train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
        }
    }
}

impl SplitSpec {
    /// Number of training rows, `ceil(f * n)` kept within `1..n`.
    pub fn train_len(&self, n: usize) -> Result<usize, DatasetError> {
        let f = self.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(DatasetError::InvalidFraction(f));
        }
        if n < 2 {
            return Err(DatasetError::DatasetTooSmall(n));
        }
        // The small offset keeps products like 0.7 * 10 from rounding up.
        let len = (f * n as f64 - 1e-9).ceil() as usize;
        Ok(len.clamp(1, n - 1))
    }

    /// First test timestamp.
    pub fn boundary(&self, dataset: &TimeSeriesDataset) -> Result<DateTime<Utc>, DatasetError> {
        let k = self.train_len(dataset.len())?;
        Ok(dataset.timestamps[k])
    }
}

pub fn split_by_time(
    dataset: &TimeSeriesDataset,
    spec: &SplitSpec,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DatasetError> {
    let n = dataset.len();
    let k = spec.train_len(n)?;
    Ok((dataset.slice(0..k), dataset.slice(k..n)))
}
