//! Pinball loss, quantile-score CRPS and score aggregation.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::format_timestamp;
use crate::models::{EcdfForecast, QuantileLevels};
use crate::stats::{empirical_quantile, mean, population_std};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("score group {0:?} is empty")]
    EmptyGroup(String),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// `(y - q) * tau` when `y >= q`, else `(q - y) * (1 - tau)`.
#[inline]
pub fn pinball_loss(tau: f64, y: f64, q: f64) -> f64 {
    if y >= q {
        (y - q) * tau
    } else {
        (q - y) * (1.0 - tau)
    }
}

/// Quantile-score CRPS: `(2 / Q) * sum_q pinball(tau_q, y, value_q)`.
pub fn crps_ecdf(forecast: &EcdfForecast, y: f64) -> f64 {
    let total: f64 = forecast
        .levels
        .iter()
        .zip(&forecast.values)
        .map(|(&tau, &q)| pinball_loss(tau, y, q))
        .sum();
    2.0 * total / forecast.levels.len() as f64
}

/// Constant forecast at the empirical training quantiles.
pub fn climatology_forecast(train_target: &[f64], levels: &QuantileLevels) -> EcdfForecast {
    EcdfForecast {
        levels: levels.as_slice().to_vec(),
        values: levels
            .as_slice()
            .iter()
            .map(|&tau| empirical_quantile(train_target, tau))
            .collect(),
    }
}

/// Per-timestamp CRPS values for one park and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGroup {
    pub scenario: String,
    pub park_id: String,
    pub model: String,
    pub timestamps: Vec<DateTime<Utc>>,
    pub crps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkScore {
    pub scenario: String,
    pub park_id: String,
    pub model: String,
    pub mean_crps: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub model: String,
    pub mean: f64,
    /// Population standard deviation of park means.
    pub std: f64,
    pub parks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub parks: Vec<ParkScore>,
    pub scenarios: Vec<ScenarioScore>,
}

/// Park means over timestamps, then scenario mean and population sd over
/// park means. Groups are reduced in input order.
pub fn summarize_scores(groups: &[ScoreGroup]) -> Result<ScoreSummary, ScoringError> {
    let mut parks = Vec::with_capacity(groups.len());
    let mut by_scenario: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for g in groups {
        if g.crps.is_empty() {
            return Err(ScoringError::EmptyGroup(format!(
                "{}/{}",
                g.park_id, g.model
            )));
        }
        let m = mean(&g.crps);
        parks.push(ParkScore {
            scenario: g.scenario.clone(),
            park_id: g.park_id.clone(),
            model: g.model.clone(),
            mean_crps: m,
            n: g.crps.len(),
        });
        by_scenario
            .entry((g.scenario.clone(), g.model.clone()))
            .or_default()
            .push(m);
    }
    let scenarios = by_scenario
        .into_iter()
        .map(|((scenario, model), means)| ScenarioScore {
            scenario,
            model,
            mean: mean(&means),
            std: population_std(&means),
            parks: means.len(),
        })
        .collect();
    Ok(ScoreSummary { parks, scenarios })
}

/// Write `park_id,model,timestamp,crps` rows.
pub fn write_scores_csv<W: std::io::Write>(
    writer: W,
    groups: &[ScoreGroup],
) -> Result<(), ScoringError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["park_id", "model", "timestamp", "crps"])?;
    for g in groups {
        for (t, c) in g.timestamps.iter().zip(&g.crps) {
            wtr.write_record([
                g.park_id.as_str(),
                g.model.as_str(),
                &format_timestamp(t),
                &c.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
