//! Synthetic wind parks with a known dominant driver, plus analytic
//! benchmark functions for checking the Sobol estimators.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{DateTime, Duration, DurationRound, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Terrain, TimeSeriesDataset};
use crate::stats::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic park spec: {0}")]
    InvalidSpec(String),
    #[error("input {index} = {value} is outside the domain")]
    OutOfDomain { index: usize, value: f64 },
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Raw columns written by the generator, in CSV order.
pub const GENERATED_COLUMNS: [&str; 7] = ["AP", "H", "T", "WDM100m", "WDZ100m", "WS100m", "WS10m"];

/// Column holding the NWP run issue time of each row.
pub const RUN_COLUMN: &str = "nwp_run";

pub const DOMINANT_DRIVER: &str = "WS100m";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParkSpec {
    pub park_id: String,
    pub terrain: Terrain,
    pub n_hours: usize,
    pub seed: u64,
    pub start: DateTime<Utc>,
    /// Power curve corners in m/s.
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    /// Standard deviation of the multiplicative power noise.
    pub noise_sd: f64,
    /// Fractional power loss when the wind blows from the unfavourable
    /// direction.
    pub direction_coupling: f64,
    /// Installed capacity in kW; stored as the `max_power` meta entry.
    pub rated_power: f64,
}

impl SyntheticParkSpec {
    /// Terrain preset: offshore is the least noisy, complex terrain the
    /// noisiest and the only one with a noticeable direction effect.
    pub fn preset(terrain: Terrain, park_id: impl Into<String>, n_hours: usize, seed: u64) -> Self {
        let (noise_sd, direction_coupling) = match terrain {
            Terrain::Os => (0.10, 0.0),
            Terrain::Nct => (0.15, 0.03),
            Terrain::Ct => (0.20, 0.15),
        };
        Self {
            park_id: park_id.into(),
            terrain,
            n_hours,
            seed,
            start: Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
            cut_in: 3.5,
            rated_speed: 13.0,
            cut_out: 25.0,
            noise_sd,
            direction_coupling,
            rated_power: 3000.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_hours < 1000 {
            return bad("n_hours must be at least 1000");
        }
        if !(self.cut_in < self.rated_speed && self.rated_speed < self.cut_out) {
            return bad("need cut_in < rated_speed < cut_out");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.direction_coupling) {
            return bad("direction_coupling must lie in [0, 1)");
        }
        if !(self.rated_power > 0.0 && self.rated_power.is_finite()) {
            return bad("rated_power must be positive");
        }
        Ok(())
    }
}

/// Normalised power curve: a logistic ramp rescaled to hit 0 at `cut_in`
/// and 1 at `rated_speed`, flat until `cut_out`, zero outside.
pub fn power_curve(ws: f64, cut_in: f64, rated: f64, cut_out: f64) -> f64 {
    const STEEPNESS: f64 = 10.0;
    if ws < cut_in || ws >= cut_out {
        return 0.0;
    }
    if ws >= rated {
        return 1.0;
    }
    let s = |z: f64| 1.0 / (1.0 + (-z).exp());
    let r = (ws - cut_in) / (rated - cut_in);
    let (lo, hi) = (s(-STEEPNESS / 2.0), s(STEEPNESS / 2.0));
    ((s(STEEPNESS * (r - 0.5)) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Stationary AR(1) with unit-free marginal standard deviation `sd`.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64, sd: f64) -> Vec<f64> {
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut z = sd * normal(rng);
    for _ in 0..n {
        out.push(z);
        z = phi * z + innov * normal(rng);
    }
    out
}

/// One generated park: the raw dataset (power in kW) and the pre-clamp
/// normalised power, kept for checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPark {
    pub dataset: TimeSeriesDataset,
    /// Issue time of the NWP run behind each row.
    pub row_runs: Vec<DateTime<Utc>>,
    pub unclamped_power: Vec<f64>,
}

/// Generator parameters and the known answer, written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticParkSpec,
    pub dominant_driver: String,
    pub note: String,
}

impl GroundTruth {
    pub fn for_spec(spec: &SyntheticParkSpec) -> Self {
        Self {
            spec: spec.clone(),
            dominant_driver: DOMINANT_DRIVER.to_string(),
            note: "power is a logistic power curve of WS100m with multiplicative noise; WS10m is shear-scaled \
                   WS100m; WDZ100m/WDM100m enter power only through direction_coupling; AP, H and T are \
                   independent nuisances"
                .to_string(),
        }
    }
}

pub fn gen_wind_park(spec: &SyntheticParkSpec) -> Result<SyntheticPark, SynthError> {
    spec.validate()?;
    let n = spec.n_hours;
    let stream = |label: &str| seeded_rng(derive_seed(spec.seed, label));

    let timestamps: Vec<DateTime<Utc>> = (0..n)
        .map(|i| spec.start + Duration::hours(i as i64))
        .collect();
    let phase = |t: &DateTime<Utc>, period_h: f64| {
        let hours = (*t - Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()).num_hours() as f64;
        2.0 * PI * hours / period_h
    };

    let mut rng = stream("ws100");
    let z = ar1(&mut rng, n, 0.97, 0.45);
    let ws100: Vec<f64> = timestamps
        .iter()
        .zip(&z)
        .map(|(t, z)| {
            let log_ws =
                8f64.ln() + z + 0.10 * phase(t, 24.0).sin() + 0.20 * phase(t, 8766.0).cos();
            log_ws.exp().max(0.1)
        })
        .collect();

    let mut rng = stream("ws10");
    let shear = (10.0f64 / 100.0).powf(0.14);
    let ws10: Vec<f64> = ws100
        .iter()
        .map(|w| (w * shear * (0.08 * normal(&mut rng)).exp()).max(0.05))
        .collect();

    let mut rng = stream("direction");
    let mut theta = 2.0 * PI * rng.random::<f64>();
    let mut dir = Vec::with_capacity(n);
    for _ in 0..n {
        dir.push(theta);
        theta = (theta + 0.15 * normal(&mut rng)).rem_euclid(2.0 * PI);
    }
    let wdz: Vec<f64> = dir.iter().map(|d| d.sin()).collect();
    let wdm: Vec<f64> = dir.iter().map(|d| d.cos()).collect();

    let mut rng = stream("pressure");
    let ap: Vec<f64> = ar1(&mut rng, n, 0.99, 8.0)
        .into_iter()
        .map(|v| 1013.0 + v)
        .collect();
    let mut rng = stream("humidity");
    let h: Vec<f64> = ar1(&mut rng, n, 0.95, 12.0)
        .into_iter()
        .map(|v| (72.0 + v).clamp(5.0, 100.0))
        .collect();
    let mut rng = stream("temperature");
    let t: Vec<f64> = ar1(&mut rng, n, 0.95, 2.0)
        .into_iter()
        .zip(&timestamps)
        .map(|(v, ts)| 10.0 - 8.0 * phase(ts, 8766.0).cos() - 3.0 * phase(ts, 24.0).cos() + v)
        .collect();

    let mut rng = stream("power");
    let lower = (-3.0 * spec.noise_sd).max(-1.0);
    let upper = 3.0 * spec.noise_sd;
    let mut unclamped = Vec::with_capacity(n);
    for i in 0..n {
        let base = power_curve(ws100[i], spec.cut_in, spec.rated_speed, spec.cut_out);
        let loss = spec.direction_coupling * (1.0 - wdm[i]) / 2.0;
        let e = (spec.noise_sd * normal(&mut rng)).clamp(lower, upper);
        unclamped.push(base * (1.0 - loss) * (1.0 + e));
    }
    let power: Vec<f64> = unclamped
        .iter()
        .map(|p| p.clamp(0.0, 1.0) * spec.rated_power)
        .collect();

    let six_hours = Duration::hours(6);
    let row_runs: Vec<DateTime<Utc>> = timestamps
        .iter()
        .map(|t| {
            t.duration_trunc(six_hours)
                .expect("hourly timestamps truncate")
        })
        .collect();
    let mut runs = row_runs.clone();
    runs.dedup();

    let elevation = match spec.terrain {
        Terrain::Os => 0.0,
        Terrain::Nct => 60.0,
        Terrain::Ct => 650.0,
    };
    let meta = BTreeMap::from([
        ("max_power".to_string(), spec.rated_power),
        ("max_diameter".to_string(), 120.0),
        ("max_hub_height".to_string(), 100.0),
        ("elevation".to_string(), elevation),
    ]);
    let columns = GENERATED_COLUMNS
        .iter()
        .zip([ap, h, t, wdm, wdz, ws100, ws10])
        .map(|(name, col)| (name.to_string(), col))
        .collect();
    Ok(SyntheticPark {
        dataset: TimeSeriesDataset {
            park_id: spec.park_id.clone(),
            terrain: spec.terrain,
            timestamps,
            columns,
            power,
            meta,
            model_runs: Some(runs),
            dropped_rows: Vec::new(),
        },
        row_runs,
        unclamped_power: unclamped,
    })
}

/// Generate several parks in parallel; output order follows `specs`.
pub fn gen_wind_parks(specs: &[SyntheticParkSpec]) -> Result<Vec<SyntheticPark>, SynthError> {
    specs.par_iter().map(gen_wind_park).collect()
}

/// `sin x1 + a sin^2 x2 + b x3^4 sin x1` on `[-pi, pi]^3`.
pub fn ishigami(x: &[f64], a: f64, b: f64) -> Result<f64, SynthError> {
    if x.len() != 3 {
        return Err(SynthError::DimensionMismatch {
            expected: 3,
            got: x.len(),
        });
    }
    if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(v.abs() <= PI)) {
        return Err(SynthError::OutOfDomain { index, value });
    }
    let s1 = x[0].sin();
    let s2 = x[1].sin();
    Ok(s1 + a * s2 * s2 + b * x[2].powi(4) * s1)
}

/// Analytic first- and total-order indices of the Ishigami function.
pub fn ishigami_indices(a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let pi4 = PI.powi(4);
    let pi8 = PI.powi(8);
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi8 * (1.0 / 18.0 - 1.0 / 50.0);
    let v = v1 + v2 + v13;
    ([v1 / v, v2 / v, 0.0], [(v1 + v13) / v, v2 / v, v13 / v])
}

/// Sobol g-function `prod_i (|4 x_i - 2| + a_i) / (1 + a_i)` on `[0, 1]^k`.
pub fn g_function(x: &[f64], a: &[f64]) -> Result<f64, SynthError> {
    if x.len() != a.len() {
        return Err(SynthError::DimensionMismatch {
            expected: a.len(),
            got: x.len(),
        });
    }
    if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(SynthError::OutOfDomain { index, value });
    }
    if let Some((index, &value)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(SynthError::OutOfDomain { index, value });
    }
    Ok(x.iter()
        .zip(a)
        .map(|(xi, ai)| ((4.0 * xi - 2.0).abs() + ai) / (1.0 + ai))
        .product())
}

/// Analytic first- and total-order indices of the g-function.
pub fn g_function_indices(a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let vi: Vec<f64> = a
        .iter()
        .map(|ai| (1.0 / 3.0) / ((1.0 + ai) * (1.0 + ai)))
        .collect();
    let prod: f64 = vi.iter().map(|v| 1.0 + v).product();
    let v = prod - 1.0;
    let first = vi.iter().map(|x| x / v).collect();
    let total = vi.iter().map(|x| x * prod / (1.0 + x) / v).collect();
    (first, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_timeseries_csv;
    use crate::stats::{equal_frequency_bins, mutual_information};

    fn csv_bytes(p: &SyntheticPark) -> Vec<u8> {
        let mut buf = Vec::new();
        write_timeseries_csv(&mut buf, &p.dataset, Some((RUN_COLUMN, &p.row_runs))).unwrap();
        buf
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SyntheticParkSpec::preset(Terrain::Nct, "p1", 1500, 7);
        let a = gen_wind_park(&spec).unwrap();
        let b = gen_wind_park(&spec).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        let other = gen_wind_park(&SyntheticParkSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(csv_bytes(&a), csv_bytes(&other));
    }

    #[test]
    fn power_curve_corners() {
        let base = SyntheticParkSpec::preset(Terrain::Os, "p", 1000, 1);
        let below = SyntheticParkSpec {
            noise_sd: 0.0,
            cut_in: 500.0,
            rated_speed: 600.0,
            cut_out: 700.0,
            ..base.clone()
        };
        assert!(gen_wind_park(&below)
            .unwrap()
            .dataset
            .power
            .iter()
            .all(|p| *p == 0.0));
        let above = SyntheticParkSpec {
            noise_sd: 0.0,
            cut_in: 0.0,
            rated_speed: 0.05,
            cut_out: 1e6,
            ..base
        };
        let park = gen_wind_park(&above).unwrap();
        assert!(park
            .dataset
            .power
            .iter()
            .all(|p| *p == park.dataset.meta["max_power"]));
        assert_eq!(power_curve(30.0, 3.5, 13.0, 25.0), 0.0);
        assert_eq!(power_curve(3.5, 3.5, 13.0, 25.0), 0.0);
        assert!((power_curve(8.25, 3.5, 13.0, 25.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn power_range_before_and_after_clamping() {
        for terrain in Terrain::ALL {
            let spec = SyntheticParkSpec::preset(terrain, "p", 3000, 3);
            let park = gen_wind_park(&spec).unwrap();
            let hi = 1.0 + 3.0 * spec.noise_sd;
            assert!(park.unclamped_power.iter().all(|p| (0.0..=hi).contains(p)));
            assert!(park
                .dataset
                .power
                .iter()
                .all(|p| (0.0..=spec.rated_power).contains(p)));
        }
    }

    #[test]
    fn driver_carries_the_most_information() {
        for seed in 0..3 {
            for terrain in Terrain::ALL {
                let park =
                    gen_wind_park(&SyntheticParkSpec::preset(terrain, "p", 4000, seed)).unwrap();
                let y = equal_frequency_bins(&park.dataset.power, 16);
                let mi = |name: &str| {
                    mutual_information(
                        &equal_frequency_bins(park.dataset.column(name).unwrap(), 16),
                        &y,
                    )
                };
                let driver = mi(DOMINANT_DRIVER);
                for other in GENERATED_COLUMNS.iter().filter(|c| **c != DOMINANT_DRIVER) {
                    assert!(driver > mi(other), "{terrain} seed {seed}: {other}");
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let ok = SyntheticParkSpec::preset(Terrain::Ct, "p", 1000, 0);
        for bad in [
            SyntheticParkSpec {
                n_hours: 999,
                ..ok.clone()
            },
            SyntheticParkSpec {
                rated_speed: 2.0,
                ..ok.clone()
            },
            SyntheticParkSpec {
                noise_sd: -0.1,
                ..ok.clone()
            },
        ] {
            assert!(matches!(
                gen_wind_park(&bad),
                Err(SynthError::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn hourly_runs_every_six_hours() {
        let park = gen_wind_park(&SyntheticParkSpec::preset(Terrain::Os, "p", 1000, 0)).unwrap();
        let runs = park.dataset.model_runs.as_ref().unwrap();
        assert_eq!(runs.len(), 1000usize.div_ceil(6));
        assert_eq!(park.row_runs[7], park.dataset.timestamps[6]);
    }

    #[test]
    fn ishigami_examples() {
        assert_eq!(ishigami(&[0.0, 0.0, 0.0], 7.0, 0.1).unwrap(), 0.0);
        assert!((ishigami(&[PI / 2.0, 0.0, 0.0], 7.0, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert!((ishigami(&[PI / 2.0, PI / 2.0, 0.0], 7.0, 0.1).unwrap() - 8.0).abs() < 1e-14);
        assert!(matches!(
            ishigami(&[4.0, 0.0, 0.0], 7.0, 0.1),
            Err(SynthError::OutOfDomain { index: 0, .. })
        ));
    }

    #[test]
    fn g_function_examples() {
        let a = [0.0, 1.0, 9.0];
        let expected: f64 = a.iter().map(|ai| ai / (1.0 + ai)).product();
        assert_eq!(g_function(&[0.5; 3], &a).unwrap(), expected);
        assert_eq!(g_function(&[0.0], &[0.0]).unwrap(), 2.0);
        assert_eq!(g_function(&[0.0, 1.0], &[0.0, 0.0]).unwrap(), 4.0);
        assert!(matches!(
            g_function(&[1.5], &[0.0]),
            Err(SynthError::OutOfDomain { .. })
        ));
        assert!(matches!(
            g_function(&[0.5], &[-1.0]),
            Err(SynthError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn analytic_indices_match_reference_values() {
        let (s, st) = ishigami_indices(7.0, 0.1);
        let expect_s = [0.313905, 0.442411, 0.0];
        let expect_st = [0.557589, 0.442411, 0.243684];
        for i in 0..3 {
            assert!((s[i] - expect_s[i]).abs() < 1e-6);
            assert!((st[i] - expect_st[i]).abs() < 1e-6);
        }
        let (s, st) = g_function_indices(&[0.0, 1.0, 9.0]);
        for (got, want) in s.iter().zip([0.741962, 0.185491, 0.0074196]) {
            assert!((got - want).abs() < 1e-6);
        }
        for (got, want) in st.iter().zip([0.806472, 0.248145, 0.010717]) {
            assert!((got - want).abs() < 1e-6);
        }
    }
}
