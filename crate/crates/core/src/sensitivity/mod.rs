//! Variance-based sensitivity analysis.
//!
//! A [`SaltelliDesign`] holds two independent `n x k` sample matrices `A` and
//! `B` over a per-feature box. The hybrid `AB_i` is `A` with column `i` taken
//! from `B`. One pass over `A`, `B` and every `AB_i` (`n * (k + 2)` model
//! evaluations) yields first-order and total-order Sobol indices for every
//! feature:
//!
//! ```text
//! V_i  = (1/n)  sum_j (fB[j] - m) * (fAB_i[j] - fA[j])
//! VT_i = (1/2n) sum_j (fA[j] - fAB_i[j])^2
//! S_i = V_i / V(Y),  S_Ti = VT_i / V(Y)
//! ```
//!
//! with `m` and `V(Y)` the mean and sample variance of the pooled `fA` and
//! `fB` values. Centring on `m` leaves the estimator's expectation unchanged
//! and removes the noise contributed by the output mean.

pub mod report;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{ModelError, QuantileForecaster};
use crate::stats::{mean, seeded_rng};

/// Base sample count used when none is configured.
pub const DEFAULT_BASE_SAMPLES: usize = 10_000;

/// Output variance below this is treated as zero.
pub const ZERO_VARIANCE: f64 = 1e-14;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("feature {0:?} has degenerate bounds (need finite lo < hi)")]
    DegenerateBounds(String),
    #[error("need at least 2 base samples, got {0}")]
    TooFewSamples(usize),
    #[error("design has {names} feature names but {bounds} bounds")]
    ShapeMismatch { names: usize, bounds: usize },
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite model output at row {row} of matrix {tag}")]
    NonFiniteOutput { row: usize, tag: String },
    #[error("output variance {0:e} is below the zero-variance threshold")]
    ZeroVariance(f64),
    #[error("design features {design:?} do not match model features {model:?}")]
    FeatureMismatch {
        design: Vec<String>,
        model: Vec<String>,
    },
    #[error("profiles do not share features, levels or model: {0}")]
    MismatchedProfiles(String),
    #[error("no profiles to aggregate")]
    NoProfiles,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the base matrices are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Independent seeded uniforms.
    #[default]
    Random,
    /// Halton points with a seeded random shift per dimension.
    Halton,
}

impl Sampler {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampler::Random => "random",
            Sampler::Halton => "halton",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaltelliDesign {
    pub feature_names: Vec<String>,
    pub n: usize,
    pub k: usize,
    pub bounds: Vec<(f64, f64)>,
    pub seed: u64,
    pub sampler: Sampler,
    /// Row-major `n x k`.
    pub a: Vec<f64>,
    /// Row-major `n x k`.
    pub b: Vec<f64>,
    fingerprint: String,
}

impl SaltelliDesign {
    /// Hex SHA-256 over names, bounds, seed, sampler and both matrices.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Model evaluations needed per output: `n * (k + 2)`.
    pub fn evaluations(&self) -> usize {
        self.n * (self.k + 2)
    }

    pub fn a_row(&self, j: usize) -> &[f64] {
        &self.a[j * self.k..(j + 1) * self.k]
    }

    pub fn b_row(&self, j: usize) -> &[f64] {
        &self.b[j * self.k..(j + 1) * self.k]
    }

    /// Row `j` of `AB_i`.
    pub fn ab_row_into(&self, i: usize, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.a_row(j));
        out[i] = self.b[j * self.k + i];
    }

    /// Materialise `AB_i` as a row-major `n x k` matrix.
    pub fn ab_matrix(&self, i: usize) -> Vec<f64> {
        let mut m = self.a.clone();
        for j in 0..self.n {
            m[j * self.k + i] = self.b[j * self.k + i];
        }
        m
    }

    /// Fill `out` with the design row at global index `r`, in the order
    /// `A`, `B`, `AB_1`, ..., `AB_k`.
    fn row_into(&self, r: usize, out: &mut [f64]) {
        let (block, j) = (r / self.n, r % self.n);
        match block {
            0 => out.copy_from_slice(self.a_row(j)),
            1 => out.copy_from_slice(self.b_row(j)),
            _ => self.ab_row_into(block - 2, j, out),
        }
    }
}

fn matrix_tag(block: usize) -> String {
    match block {
        0 => "A".to_string(),
        1 => "B".to_string(),
        i => format!("AB{}", i - 1),
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|p| *p * *p <= c).all(|p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Build a design over `bounds` (one `(lo, hi)` per feature name).
pub fn saltelli_design(
    feature_names: &[String],
    bounds: &[(f64, f64)],
    n: usize,
    seed: u64,
    sampler: Sampler,
) -> Result<SaltelliDesign, SensitivityError> {
    if feature_names.len() != bounds.len() {
        return Err(SensitivityError::ShapeMismatch {
            names: feature_names.len(),
            bounds: bounds.len(),
        });
    }
    if n < 2 {
        return Err(SensitivityError::TooFewSamples(n));
    }
    for (name, &(lo, hi)) in feature_names.iter().zip(bounds) {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SensitivityError::DegenerateBounds(name.clone()));
        }
    }
    let k = bounds.len();
    let scale = |u: f64, c: usize| {
        let (lo, hi) = bounds[c];
        (lo + (hi - lo) * u).min(hi)
    };
    let mut a = vec![0.0; n * k];
    let mut b = vec![0.0; n * k];
    let mut rng = seeded_rng(seed);
    match sampler {
        Sampler::Random => {
            for m in [&mut a, &mut b] {
                for (idx, v) in m.iter_mut().enumerate() {
                    *v = scale(rng.random::<f64>(), idx % k);
                }
            }
        }
        Sampler::Halton => {
            let bases = primes(2 * k);
            let shifts: Vec<f64> = (0..2 * k).map(|_| rng.random::<f64>()).collect();
            for j in 0..n {
                for c in 0..k {
                    for (half, m) in [(0, &mut a), (1, &mut b)] {
                        let d = half * k + c;
                        let u = (radical_inverse(j as u64 + 1, bases[d]) + shifts[d]).fract();
                        m[j * k + c] = scale(u, c);
                    }
                }
            }
        }
    }

    let mut h = Sha256::new();
    h.update(b"saltelli-design/1");
    h.update((k as u64).to_le_bytes());
    for name in feature_names {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    for &(lo, hi) in bounds {
        h.update(lo.to_bits().to_le_bytes());
        h.update(hi.to_bits().to_le_bytes());
    }
    h.update((n as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update(sampler.as_str().as_bytes());
    for v in a.iter().chain(&b) {
        h.update(v.to_bits().to_le_bytes());
    }
    let fingerprint = hex::encode(h.finalize());

    Ok(SaltelliDesign {
        feature_names: feature_names.to_vec(),
        n,
        k,
        bounds: bounds.to_vec(),
        seed,
        sampler,
        a,
        b,
        fingerprint,
    })
}

/// Model outputs over one design, index-aligned with its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutputs {
    pub fa: Vec<f64>,
    pub fb: Vec<f64>,
    pub fab: Vec<Vec<f64>>,
}

/// Raw outputs of a multi-output evaluation: `m` values per design row.
#[derive(Debug, Clone)]
pub struct MultiOutputs {
    n: usize,
    k: usize,
    m: usize,
    values: Vec<f64>,
}

impl MultiOutputs {
    pub fn outputs(&self) -> usize {
        self.m
    }

    /// Extract output `o`, failing on the first non-finite value in
    /// `A`, `B`, `AB_1`, ... order.
    pub fn split(&self, o: usize) -> Result<DesignOutputs, SensitivityError> {
        let (n, m) = (self.n, self.m);
        let block = |b: usize| -> Result<Vec<f64>, SensitivityError> {
            (0..n)
                .map(|j| {
                    let v = self.values[(b * n + j) * m + o];
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(SensitivityError::NonFiniteOutput {
                            row: j,
                            tag: matrix_tag(b),
                        })
                    }
                })
                .collect()
        };
        Ok(DesignOutputs {
            fa: block(0)?,
            fb: block(1)?,
            fab: (0..self.k)
                .map(|i| block(i + 2))
                .collect::<Result<_, _>>()?,
        })
    }
}

/// Evaluate `g` on every design row, writing `m` outputs per row.
///
/// Rows are processed in parallel chunks but each result lands in a fixed
/// slot, so the stored outputs do not depend on scheduling.
pub fn evaluate_design_multi<G>(g: G, design: &SaltelliDesign, m: usize) -> MultiOutputs
where
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    let rows = design.evaluations();
    let mut values = vec![0.0; rows * m];
    if m > 0 {
        values
            .par_chunks_mut(EVAL_CHUNK * m)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut x = vec![0.0; design.k];
                for (r, out) in chunk.chunks_exact_mut(m).enumerate() {
                    design.row_into(c * EVAL_CHUNK + r, &mut x);
                    g(&x, out);
                }
            });
    }
    MultiOutputs {
        n: design.n,
        k: design.k,
        m,
        values,
    }
}

/// Evaluate a scalar function on every design row.
pub fn evaluate_design<G>(g: G, design: &SaltelliDesign) -> Result<DesignOutputs, SensitivityError>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    evaluate_design_multi(|x, out| out[0] = g(x), design, 1).split(0)
}

fn pooled_mean(fa: &[f64], fb: &[f64]) -> f64 {
    fa.iter().chain(fb).sum::<f64>() / (fa.len() + fb.len()) as f64
}

/// Sample variance (n - 1 denominator) of the pooled `fA` and `fB` values.
pub fn output_variance(fa: &[f64], fb: &[f64]) -> f64 {
    let n = (fa.len() + fb.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let m = pooled_mean(fa, fb);
    fa.iter().chain(fb).map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), SensitivityError> {
    if a.len() != b.len() {
        return Err(SensitivityError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(SensitivityError::TooFewSamples(a.len()));
    }
    Ok(())
}

fn first_order_numerator(fa: &[f64], fb: &[f64], fab: &[f64], m: f64) -> f64 {
    fb.iter()
        .zip(fab)
        .zip(fa)
        .map(|((b, ab), a)| (b - m) * (ab - a))
        .sum::<f64>()
        / fa.len() as f64
}

fn total_order_numerator(fa: &[f64], fab: &[f64]) -> f64 {
    fa.iter()
        .zip(fab)
        .map(|(a, ab)| (a - ab) * (a - ab))
        .sum::<f64>()
        / (2.0 * fa.len() as f64)
}

pub fn sobol_first_order(fa: &[f64], fb: &[f64], fab_i: &[f64]) -> Result<f64, SensitivityError> {
    check_lengths(fa, fb)?;
    check_lengths(fa, fab_i)?;
    let v_y = output_variance(fa, fb);
    if v_y < ZERO_VARIANCE {
        return Err(SensitivityError::ZeroVariance(v_y));
    }
    Ok(first_order_numerator(fa, fb, fab_i, pooled_mean(fa, fb)) / v_y)
}

/// Jansen total-order estimate given the output variance.
pub fn sobol_total_order(fa: &[f64], fab_i: &[f64], v_y: f64) -> Result<f64, SensitivityError> {
    check_lengths(fa, fab_i)?;
    if !(v_y >= ZERO_VARIANCE) {
        return Err(SensitivityError::ZeroVariance(v_y));
    }
    Ok(total_order_numerator(fa, fab_i) / v_y)
}

/// Raw first- and total-order indices for one scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityIndices {
    pub s_first: Vec<f64>,
    pub s_total: Vec<f64>,
    pub v_y: f64,
}

/// All indices from one set of design outputs.
pub fn sobol_indices(outputs: &DesignOutputs) -> Result<SensitivityIndices, SensitivityError> {
    check_lengths(&outputs.fa, &outputs.fb)?;
    for fab in &outputs.fab {
        check_lengths(&outputs.fa, fab)?;
    }
    let v_y = output_variance(&outputs.fa, &outputs.fb);
    if v_y < ZERO_VARIANCE {
        return Err(SensitivityError::ZeroVariance(v_y));
    }
    let m = pooled_mean(&outputs.fa, &outputs.fb);
    let s_first = outputs
        .fab
        .iter()
        .map(|fab| first_order_numerator(&outputs.fa, &outputs.fb, fab, m) / v_y)
        .collect();
    let s_total = outputs
        .fab
        .iter()
        .map(|fab| total_order_numerator(&outputs.fa, fab) / v_y)
        .collect();
    Ok(SensitivityIndices {
        s_first,
        s_total,
        v_y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum LevelOutcome {
    Defined(SensitivityIndices),
    Undefined { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSensitivity {
    pub level: f64,
    pub outcome: LevelOutcome,
}

impl LevelSensitivity {
    pub fn indices(&self) -> Option<&SensitivityIndices> {
        match &self.outcome {
            LevelOutcome::Defined(ix) => Some(ix),
            LevelOutcome::Undefined { .. } => None,
        }
    }
}

/// Mean indices over the defined levels of one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedIndices {
    pub s_first: Vec<f64>,
    pub s_total: Vec<f64>,
    pub levels_used: usize,
}

/// Per-level indices of one park's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSensitivityProfile {
    pub park_id: String,
    pub model: String,
    pub feature_names: Vec<String>,
    pub design_fingerprint: String,
    pub base_samples: usize,
    pub evaluations: usize,
    pub levels: Vec<LevelSensitivity>,
    /// `None` when no level has defined indices.
    pub average: Option<AveragedIndices>,
}

fn average_levels(levels: &[LevelSensitivity], k: usize) -> Option<AveragedIndices> {
    let defined: Vec<&SensitivityIndices> = levels
        .iter()
        .filter_map(LevelSensitivity::indices)
        .collect();
    if defined.is_empty() {
        return None;
    }
    let col = |f: &dyn Fn(&SensitivityIndices) -> f64| {
        mean(&defined.iter().map(|ix| f(ix)).collect::<Vec<_>>())
    };
    Some(AveragedIndices {
        s_first: (0..k).map(|i| col(&|ix| ix.s_first[i])).collect(),
        s_total: (0..k).map(|i| col(&|ix| ix.s_total[i])).collect(),
        levels_used: defined.len(),
    })
}

/// Indices for every quantile level of `model`, from a single pass over
/// the design. The output for level `tau` is the `tau` component of the
/// final (rearranged, clamped) ECDF. A level whose outputs are non-finite
/// or have zero variance is recorded as undefined; other levels continue.
pub fn per_quantile_sa(
    model: &QuantileForecaster,
    design: &SaltelliDesign,
    park_id: &str,
) -> Result<QuantileSensitivityProfile, SensitivityError> {
    if model.feature_names != design.feature_names {
        return Err(SensitivityError::FeatureMismatch {
            design: design.feature_names.clone(),
            model: model.feature_names.clone(),
        });
    }
    let m = model.levels.len();
    let raw = evaluate_design_multi(
        |x, out| {
            if model.predict_values_into(x, out).is_err() {
                out.fill(f64::NAN);
            }
        },
        design,
        m,
    );
    let levels: Vec<LevelSensitivity> = model
        .levels
        .as_slice()
        .iter()
        .enumerate()
        .map(|(o, &tau)| {
            let outcome = match raw.split(o).and_then(|out| sobol_indices(&out)) {
                Ok(ix) => LevelOutcome::Defined(ix),
                Err(e) => {
                    log::warn!("{park_id} {} tau={tau}: {e}", model.kind.label());
                    LevelOutcome::Undefined {
                        reason: e.to_string(),
                    }
                }
            };
            LevelSensitivity {
                level: tau,
                outcome,
            }
        })
        .collect();
    Ok(QuantileSensitivityProfile {
        park_id: park_id.to_string(),
        model: model.kind.label().to_string(),
        feature_names: design.feature_names.clone(),
        design_fingerprint: design.fingerprint().to_string(),
        base_samples: design.n,
        evaluations: design.evaluations(),
        average: average_levels(&levels, design.k),
        levels,
    })
}

/// Scenario-level averages over parks.
///
/// `per_quantile_*[l][i]` is the mean over parks with a defined result at
/// level `l`; the grand mean runs over all defined (park, level) cells.
/// `None` marks cells with no defined contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregate {
    pub model: String,
    pub feature_names: Vec<String>,
    pub levels: Vec<f64>,
    pub parks: Vec<String>,
    pub design_fingerprints: Vec<String>,
    pub per_quantile_first: Vec<Vec<Option<f64>>>,
    pub per_quantile_total: Vec<Vec<Option<f64>>>,
    pub grand_first: Vec<Option<f64>>,
    pub grand_total: Vec<Option<f64>>,
}

/// Negative estimates clipped to zero for display.
pub fn clip_for_display(v: Option<f64>) -> Option<f64> {
    v.map(|x| x.max(0.0))
}

pub fn aggregate_profile(
    profiles: &[QuantileSensitivityProfile],
) -> Result<ScenarioAggregate, SensitivityError> {
    let first = profiles.first().ok_or(SensitivityError::NoProfiles)?;
    let levels: Vec<f64> = first.levels.iter().map(|l| l.level).collect();
    for p in &profiles[1..] {
        if p.feature_names != first.feature_names {
            return Err(SensitivityError::MismatchedProfiles(format!(
                "park {} features {:?} vs {:?}",
                p.park_id, p.feature_names, first.feature_names
            )));
        }
        if p.levels.iter().map(|l| l.level).ne(levels.iter().copied()) {
            return Err(SensitivityError::MismatchedProfiles(format!(
                "park {} levels differ",
                p.park_id
            )));
        }
        if p.model != first.model {
            return Err(SensitivityError::MismatchedProfiles(format!(
                "park {} model {} vs {}",
                p.park_id, p.model, first.model
            )));
        }
    }
    let k = first.feature_names.len();
    let mean_opt = |vals: Vec<f64>| {
        if vals.is_empty() {
            None
        } else {
            Some(mean(&vals))
        }
    };
    let cells = |l: usize, pick: fn(&SensitivityIndices) -> &Vec<f64>, i: usize| -> Vec<f64> {
        profiles
            .iter()
            .filter_map(|p| p.levels[l].indices().map(|ix| pick(ix)[i]))
            .collect()
    };
    let first_of: fn(&SensitivityIndices) -> &Vec<f64> = |ix| &ix.s_first;
    let total_of: fn(&SensitivityIndices) -> &Vec<f64> = |ix| &ix.s_total;
    let per_level = |pick| -> Vec<Vec<Option<f64>>> {
        (0..levels.len())
            .map(|l| (0..k).map(|i| mean_opt(cells(l, pick, i))).collect())
            .collect()
    };
    let grand = |pick| -> Vec<Option<f64>> {
        (0..k)
            .map(|i| mean_opt((0..levels.len()).flat_map(|l| cells(l, pick, i)).collect()))
            .collect()
    };
    let mut design_fingerprints: Vec<String> = profiles
        .iter()
        .map(|p| p.design_fingerprint.clone())
        .collect();
    design_fingerprints.sort();
    design_fingerprints.dedup();
    Ok(ScenarioAggregate {
        model: first.model.clone(),
        feature_names: first.feature_names.clone(),
        levels: levels.clone(),
        parks: profiles.iter().map(|p| p.park_id.clone()).collect(),
        design_fingerprints,
        per_quantile_first: per_level(first_of),
        per_quantile_total: per_level(total_of),
        grand_first: grand(first_of),
        grand_total: grand(total_of),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (1..=k).map(|i| format!("x{i}")).collect()
    }

    fn unit(k: usize, n: usize, seed: u64) -> SaltelliDesign {
        saltelli_design(&names(k), &vec![(0.0, 1.0); k], n, seed, Sampler::Random).unwrap()
    }

    #[test]
    fn single_column_substitution_is_b() {
        let d = unit(1, 64, 3);
        assert_eq!(d.ab_matrix(0), d.b);
    }

    #[test]
    fn design_is_deterministic_and_inside_bounds() {
        for sampler in [Sampler::Random, Sampler::Halton] {
            let bounds = vec![(-1.0, 2.0), (5.0, 5.5), (0.0, 1e-3)];
            let d1 = saltelli_design(&names(3), &bounds, 500, 9, sampler).unwrap();
            let d2 = saltelli_design(&names(3), &bounds, 500, 9, sampler).unwrap();
            assert_eq!(d1, d2);
            assert_eq!(d1.fingerprint(), d2.fingerprint());
            for (idx, v) in d1.a.iter().chain(&d1.b).enumerate() {
                let (lo, hi) = bounds[idx % 3];
                assert!(*v >= lo && *v <= hi);
            }
            let d3 = saltelli_design(&names(3), &bounds, 500, 10, sampler).unwrap();
            assert_ne!(d1.fingerprint(), d3.fingerprint());
        }
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let err = saltelli_design(&names(2), &[(0.0, 1.0), (0.5, 0.5)], 10, 0, Sampler::Random)
            .unwrap_err();
        assert!(matches!(err, SensitivityError::DegenerateBounds(f) if f == "x2"));
        assert!(matches!(
            saltelli_design(&names(1), &[(0.0, 1.0)], 1, 0, Sampler::Random),
            Err(SensitivityError::TooFewSamples(1))
        ));
    }

    #[test]
    fn evaluation_count_and_substitution_algebra() {
        let d = unit(3, 100, 1);
        assert_eq!(d.evaluations(), 500);
        let out = evaluate_design(|x| x[0], &d).unwrap();
        assert_eq!(out.fab[0], out.fb);
        assert_eq!(out.fab[1], out.fa);
        assert_eq!(out.fab[2], out.fa);
        let c = evaluate_design(|_| 0.25, &d).unwrap();
        assert!(c
            .fa
            .iter()
            .chain(&c.fb)
            .chain(c.fab.iter().flatten())
            .all(|v| *v == 0.25));
        assert!(matches!(
            sobol_indices(&c),
            Err(SensitivityError::ZeroVariance(_))
        ));
    }

    #[test]
    fn non_finite_output_names_the_row() {
        let d = unit(2, 50, 2);
        let bad = d.b_row(17).to_vec();
        let err =
            evaluate_design(|x| if x == bad.as_slice() { f64::NAN } else { x[0] }, &d).unwrap_err();
        match err {
            SensitivityError::NonFiniteOutput { row, tag } => {
                assert_eq!(row, 17);
                assert_eq!(tag, "B");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn projection_gives_exact_zeros() {
        let d = unit(4, 1000, 5);
        let ix = sobol_indices(&evaluate_design(|x| x[0], &d).unwrap()).unwrap();
        for i in 1..4 {
            assert_eq!(ix.s_first[i], 0.0);
            assert_eq!(ix.s_total[i], 0.0);
        }
        assert!((ix.s_first[0] - 1.0).abs() < 0.1);
        assert!((ix.s_total[0] - 1.0).abs() < 0.1);
    }

    #[test]
    fn pooled_variance_matches_definition() {
        let fa = [1.0, 2.0, 3.0];
        let fb = [4.0, 5.0, 6.0];
        assert!((output_variance(&fa, &fb) - 3.5).abs() < 1e-15);
        assert!(matches!(
            sobol_total_order(&fa, &fa, 0.0),
            Err(SensitivityError::ZeroVariance(_))
        ));
        assert!(matches!(
            sobol_first_order(&fa, &fb[..2], &fa),
            Err(SensitivityError::LengthMismatch(3, 2))
        ));
    }

    #[test]
    fn evaluation_is_independent_of_thread_count() {
        let d = unit(3, 2000, 8);
        let g = |x: &[f64]| (x[0] * 7.0).sin() + x[1] * x[2];
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| evaluate_design(g, &d).unwrap());
        let b = four.install(|| evaluate_design(g, &d).unwrap());
        assert_eq!(a, b);
    }

    fn profile(park: &str, s: &[[f64; 2]]) -> QuantileSensitivityProfile {
        let levels = s
            .iter()
            .enumerate()
            .map(|(l, v)| LevelSensitivity {
                level: 0.25 * (l + 1) as f64,
                outcome: LevelOutcome::Defined(SensitivityIndices {
                    s_first: v.to_vec(),
                    s_total: v.iter().map(|x| x + 0.1).collect(),
                    v_y: 1.0,
                }),
            })
            .collect::<Vec<_>>();
        QuantileSensitivityProfile {
            park_id: park.into(),
            model: "GBRT".into(),
            feature_names: names(2),
            design_fingerprint: "f".into(),
            base_samples: 10,
            evaluations: 40,
            average: average_levels(&levels, 2),
            levels,
        }
    }

    #[test]
    fn aggregation() {
        let p = profile("a", &[[0.2, 0.1], [0.4, -0.05]]);
        let single = aggregate_profile(std::slice::from_ref(&p)).unwrap();
        assert_eq!(single.per_quantile_first[0], vec![Some(0.2), Some(0.1)]);
        assert_eq!(
            single.grand_first,
            vec![Some(0.30000000000000004), Some(0.025)]
        );
        assert_eq!(
            p.average.as_ref().unwrap().s_first,
            vec![0.30000000000000004, 0.025]
        );
        assert_eq!(clip_for_display(Some(-0.05)), Some(0.0));

        let q = profile("b", &[[0.4, 0.1], [0.4, 0.1]]);
        let two = aggregate_profile(&[p.clone(), q]).unwrap();
        assert!((two.per_quantile_first[0][0].unwrap() - 0.3).abs() < 1e-15);

        let mut r = profile("c", &[[0.4, 0.1], [0.4, 0.1]]);
        r.feature_names = vec!["x1".into(), "other".into()];
        assert!(matches!(
            aggregate_profile(&[p.clone(), r]),
            Err(SensitivityError::MismatchedProfiles(_))
        ));

        let mut u = profile("d", &[[0.5, 0.5], [0.5, 0.5]]);
        u.levels[0].outcome = LevelOutcome::Undefined {
            reason: "flat".into(),
        };
        let mixed = aggregate_profile(&[p, u]).unwrap();
        assert_eq!(mixed.per_quantile_first[0][0], Some(0.2));
        assert!(matches!(
            aggregate_profile(&[]),
            Err(SensitivityError::NoProfiles)
        ));
    }

    #[test]
    fn radical_inverse_base_two() {
        let v: Vec<f64> = (1..5).map(|i| radical_inverse(i, 2)).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.75, 0.125]);
        assert_eq!(primes(5), vec![2, 3, 5, 7, 11]);
    }
}
