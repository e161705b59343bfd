//! Pipeline stages. Each stage reads the previous stage's artifacts under
//! the output root, writes its own, and finishes with a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use pfsa_core::dataset::{
    minmax_normalize, read_timeseries_csv, split_by_time, write_timeseries_csv, CsvSchema,
    NormalizationSpec, ParkMeta, RangeReport, Terrain, TimeSeriesDataset,
};
use pfsa_core::features::{
    build_feature_matrix_with, FeatureMatrix, MatrixScaling, VariabilityFeatureSpec,
    CALENDAR_FEATURES,
};
use pfsa_core::models::{predict_ecdf, train_model, ModelKind, ModelParams, QuantileForecaster};
use pfsa_core::scoring::{
    climatology_forecast, crps_ecdf, summarize_scores, write_scores_csv, ScoreGroup, ScoreSummary,
};
use pfsa_core::selection::{
    candidate_pool, fisher_rank, mrmr_rank, sfs_select, FeatureRanking, GbrtCrpsEvaluator,
    SelectionResult, SfsParams,
};
use pfsa_core::sensitivity::report::{
    aggregate_table_json, aggregate_table_text, interaction_gaps, write_curve_csv,
    write_sensitivity_csv, InteractionGap, ReportMetadata, ScenarioModelAggregate,
};
use pfsa_core::sensitivity::{
    aggregate_profile, per_quantile_sa, saltelli_design, QuantileSensitivityProfile,
};
use pfsa_core::stats::{derive_seed, mean};
use pfsa_core::synth::{gen_wind_parks, GroundTruth, SyntheticParkSpec, RUN_COLUMN};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, PipelineConfig, ReportFormat, Scenario};
use crate::error::{runtime, CliError, CliResult};
use crate::manifest::{require_stage, StageRecorder};

pub const STAGES: [&str; 7] = [
    "synth",
    "featurize",
    "select",
    "train",
    "eval",
    "sa",
    "report",
];

/// Everything a stage needs besides its inputs on disk.
pub struct Context {
    pub cfg: PipelineConfig,
    pub config_sha256: String,
    pub out: PathBuf,
    pub seed: u64,
    pub scenario: Option<Terrain>,
    pub model: Option<ModelKind>,
}

impl Context {
    fn scenarios(&self) -> CliResult<Vec<&Scenario>> {
        self.cfg.scenarios_for(self.scenario)
    }

    fn kinds(&self) -> CliResult<Vec<ModelKind>> {
        self.cfg.kinds_for(self.model)
    }

    fn recorder(&self, stage: &str) -> StageRecorder {
        StageRecorder::new(&self.out, stage)
    }

    fn finish(&self, rec: StageRecorder) -> CliResult<()> {
        let m = rec.finish(self.seed, &self.config_sha256)?;
        log::info!("{}: wrote {} files", m.stage, m.outputs.len());
        Ok(())
    }

    fn dir(&self, stage: &str, terrain: Terrain) -> PathBuf {
        self.out.join(stage).join(terrain.as_str())
    }
}

fn to_csv_bytes<F>(f: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> CliResult<T> {
    serde_json::from_str(text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(runtime)
}

/// Read a file produced by `stage`; a missing file means the stage has not
/// produced it for this scenario or model.
fn read_artifact(rec: &mut StageRecorder, path: &Path, stage: &str) -> CliResult<String> {
    if !path.exists() {
        log::error!("expected artifact {} is missing", path.display());
        return Err(CliError::MissingArtifact(stage.to_string()));
    }
    rec.read_string(path)
}

pub fn synth(ctx: &Context) -> CliResult<()> {
    if ctx.cfg.data.source != DataSource::Synthetic {
        return Err(CliError::config(
            "data.source",
            "synth needs source = \"synthetic\"",
        ));
    }
    let mut rec = ctx.recorder("synth");
    let specs: Vec<SyntheticParkSpec> = ctx
        .scenarios()?
        .iter()
        .flat_map(|s| {
            s.parks.iter().map(|p| {
                SyntheticParkSpec::preset(
                    s.terrain,
                    p.clone(),
                    ctx.cfg.data.n_hours,
                    derive_seed(ctx.seed, &format!("synth/{p}")),
                )
            })
        })
        .collect();
    let parks = gen_wind_parks(&specs).map_err(runtime)?;
    let dir = rec.stage_dir();
    for (spec, park) in specs.iter().zip(&parks) {
        let csv = to_csv_bytes(|buf| {
            write_timeseries_csv(buf, &park.dataset, Some((RUN_COLUMN, &park.row_runs)))?;
            Ok(())
        })?;
        rec.write(&dir.join(format!("{}.csv", spec.park_id)), &csv)?;
        let meta = ParkMeta {
            park_id: spec.park_id.clone(),
            terrain: spec.terrain,
            meta: park.dataset.meta.clone(),
        };
        rec.write_json(&dir.join(format!("{}.meta.json", spec.park_id)), &meta)?;
        rec.write_json(
            &dir.join(format!("{}.truth.json", spec.park_id)),
            &GroundTruth::for_spec(spec),
        )?;
    }
    ctx.finish(rec)
}

#[derive(Debug, Serialize, Deserialize)]
struct ParkScaling {
    normalization: NormalizationSpec,
    matrix: MatrixScaling,
    features: Vec<String>,
    skipped_features: Vec<String>,
    train_rows: usize,
    test_rows: usize,
    dropped_source_rows: usize,
    test_range: RangeReport,
    train_warnings: Vec<String>,
}

fn resolvable(ds: &TimeSeriesDataset, name: &str) -> bool {
    ds.column(name).is_some()
        || VariabilityFeatureSpec::parse(name).is_some_and(|s| ds.column(&s.base_feature).is_some())
        || CALENDAR_FEATURES.contains(&name)
}

pub fn featurize(ctx: &Context) -> CliResult<()> {
    let input_dir = match ctx.cfg.data.source {
        DataSource::Synthetic => {
            require_stage(&ctx.out, "synth")?;
            ctx.out.join("synth")
        }
        DataSource::Csv => ctx.cfg.paths.data_dir.clone().expect("validated"),
    };
    let data = &ctx.cfg.data;
    let mut schema = CsvSchema::new(data.columns.iter().cloned());
    schema.timestamp = data.timestamp_column.clone();
    schema.power = data.power_column.clone();
    schema.model_run = data.model_run_column.clone();

    let mut rec = ctx.recorder("featurize");
    for scenario in ctx.scenarios()? {
        for park in &scenario.parks {
            let meta_path = input_dir.join(format!("{park}.meta.json"));
            let csv_path = input_dir.join(format!("{park}.csv"));
            let stage = if data.source == DataSource::Synthetic {
                "synth"
            } else {
                "data"
            };
            let meta: ParkMeta =
                parse_json(&read_artifact(&mut rec, &meta_path, stage)?, &meta_path)?;
            if meta.terrain != scenario.terrain {
                log::warn!(
                    "{park}: meta terrain {} differs from scenario {}",
                    meta.terrain,
                    scenario.terrain
                );
            }
            let bytes = rec.read(&csv_path)?;
            let ds = read_timeseries_csv(bytes.as_slice(), &schema, &meta)
                .with_context(|| format!("loading {}", csv_path.display()))
                .map_err(runtime)?;
            if !ds.dropped_rows.is_empty() {
                log::warn!(
                    "{park}: dropped {} rows with missing cells",
                    ds.dropped_rows.len()
                );
            }
            let (train, test) = split_by_time(&ds, &ctx.cfg.split_spec()).map_err(runtime)?;
            let train_n = minmax_normalize(&train, None).map_err(runtime)?;
            let test_n = minmax_normalize(&test, Some(&train_n.spec)).map_err(runtime)?;
            for w in &train_n.report.warnings {
                log::warn!("{park}: {w}");
            }
            let (roster, skipped): (Vec<String>, Vec<String>) = ctx
                .cfg
                .features
                .roster
                .iter()
                .cloned()
                .partition(|f| resolvable(&train_n.dataset, f));
            for f in &skipped {
                log::warn!("{park}: feature {f} cannot be built and is skipped");
            }
            let horizons = &ctx.cfg.features.horizons;
            let train_m =
                build_feature_matrix_with(&train_n.dataset, &roster, horizons).map_err(runtime)?;
            let test_m =
                build_feature_matrix_with(&test_n.dataset, &roster, horizons).map_err(runtime)?;
            let scaling = train_m.fit_minmax();
            let train_m = train_m.apply_minmax(&scaling);
            let test_m = test_m.apply_minmax(&scaling);

            let dir = ctx.dir("featurize", scenario.terrain);
            let train_csv = to_csv_bytes(|b| Ok(train_m.write_csv(b)?))?;
            let test_csv = to_csv_bytes(|b| Ok(test_m.write_csv(b)?))?;
            rec.write(&dir.join(format!("{park}.train.csv")), &train_csv)?;
            rec.write(&dir.join(format!("{park}.test.csv")), &test_csv)?;
            let info = ParkScaling {
                normalization: train_n.spec.clone(),
                features: train_m.feature_names.clone(),
                matrix: scaling,
                skipped_features: skipped,
                train_rows: train_m.n_rows(),
                test_rows: test_m.n_rows(),
                dropped_source_rows: ds.dropped_rows.len(),
                test_range: test_n.report,
                train_warnings: train_n.report.warnings,
            };
            rec.write_json(&dir.join(format!("{park}.scaling.json")), &info)?;
        }
    }
    ctx.finish(rec)
}

fn load_matrix(rec: &mut StageRecorder, path: &Path) -> CliResult<FeatureMatrix> {
    let text = read_artifact(rec, path, "featurize")?;
    FeatureMatrix::read_csv(text.as_bytes())
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(runtime)
}

fn load_split(
    ctx: &Context,
    rec: &mut StageRecorder,
    terrain: Terrain,
    park: &str,
    split: &str,
) -> CliResult<FeatureMatrix> {
    load_matrix(
        rec,
        &ctx.dir("featurize", terrain)
            .join(format!("{park}.{split}.csv")),
    )
}

/// Row-wise concatenation over parks, restricted to `names`.
fn pool_rows(parks: &[FeatureMatrix], names: &[String]) -> CliResult<FeatureMatrix> {
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut target = Vec::new();
    for m in parks {
        let s = m.select(names).map_err(runtime)?;
        timestamps.extend_from_slice(&s.timestamps);
        data.extend_from_slice(&s.data);
        target.extend_from_slice(&s.target);
    }
    Ok(FeatureMatrix::new(names.to_vec(), timestamps, data, target))
}

/// Features present in every park, in the first park's order.
fn common_features(parks: &[FeatureMatrix]) -> Vec<String> {
    let Some(first) = parks.first() else {
        return Vec::new();
    };
    first
        .feature_names
        .iter()
        .filter(|f| parks.iter().all(|p| p.feature_index(f).is_some()))
        .cloned()
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionArtifact {
    pub selected: Vec<String>,
    pub pool: Vec<String>,
    pub baseline_crps: f64,
    pub trace: Vec<pfsa_core::selection::SfsStep>,
    pub fisher: FeatureRanking,
    pub mrmr: FeatureRanking,
}

pub fn select(ctx: &Context) -> CliResult<()> {
    require_stage(&ctx.out, "featurize")?;
    let sel = &ctx.cfg.selection;
    let levels = ctx.cfg.levels()?;
    let mut rec = ctx.recorder("select");
    for scenario in ctx.scenarios()? {
        let t = scenario.terrain;
        let parks = scenario
            .parks
            .iter()
            .map(|p| load_split(ctx, &mut rec, t, p, "train"))
            .collect::<CliResult<Vec<_>>>()?;
        let names = common_features(&parks);
        if names.is_empty() {
            return Err(runtime(anyhow!("{t}: parks share no features")));
        }
        let pooled = pool_rows(&parks, &names)?;
        let fisher = fisher_rank(&pooled, sel.fisher_bins).map_err(runtime)?;
        let mrmr =
            mrmr_rank(&pooled, sel.mi_bins, sel.filter_top.min(names.len())).map_err(runtime)?;
        let pool = candidate_pool(&[&fisher, &mrmr], sel.filter_top);
        log::info!("{t}: candidate pool {pool:?}");
        let mut gbrt = sel.gbrt.clone();
        gbrt.seed = derive_seed(ctx.seed, &format!("select/{t}"));
        let park_mats = parks
            .iter()
            .map(|m| m.select(&names).map_err(runtime))
            .collect::<CliResult<Vec<_>>>()?;
        let evaluator = GbrtCrpsEvaluator::new(park_mats, levels.clone(), gbrt)
            .with_validation_fraction(sel.validation_fraction);
        let params = SfsParams {
            budget: sel.budget,
            tol: sel.tol,
        };
        let SelectionResult {
            selected,
            pool,
            baseline_crps,
            trace,
        } = sfs_select(&pool, &params, &evaluator).map_err(runtime)?;
        log::info!("{t}: selected {selected:?}");
        let artifact = SelectionArtifact {
            selected,
            pool,
            baseline_crps,
            trace,
            fisher,
            mrmr,
        };
        rec.write_json(&ctx.dir("select", t).join("selection.json"), &artifact)?;
    }
    ctx.finish(rec)
}

fn load_selection(
    ctx: &Context,
    rec: &mut StageRecorder,
    terrain: Terrain,
) -> CliResult<Vec<String>> {
    let path = ctx.dir("select", terrain).join("selection.json");
    let artifact: SelectionArtifact = parse_json(&read_artifact(rec, &path, "select")?, &path)?;
    if artifact.selected.is_empty() {
        return Err(runtime(anyhow!(
            "{terrain}: no feature improved on climatology; nothing to train"
        )));
    }
    Ok(artifact.selected)
}

fn model_path(ctx: &Context, terrain: Terrain, park: &str, kind: ModelKind) -> PathBuf {
    ctx.dir("train", terrain)
        .join(format!("{park}.{}.json", kind.cli_name()))
}

fn params_for(ctx: &Context, terrain: Terrain, park: &str, kind: ModelKind) -> ModelParams {
    let seed = derive_seed(
        ctx.seed,
        &format!("train/{terrain}/{park}/{}", kind.cli_name()),
    );
    let m = &ctx.cfg.models;
    match kind {
        ModelKind::Gbrt => ModelParams::Gbrt(pfsa_core::models::gbrt::GbrtParams {
            seed,
            ..m.gbrt.clone()
        }),
        ModelKind::Svr => ModelParams::Svr(pfsa_core::models::kernel_qr::KernelQrParams {
            seed,
            ..m.svr.clone()
        }),
        ModelKind::Mqnn => ModelParams::Mqnn(pfsa_core::models::mqnn::MqnnParams {
            seed,
            ..m.mqnn.clone()
        }),
    }
}

pub fn train(ctx: &Context) -> CliResult<()> {
    require_stage(&ctx.out, "select")?;
    let levels = ctx.cfg.levels()?;
    let kinds = ctx.kinds()?;
    let mut rec = ctx.recorder("train");
    for scenario in ctx.scenarios()? {
        let t = scenario.terrain;
        let selected = load_selection(ctx, &mut rec, t)?;
        let mut jobs = Vec::new();
        for park in &scenario.parks {
            let m = load_split(ctx, &mut rec, t, park, "train")?
                .select(&selected)
                .map_err(runtime)?;
            for &kind in &kinds {
                jobs.push((park.clone(), kind, m.clone()));
            }
        }
        let trained: Vec<(String, ModelKind, String)> = jobs
            .par_iter()
            .map(|(park, kind, m)| {
                log::info!("{t}: training {kind} for {park}");
                let model = train_model(m, &levels, &params_for(ctx, t, park, *kind))
                    .with_context(|| format!("training {kind} for {park}"))?;
                Ok((park.clone(), *kind, model.to_json()?))
            })
            .collect::<anyhow::Result<_>>()
            .map_err(runtime)?;
        for (park, kind, json) in trained {
            rec.write(
                &model_path(ctx, t, &park, kind),
                format!("{json}\n").as_bytes(),
            )?;
        }
    }
    ctx.finish(rec)
}

fn load_model(
    ctx: &Context,
    rec: &mut StageRecorder,
    terrain: Terrain,
    park: &str,
    kind: ModelKind,
) -> CliResult<QuantileForecaster> {
    let path = model_path(ctx, terrain, park, kind);
    let text = read_artifact(rec, &path, "train")?;
    QuantileForecaster::from_json(&text)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

pub const CLIMATOLOGY: &str = "CLIMATOLOGY";

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scores: ScoreSummary,
    /// `1 - mean CRPS / climatology mean CRPS` per model.
    pub skill: BTreeMap<String, f64>,
}

pub fn eval(ctx: &Context) -> CliResult<()> {
    require_stage(&ctx.out, "train")?;
    let levels = ctx.cfg.levels()?;
    let kinds = ctx.kinds()?;
    let mut rec = ctx.recorder("eval");
    for scenario in ctx.scenarios()? {
        let t = scenario.terrain;
        let selected = load_selection(ctx, &mut rec, t)?;
        let mut groups = Vec::new();
        for park in &scenario.parks {
            let train_m = load_split(ctx, &mut rec, t, park, "train")?;
            let test_m = load_split(ctx, &mut rec, t, park, "test")?
                .select(&selected)
                .map_err(runtime)?;
            let clim = climatology_forecast(&train_m.target, &levels);
            let group = |model: &str, crps: Vec<f64>| ScoreGroup {
                scenario: t.as_str().to_string(),
                park_id: park.clone(),
                model: model.to_string(),
                timestamps: test_m.timestamps.clone(),
                crps,
            };
            groups.push(group(
                CLIMATOLOGY,
                test_m.target.iter().map(|y| crps_ecdf(&clim, *y)).collect(),
            ));
            for &kind in &kinds {
                let model = load_model(ctx, &mut rec, t, park, kind)?;
                let crps = (0..test_m.n_rows())
                    .into_par_iter()
                    .map(|i| {
                        predict_ecdf(&model, test_m.row(i)).map(|f| crps_ecdf(&f, test_m.target[i]))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(runtime)?;
                groups.push(group(kind.label(), crps));
            }
        }
        let scores = summarize_scores(&groups).map_err(runtime)?;
        let clim_mean = scores
            .scenarios
            .iter()
            .find(|s| s.model == CLIMATOLOGY)
            .map(|s| s.mean)
            .expect("climatology group present");
        let skill = scores
            .scenarios
            .iter()
            .filter(|s| s.model != CLIMATOLOGY)
            .map(|s| (s.model.clone(), 1.0 - s.mean / clim_mean))
            .collect();
        for s in &scores.scenarios {
            log::info!("{t} {}: mean CRPS {:.5} (sd {:.5})", s.model, s.mean, s.std);
        }
        let dir = ctx.dir("eval", t);
        rec.write(
            &dir.join("scores.csv"),
            &to_csv_bytes(|b| Ok(write_scores_csv(b, &groups)?))?,
        )?;
        rec.write_json(&dir.join("summary.json"), &EvalSummary { scores, skill })?;
    }
    ctx.finish(rec)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DesignRecord {
    pub features: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    pub metadata: ReportMetadata,
}

pub fn sa(ctx: &Context) -> CliResult<()> {
    require_stage(&ctx.out, "train")?;
    let kinds = ctx.kinds()?;
    let mut rec = ctx.recorder("sa");
    for scenario in ctx.scenarios()? {
        let t = scenario.terrain;
        let selected = load_selection(ctx, &mut rec, t)?;
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); selected.len()];
        for park in &scenario.parks {
            let m = load_split(ctx, &mut rec, t, park, "train")?
                .select(&selected)
                .map_err(runtime)?;
            for (b, (lo, hi)) in bounds.iter_mut().zip(&m.bounds) {
                b.0 = b.0.min(*lo);
                b.1 = b.1.max(*hi);
            }
        }
        let design = saltelli_design(
            &selected,
            &bounds,
            ctx.cfg.sa.n,
            derive_seed(ctx.seed, &format!("sa/{t}")),
            ctx.cfg.sa.sampler,
        )
        .map_err(runtime)?;
        log::info!(
            "{t}: design {} ({} base samples, {} evaluations per model)",
            &design.fingerprint()[..12],
            design.n,
            design.evaluations()
        );
        let mut profiles = Vec::new();
        for &kind in &kinds {
            for park in &scenario.parks {
                let model = load_model(ctx, &mut rec, t, park, kind)?;
                log::info!("{t}: sensitivity of {kind} for {park}");
                profiles.push(per_quantile_sa(&model, &design, park).map_err(runtime)?);
            }
        }
        let dir = ctx.dir("sa", t);
        let csv = to_csv_bytes(|b| Ok(write_sensitivity_csv(b, t.as_str(), &profiles)?))?;
        rec.write(&dir.join("sensitivity.csv"), &csv)?;
        rec.write_json(&dir.join("profiles.json"), &profiles)?;
        let record = DesignRecord {
            features: selected,
            bounds,
            metadata: ReportMetadata::for_design(&design),
        };
        rec.write_json(&dir.join("design.json"), &record)?;
    }
    ctx.finish(rec)
}

pub fn report(ctx: &Context) -> CliResult<()> {
    require_stage(&ctx.out, "sa")?;
    let formats = &ctx.cfg.report.formats;
    let mut rec = ctx.recorder("report");
    let dir = rec.stage_dir();
    let mut aggregates = Vec::new();
    let mut gaps: BTreeMap<String, BTreeMap<String, Vec<InteractionGap>>> = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    for scenario in ctx.scenarios()? {
        let t = scenario.terrain;
        let sa_dir = ctx.dir("sa", t);
        let path = sa_dir.join("profiles.json");
        let profiles: Vec<QuantileSensitivityProfile> =
            parse_json(&read_artifact(&mut rec, &path, "sa")?, &path)?;
        let path = sa_dir.join("design.json");
        let design: DesignRecord = parse_json(&read_artifact(&mut rec, &path, "sa")?, &path)?;
        metadata.insert(t.as_str().to_string(), design.metadata);
        let mut by_model: BTreeMap<String, Vec<QuantileSensitivityProfile>> = BTreeMap::new();
        for p in profiles {
            by_model.entry(p.model.clone()).or_default().push(p);
        }
        for (model, ps) in by_model {
            let aggregate = aggregate_profile(&ps).map_err(runtime)?;
            gaps.entry(t.as_str().to_string())
                .or_default()
                .insert(model.clone(), interaction_gaps(&aggregate));
            if formats.contains(&ReportFormat::Csv) {
                for (suffix, first) in [("first", true), ("total", false)] {
                    let csv = to_csv_bytes(|b| Ok(write_curve_csv(b, &aggregate, first)?))?;
                    rec.write(
                        &dir.join("curves").join(format!("{t}_{model}_{suffix}.csv")),
                        &csv,
                    )?;
                }
            }
            aggregates.push(ScenarioModelAggregate {
                scenario: t,
                aggregate,
            });
        }
    }
    if formats.contains(&ReportFormat::Json) {
        rec.write_json(&dir.join("table.json"), &aggregate_table_json(&aggregates))?;
        rec.write_json(&dir.join("aggregates.json"), &aggregates)?;
        rec.write_json(&dir.join("interactions.json"), &gaps)?;
        rec.write_json(&dir.join("metadata.json"), &metadata)?;
    }
    if formats.contains(&ReportFormat::Text) {
        rec.write(
            &dir.join("table.txt"),
            aggregate_table_text(&aggregates).as_bytes(),
        )?;
    }
    for a in &aggregates {
        if let Some((i, _)) = a
            .aggregate
            .grand_first
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
        {
            log::info!(
                "{} {}: largest grand-average S_i is {} (mean over features {:.3})",
                a.scenario,
                a.aggregate.model,
                a.aggregate.feature_names[i],
                mean(
                    &a.aggregate
                        .grand_first
                        .iter()
                        .flatten()
                        .copied()
                        .collect::<Vec<_>>()
                )
            );
        }
    }
    ctx.finish(rec)
}

pub fn run_stage(ctx: &Context, stage: &str) -> CliResult<()> {
    log::info!("stage {stage}");
    match stage {
        "synth" => synth(ctx),
        "featurize" => featurize(ctx),
        "select" => select(ctx),
        "train" => train(ctx),
        "eval" => eval(ctx),
        "sa" => sa(ctx),
        "report" => report(ctx),
        other => Err(CliError::UnknownCommand(other.to_string())),
    }
}

/// Every stage in order; `synth` only for synthetic input.
pub fn pipeline(ctx: &Context) -> CliResult<()> {
    for stage in STAGES {
        if stage == "synth" && ctx.cfg.data.source != DataSource::Synthetic {
            continue;
        }
        run_stage(ctx, stage)?;
    }
    Ok(())
}
