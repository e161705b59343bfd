//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 42
//!
//! [paths]
//! out_dir = "out"            # relative to the config file
//!
//! [data]
//! source = "synthetic"       # or "csv" with data_dir set
//!
//! [[scenarios]]
//! terrain = "NCT"
//! parks = ["nct_1", "nct_2"]
//! ```
//!
//! Every other table is optional and falls back to library defaults; see
//! `configs/synthetic.toml` for a complete example.

use std::path::{Path, PathBuf};

use pfsa_core::dataset::{SplitSpec, Terrain};
use pfsa_core::features::HorizonHours;
use pfsa_core::models::gbrt::GbrtParams;
use pfsa_core::models::kernel_qr::KernelQrParams;
use pfsa_core::models::mqnn::MqnnParams;
use pfsa_core::models::{ModelKind, QuantileLevels};
use pfsa_core::selection::{
    SfsParams, DEFAULT_FILTER_TOP, DEFAULT_FISHER_BINS, DEFAULT_MI_BINS,
    DEFAULT_VALIDATION_FRACTION,
};
use pfsa_core::sensitivity::{Sampler, DEFAULT_BASE_SAMPLES};
use pfsa_core::synth::GENERATED_COLUMNS;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_ROSTER: [&str; 10] = [
    "AP",
    "HSMR",
    "H",
    "T",
    "VWS100mPHR",
    "VWS10mPHR",
    "WDM100m",
    "WDZ100m",
    "WS100m",
    "WS10m",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub data: DataConfig,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub sa: SaConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Input CSVs (`<park>.csv` plus `<park>.meta.json`) when `data.source = "csv"`.
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Raw NWP columns read from each CSV.
    pub columns: Vec<String>,
    pub timestamp_column: String,
    pub power_column: String,
    /// Column with the NWP run issue time; omit when unavailable.
    pub model_run_column: Option<String>,
    /// Synthetic parks only.
    pub n_hours: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            columns: GENERATED_COLUMNS.iter().map(|s| s.to_string()).collect(),
            timestamp_column: "timestamp".into(),
            power_column: "power".into(),
            model_run_column: Some(pfsa_core::synth::RUN_COLUMN.into()),
            n_hours: 8760,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub terrain: Terrain,
    pub parks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub roster: Vec<String>,
    pub horizons: HorizonHours,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            roster: DEFAULT_ROSTER.iter().map(|s| s.to_string()).collect(),
            horizons: HorizonHours::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: SplitSpec::default().train_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub fisher_bins: usize,
    pub mi_bins: usize,
    pub filter_top: usize,
    pub budget: usize,
    pub tol: f64,
    pub validation_fraction: f64,
    /// GBRT settings of the wrapper evaluator.
    pub gbrt: GbrtParams,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        let sfs = SfsParams::default();
        Self {
            fisher_bins: DEFAULT_FISHER_BINS,
            mi_bins: DEFAULT_MI_BINS,
            filter_top: DEFAULT_FILTER_TOP,
            budget: sfs.budget,
            tol: sfs.tol,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            gbrt: GbrtParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub levels: Vec<f64>,
    pub kinds: Vec<ModelKind>,
    pub gbrt: GbrtParams,
    pub svr: KernelQrParams,
    pub mqnn: MqnnParams,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            levels: QuantileLevels::default().as_slice().to_vec(),
            kinds: ModelKind::ALL.to_vec(),
            gbrt: GbrtParams::default(),
            svr: KernelQrParams::default(),
            mqnn: MqnnParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaConfig {
    pub n: usize,
    pub sampler: Sampler,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_BASE_SAMPLES,
            sampler: Sampler::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text],
        }
    }
}

/// The key or table name at the start of a TOML error span.
fn span_field(span: &str) -> String {
    let line = span.trim().lines().next().unwrap_or("").trim();
    let key = line.split('=').next().unwrap_or("");
    key.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim()
        .to_string()
}

impl PipelineConfig {
    /// Parse and validate a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::config("--config", "file is not UTF-8"))?;
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| span_field(&text[s])).unwrap_or_default();
            CliError::config(
                if field.is_empty() {
                    "<document>".into()
                } else {
                    field
                },
                e.message().to_string(),
            )
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.out_dir = base.join(&cfg.paths.out_dir);
        cfg.paths.data_dir = cfg.paths.data_dir.map(|d| base.join(d));
        cfg.validate()?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.scenarios.is_empty() {
            return Err(CliError::config(
                "scenarios",
                "at least one scenario is required",
            ));
        }
        let mut seen_terrain = Vec::new();
        let mut seen_parks: Vec<&str> = Vec::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            if seen_terrain.contains(&s.terrain) {
                return Err(CliError::config(
                    format!("scenarios[{i}].terrain"),
                    "duplicate terrain",
                ));
            }
            seen_terrain.push(s.terrain);
            if s.parks.is_empty() {
                return Err(CliError::config(
                    format!("scenarios[{i}].parks"),
                    "no parks listed",
                ));
            }
            for p in &s.parks {
                let valid = !p.is_empty()
                    && p.chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
                if !valid {
                    return Err(CliError::config(
                        format!("scenarios[{i}].parks"),
                        format!("bad park id {p:?}"),
                    ));
                }
                if seen_parks.contains(&p.as_str()) {
                    return Err(CliError::config(
                        format!("scenarios[{i}].parks"),
                        format!("duplicate park {p:?}"),
                    ));
                }
                seen_parks.push(p);
            }
        }
        match self.data.source {
            DataSource::Csv => {
                let dir =
                    self.paths.data_dir.as_ref().ok_or_else(|| {
                        CliError::config("paths.data_dir", "required for csv input")
                    })?;
                if !dir.is_dir() {
                    return Err(CliError::config(
                        "paths.data_dir",
                        format!("{} does not exist", dir.display()),
                    ));
                }
            }
            DataSource::Synthetic => {
                if self.data.n_hours < 1000 {
                    return Err(CliError::config(
                        "data.n_hours",
                        "synthetic parks need at least 1000 hours",
                    ));
                }
            }
        }
        if self.data.columns.is_empty() {
            return Err(CliError::config("data.columns", "no input columns"));
        }
        if self.features.roster.is_empty() {
            return Err(CliError::config("features.roster", "no features"));
        }
        SplitSpec {
            train_fraction: self.split.train_fraction,
        }
        .train_len(2)
        .map_err(|e| CliError::config("split.train_fraction", e.to_string()))?;
        let sel = &self.selection;
        if sel.fisher_bins < 2 || sel.mi_bins < 2 {
            return Err(CliError::config(
                "selection.fisher_bins",
                "bins must be at least 2",
            ));
        }
        if sel.filter_top == 0 || sel.budget == 0 {
            return Err(CliError::config(
                "selection.budget",
                "filter_top and budget must be positive",
            ));
        }
        if !(sel.tol >= 0.0) {
            return Err(CliError::config("selection.tol", "must be non-negative"));
        }
        if !(sel.validation_fraction > 0.0 && sel.validation_fraction < 1.0) {
            return Err(CliError::config(
                "selection.validation_fraction",
                "must lie in (0, 1)",
            ));
        }
        self.levels()?;
        if self.models.kinds.is_empty() {
            return Err(CliError::config("models.kinds", "no model kinds"));
        }
        if self.sa.n < 2 {
            return Err(CliError::config("sa.n", "need at least 2 base samples"));
        }
        if self.report.formats.is_empty() {
            return Err(CliError::config("report.formats", "no formats"));
        }
        Ok(())
    }

    pub fn levels(&self) -> CliResult<QuantileLevels> {
        QuantileLevels::new(self.models.levels.clone())
            .map_err(|e| CliError::config("models.levels", e.to_string()))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train_fraction,
        }
    }

    /// Scenarios after applying a `--scenario` filter.
    pub fn scenarios_for(&self, filter: Option<Terrain>) -> CliResult<Vec<&Scenario>> {
        let out: Vec<&Scenario> = self
            .scenarios
            .iter()
            .filter(|s| filter.is_none_or(|t| t == s.terrain))
            .collect();
        if out.is_empty() {
            return Err(CliError::config(
                "--scenario",
                "no configured scenario matches",
            ));
        }
        Ok(out)
    }

    /// Model kinds after applying a `--model` filter.
    pub fn kinds_for(&self, filter: Option<ModelKind>) -> CliResult<Vec<ModelKind>> {
        let mut out: Vec<ModelKind> = self
            .models
            .kinds
            .iter()
            .copied()
            .filter(|k| filter.is_none_or(|f| f == *k))
            .collect();
        out.sort_by_key(|k| k.label());
        out.dedup();
        if out.is_empty() {
            return Err(CliError::config(
                "--model",
                "no configured model kind matches",
            ));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_field_extracts_key_or_table() {
        assert_eq!(span_field("bogus = 1"), "bogus");
        assert_eq!(span_field("[paths]\ndata_dir = 1"), "paths");
        assert_eq!(span_field("  n = 3  "), "n");
    }

    const MINIMAL: &str = r#"
seed = 1
[[scenarios]]
terrain = "OS"
parks = ["os_1"]
"#;

    fn parse(text: &str) -> PipelineConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse(MINIMAL);
        cfg.validate().unwrap();
        assert_eq!(cfg.sa.n, 10_000);
        assert_eq!(cfg.models.levels.len(), 9);
        assert_eq!(cfg.features.roster.len(), 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            toml::from_str::<PipelineConfig>(&format!("{MINIMAL}\n[sa]\nbogus = 1\n")).is_err()
        );
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = parse(MINIMAL);
        cfg.sa.n = 1;
        match cfg.validate() {
            Err(CliError::ConfigInvalid { field, .. }) => assert_eq!(field, "sa.n"),
            other => panic!("{other:?}"),
        }
        let mut cfg = parse(MINIMAL);
        cfg.models.levels = vec![0.5, 0.4];
        assert!(
            matches!(cfg.validate(), Err(CliError::ConfigInvalid { field, .. }) if field == "models.levels")
        );
        let mut cfg = parse(MINIMAL);
        cfg.data.source = DataSource::Csv;
        assert!(
            matches!(cfg.validate(), Err(CliError::ConfigInvalid { field, .. }) if field == "paths.data_dir")
        );
    }
}
