//! Serialisation of sensitivity results.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    clip_for_display, QuantileSensitivityProfile, SaltelliDesign, Sampler, ScenarioAggregate,
};
use crate::dataset::Terrain;

/// Row order of the aggregate table. Features outside this list follow in
/// lexicographic order.
pub const TABLE_FEATURE_ORDER: [&str; 10] = [
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

pub const TABLE_MODEL_ORDER: [&str; 3] = ["GBRT", "MQRNN", "SVR"];
pub const TABLE_SCENARIO_ORDER: [Terrain; 3] = [Terrain::Os, Terrain::Nct, Terrain::Ct];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (park, model, feature, level). Undefined levels leave the
/// index cells empty and record the reason in the log only.
pub fn write_sensitivity_csv<W: Write>(
    writer: W,
    scenario: &str,
    profiles: &[QuantileSensitivityProfile],
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "scenario",
        "park_id",
        "model",
        "feature",
        "quantile",
        "s_first",
        "s_total",
        "v_y",
        "design_fingerprint",
    ])?;
    for p in profiles {
        for lvl in &p.levels {
            for (i, feature) in p.feature_names.iter().enumerate() {
                let ix = lvl.indices();
                wtr.write_record([
                    scenario,
                    &p.park_id,
                    &p.model,
                    feature,
                    &lvl.level.to_string(),
                    &fmt_opt(ix.map(|x| x.s_first[i])),
                    &fmt_opt(ix.map(|x| x.s_total[i])),
                    &fmt_opt(ix.map(|x| x.v_y)),
                    &p.design_fingerprint,
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-quantile averages as a level-indexed table (rows = levels,
/// columns = features). `first_order` picks S_i, otherwise S_Ti.
pub fn write_curve_csv<W: Write>(
    writer: W,
    aggregate: &ScenarioAggregate,
    first_order: bool,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["quantile".to_string()];
    header.extend(aggregate.feature_names.iter().cloned());
    wtr.write_record(&header)?;
    let table = if first_order {
        &aggregate.per_quantile_first
    } else {
        &aggregate.per_quantile_total
    };
    for (tau, row) in aggregate.levels.iter().zip(table) {
        let mut rec = vec![tau.to_string()];
        rec.extend(row.iter().map(|v| fmt_opt(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// An aggregate labelled with its scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioModelAggregate {
    pub scenario: Terrain,
    pub aggregate: ScenarioAggregate,
}

fn ordered_features<'a>(
    aggregates: impl Iterator<Item = &'a ScenarioModelAggregate>,
) -> Vec<String> {
    let mut rest: Vec<String> = Vec::new();
    let mut present = std::collections::BTreeSet::new();
    for a in aggregates {
        present.extend(a.aggregate.feature_names.iter().cloned());
    }
    let mut out: Vec<String> = TABLE_FEATURE_ORDER
        .iter()
        .filter(|f| present.contains(**f))
        .map(|f| f.to_string())
        .collect();
    for f in present {
        if !TABLE_FEATURE_ORDER.contains(&f.as_str()) {
            rest.push(f);
        }
    }
    out.extend(rest);
    out
}

fn cell(v: Option<f64>) -> Value {
    v.map(Value::from).unwrap_or(Value::Null)
}

/// Grand-average indices laid out as rows = features, column groups =
/// model, sub-columns = scenario. Features not analysed in a scenario are
/// `null`. Raw values sit next to display copies clipped at zero.
pub fn aggregate_table_json(aggregates: &[ScenarioModelAggregate]) -> Value {
    let features = ordered_features(aggregates.iter());
    let columns: Vec<Value> = TABLE_MODEL_ORDER
        .iter()
        .map(|m| {
            json!({
                "model": m,
                "scenarios": TABLE_SCENARIO_ORDER.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let rows: Vec<Value> = features
        .iter()
        .map(|f| {
            let mut groups = Map::new();
            for m in TABLE_MODEL_ORDER {
                let mut sub = Map::new();
                for t in TABLE_SCENARIO_ORDER {
                    let found = aggregates
                        .iter()
                        .find(|a| a.scenario == t && a.aggregate.model == m)
                        .and_then(|a| {
                            let i = a.aggregate.feature_names.iter().position(|x| x == f)?;
                            Some((a.aggregate.grand_first[i], a.aggregate.grand_total[i]))
                        });
                    let v = match found {
                        Some((s, st)) => json!({
                            "s_first": cell(s),
                            "s_total": cell(st),
                            "s_first_display": cell(clip_for_display(s)),
                            "s_total_display": cell(clip_for_display(st)),
                        }),
                        None => Value::Null,
                    };
                    sub.insert(t.as_str().to_string(), v);
                }
                groups.insert(m.to_string(), Value::Object(sub));
            }
            json!({ "feature": f, "cells": groups })
        })
        .collect();
    json!({ "columns": columns, "rows": rows })
}

/// Fixed-width text rendering of the aggregate table (clipped values).
pub fn aggregate_table_text(aggregates: &[ScenarioModelAggregate]) -> String {
    let features = ordered_features(aggregates.iter());
    let mut out = String::new();
    out.push_str(&format!("{:<12}", "feature"));
    for m in TABLE_MODEL_ORDER {
        for t in TABLE_SCENARIO_ORDER {
            out.push_str(&format!(" {:>13}", format!("{m}/{}", t.as_str())));
        }
    }
    out.push('\n');
    for f in &features {
        out.push_str(&format!("{f:<12}"));
        for m in TABLE_MODEL_ORDER {
            for t in TABLE_SCENARIO_ORDER {
                let text = aggregates
                    .iter()
                    .find(|a| a.scenario == t && a.aggregate.model == m)
                    .and_then(|a| {
                        let i = a.aggregate.feature_names.iter().position(|x| x == f)?;
                        let s = clip_for_display(a.aggregate.grand_first[i])?;
                        let st = clip_for_display(a.aggregate.grand_total[i])?;
                        Some(format!("{s:.2}/{st:.2}"))
                    })
                    .unwrap_or_else(|| "-".to_string());
                out.push_str(&format!(" {text:>13}"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGap {
    pub feature: String,
    pub s_first: f64,
    pub s_total: f64,
    pub gap: f64,
}

/// `S_Ti - S_i` of the grand averages, largest gap first (ties by name).
pub fn interaction_gaps(aggregate: &ScenarioAggregate) -> Vec<InteractionGap> {
    let mut gaps: Vec<InteractionGap> = aggregate
        .feature_names
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let s = aggregate.grand_first[i]?;
            let st = aggregate.grand_total[i]?;
            Some(InteractionGap {
                feature: f.clone(),
                s_first: s,
                s_total: st,
                gap: st - s,
            })
        })
        .collect();
    gaps.sort_by(|a, b| {
        b.gap
            .total_cmp(&a.gap)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    gaps
}

/// Estimator and sampling choices recorded alongside every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub first_order_estimator: String,
    pub total_order_estimator: String,
    pub variance_estimator: String,
    pub input_distribution: String,
    pub sampler: Sampler,
    pub base_samples: usize,
    pub evaluations_per_output: usize,
    pub design_seed: u64,
    pub design_fingerprint: String,
}

impl ReportMetadata {
    pub fn for_design(design: &SaltelliDesign) -> Self {
        Self {
            first_order_estimator: "V_i = mean(fB * (fAB_i - fA))".into(),
            total_order_estimator: "Jansen: VT_i = mean((fA - fAB_i)^2) / 2".into(),
            variance_estimator: "sample variance of pooled fA and fB".into(),
            input_distribution: "independent uniform over the training feature box".into(),
            sampler: design.sampler,
            base_samples: design.n,
            evaluations_per_output: design.evaluations(),
            design_seed: design.seed,
            design_fingerprint: design.fingerprint().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(model: &str, features: &[&str], first: &[f64], total: &[f64]) -> ScenarioAggregate {
        ScenarioAggregate {
            model: model.into(),
            feature_names: features.iter().map(|s| s.to_string()).collect(),
            levels: vec![0.5],
            parks: vec!["p".into()],
            design_fingerprints: vec!["f".into()],
            per_quantile_first: vec![first.iter().map(|v| Some(*v)).collect()],
            per_quantile_total: vec![total.iter().map(|v| Some(*v)).collect()],
            grand_first: first.iter().map(|v| Some(*v)).collect(),
            grand_total: total.iter().map(|v| Some(*v)).collect(),
        }
    }

    #[test]
    fn table_layout_is_stable() {
        let a = vec![
            ScenarioModelAggregate {
                scenario: Terrain::Ct,
                aggregate: agg(
                    "SVR",
                    &["WS10m", "zeta", "AP"],
                    &[0.1, 0.0, -0.01],
                    &[0.2, 0.0, 0.0],
                ),
            },
            ScenarioModelAggregate {
                scenario: Terrain::Os,
                aggregate: agg("GBRT", &["WS100m"], &[0.9], &[0.95]),
            },
        ];
        let v = aggregate_table_json(&a);
        let rows: Vec<&str> = v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["feature"].as_str().unwrap())
            .collect();
        assert_eq!(rows, vec!["AP", "WS100m", "WS10m", "zeta"]);
        let groups: Vec<&str> = v["columns"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["model"].as_str().unwrap())
            .collect();
        assert_eq!(groups, vec!["GBRT", "MQRNN", "SVR"]);
        let ap = &v["rows"][0]["cells"]["SVR"]["CT"];
        assert_eq!(ap["s_first"], json!(-0.01));
        assert_eq!(ap["s_first_display"], json!(0.0));
        assert!(v["rows"][0]["cells"]["GBRT"]["OS"].is_null());
        let text = aggregate_table_text(&a);
        assert!(text.lines().nth(1).unwrap().starts_with("AP"));
    }

    #[test]
    fn gaps_are_ranked() {
        let g = interaction_gaps(&agg(
            "GBRT",
            &["c", "b", "a", "d"],
            &[0.5, 0.5, 0.25, 0.1],
            &[0.5, 0.75, 0.5, 0.6],
        ));
        let order: Vec<&str> = g.iter().map(|x| x.feature.as_str()).collect();
        assert_eq!(order, vec!["d", "a", "b", "c"]);
    }

    #[test]
    fn curve_csv_shape() {
        let mut buf = Vec::new();
        write_curve_csv(
            &mut buf,
            &agg("GBRT", &["a", "b"], &[0.1, 0.2], &[0.3, 0.4]),
            true,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "quantile,a,b\n0.5,0.1,0.2\n"
        );
    }
}
