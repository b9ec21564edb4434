//! Feature-group ablation: retrain and re-evaluate with groups removed.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetFormat;
use crate::error::{Error, Result};
use crate::features::{fit_scaler, FeatureGroup, FeatureRow, FeatureSchema, GroupSet};
use crate::model::{cross_validate_c, fit_scaled, LogRegModel, TrainOptions};

use super::{evaluate, predict_rows, rank_rows, CombinerConfig, EvalOptions, EvalReport};

/// Everything held fixed across ablation rows.
pub struct AblationSetup<'a> {
    pub schema: &'a FeatureSchema,
    pub train: &'a [FeatureRow],
    pub test: &'a [FeatureRow],
    pub subtask: DatasetFormat,
    pub train_options: &'a TrainOptions,
    /// Skip cross-validation and use this cost.
    pub fixed_c: Option<f64>,
    pub eval: EvalOptions,
    pub combiner: CombinerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub removed: Vec<FeatureGroup>,
    pub map: f64,
    pub accuracy: f64,
    pub cost_c: f64,
    pub evaluated: usize,
}

/// Parses a removal set such as `"word_clusters & meta_categories"`.
pub fn parse_removal(spec: &str) -> Result<GroupSet> {
    spec.split(['&', '+', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("all"))
        .map(str::parse)
        .collect()
}

pub fn row_label(removed: &GroupSet) -> String {
    if removed.is_empty() {
        return "All".to_string();
    }
    let names: Vec<&str> = removed.iter().map(|g| g.title()).collect();
    format!("All - {}", names.join(" & "))
}

fn labels_of(rows: &[FeatureRow]) -> Result<Vec<bool>> {
    rows.iter()
        .map(|r| {
            r.label.map(|l| l.is_good()).ok_or_else(|| {
                Error::integrity(format!("training comment {} has no gold label", r.comment_id))
            })
        })
        .collect()
}

/// Trains on `train` (cost from `fixed_c` or cross-validation) and returns
/// the fitted model.
pub fn fit_rows(
    schema: &FeatureSchema,
    train: &[FeatureRow],
    opts: &TrainOptions,
    fixed_c: Option<f64>,
) -> Result<LogRegModel> {
    let y = labels_of(train)?;
    let raw: Vec<Vec<f64>> = train.iter().map(|r| r.values.clone()).collect();
    let c = match fixed_c {
        Some(c) => c,
        None => {
            let scaler = fit_scaler(&raw);
            let x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
            let cv = cross_validate_c(&x, &y, opts)?;
            log::info!("cross-validation picked C = {}", cv.best_c);
            cv.best_c
        }
    };
    fit_scaled(&raw, &y, c, opts, &schema.hash())
}

/// Fits on the training rows and evaluates on the test rows.
#[allow(clippy::too_many_arguments)]
pub fn fit_and_evaluate(
    schema: &FeatureSchema,
    train: &[FeatureRow],
    test: &[FeatureRow],
    subtask: DatasetFormat,
    opts: &TrainOptions,
    fixed_c: Option<f64>,
    eval: EvalOptions,
    combiner: &CombinerConfig,
) -> Result<(LogRegModel, EvalReport)> {
    let model = fit_rows(schema, train, opts, fixed_c)?;
    let probs = predict_rows(&model, test);
    let lists = rank_rows(test, &probs, subtask, combiner.build().as_ref());
    let report = evaluate(&lists, eval)?;
    Ok((model, report))
}

/// One row per removal set (an empty set is the all-features row), sorted
/// by MAP descending.
pub fn ablation_run(setup: &AblationSetup<'_>, removals: &[GroupSet]) -> Result<Vec<AblationRow>> {
    let sets: Vec<GroupSet> = if removals.is_empty() {
        vec![GroupSet::new()]
    } else {
        removals.to_vec()
    };
    let full = setup.schema.group_set();
    let mut rows = sets
        .par_iter()
        .map(|removed| {
            let keep: GroupSet = full.difference(removed).copied().collect();
            if keep.is_empty() {
                return Err(Error::config(format!(
                    "removing {} leaves no features",
                    row_label(removed)
                )));
            }
            let schema = setup.schema.restrict(&keep)?;
            let idx = setup.schema.indices_for(&keep);
            let train: Vec<FeatureRow> = setup.train.iter().map(|r| r.select(&idx)).collect();
            let test: Vec<FeatureRow> = setup.test.iter().map(|r| r.select(&idx)).collect();
            let (model, report) = fit_and_evaluate(
                &schema,
                &train,
                &test,
                setup.subtask,
                setup.train_options,
                setup.fixed_c,
                setup.eval,
                &setup.combiner,
            )?;
            Ok(AblationRow {
                label: row_label(removed),
                removed: removed.iter().copied().collect(),
                map: report.map,
                accuracy: report.acc,
                cost_c: model.cost_c,
                evaluated: test.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.map.total_cmp(&a.map));
    Ok(rows)
}

/// Plain-text table: feature set, MAP and accuracy as percentages.
pub fn format_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.label.chars().count())
        .max()
        .unwrap_or(0)
        .max("Feature Group".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}", "Feature Group", "MAP", "Acc");
    let _ = writeln!(out, "{}", "-".repeat(width + 16));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.2}  {:>6.2}",
            r.label,
            100.0 * r.map,
            100.0 * r.accuracy
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removal_parsing() {
        let s = parse_removal("word_clusters & meta_categories").unwrap();
        assert_eq!(s, GroupSet::from([FeatureGroup::WordClusters, FeatureGroup::MetaCategories]));
        assert!(parse_removal("All").unwrap().is_empty());
        assert!(matches!(parse_removal("bogus"), Err(Error::Config(_))));
        assert_eq!(row_label(&s), "All - Word Clusters similarity & Meta categories");
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            AblationRow {
                label: "All".into(),
                removed: vec![],
                map: 0.8123,
                accuracy: 0.7456,
                cost_c: 0.55,
                evaluated: 10,
            },
            AblationRow {
                label: "All - LDA sim".into(),
                removed: vec![FeatureGroup::LdaSim],
                map: 0.7,
                accuracy: 0.7,
                cost_c: 0.55,
                evaluated: 10,
            },
        ];
        let t = format_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("All "));
        assert!(lines[2].ends_with(" 81.23   74.56"));
    }
}
