//! Summary tables: one row per (model, method, seed) run.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::pipeline::{ComparisonRow, SweepRow, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub model: String,
    pub dataset: String,
    /// Trainable parameters in millions.
    #[serde(rename = "params_M")]
    pub params_m: f64,
    pub baseline_metric: Option<f64>,
    pub method: String,
    pub alpha: Option<f64>,
    pub final_metric: f64,
    /// `final_metric − baseline_metric`.
    pub improvement: Option<f64>,
    pub seed: u64,
}

impl ExperimentRow {
    pub fn from_report(r: &TrainReport) -> Self {
        Self {
            model: r.model.clone(),
            dataset: r.dataset.clone(),
            params_m: r.param_count as f64 / 1e6,
            baseline_metric: r.baseline_metric,
            method: r.method.clone(),
            alpha: r.alpha,
            final_metric: r.test_metric,
            improvement: r.improvement(),
            seed: r.seed,
        }
    }

    pub fn from_comparison(c: &ComparisonRow, model: &str, dataset: &str) -> Self {
        Self {
            model: model.to_owned(),
            dataset: dataset.to_owned(),
            params_m: c.param_count as f64 / 1e6,
            baseline_metric: Some(c.baseline_metric),
            method: c.method.clone(),
            alpha: c.alpha,
            final_metric: c.final_metric,
            improvement: Some(c.final_metric - c.baseline_metric),
            seed: c.seed,
        }
    }
}

pub fn rows_to_csv(rows: &[ExperimentRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "model",
            "dataset",
            "params_M",
            "baseline_metric",
            "method",
            "alpha",
            "final_metric",
            "improvement",
            "seed",
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn rows_to_json(rows: &[ExperimentRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

pub fn rows_from_json(text: &str) -> Result<Vec<ExperimentRow>> {
    Ok(serde_json::from_str(text)?)
}

/// Writes the summary table for `reports` atomically.
pub fn report_emit(reports: &[TrainReport], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Contract("report_emit needs at least one report".into()));
    }
    let rows: Vec<ExperimentRow> = reports.iter().map(ExperimentRow::from_report).collect();
    emit_rows(&rows, path, format)
}

pub fn emit_rows(rows: &[ExperimentRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => rows_to_csv(rows)?,
        ReportFormat::Json => rows_to_json(rows)?,
    };
    write_atomic(path, text.as_bytes())
}

/// Loss terms of `r` at its best epoch, or at the last epoch when nothing
/// was tracked.
pub fn best_components(r: &TrainReport) -> Vec<(String, f64)> {
    let row = match r.best_epoch {
        Some(e) => r.rows.iter().find(|row| row.epoch == e),
        None => r.rows.last(),
    };
    match row {
        Some(row) => r.component_names.iter().cloned().zip(row.components.iter().copied()).collect(),
        None => Vec::new(),
    }
}

/// Summary table with the configuration that produced it. CSV output starts
/// with a `# config: <json>` comment line and, when `components` is given,
/// carries one extra column per loss term after the standard ones. JSON
/// output is `{"config": .., "rows": [..]}`, each row holding a
/// `components` object in that case.
pub fn summary_text(
    rows: &[ExperimentRow],
    components: Option<&[Vec<(String, f64)>]>,
    config: &serde_json::Value,
    format: ReportFormat,
) -> Result<String> {
    if let Some(c) = components {
        if c.len() != rows.len() || c.iter().any(|x| x.iter().map(|p| &p.0).ne(c[0].iter().map(|p| &p.0))) {
            return Err(Error::Contract("component columns must match across rows".into()));
        }
    }
    match format {
        ReportFormat::Json => {
            let rows: Vec<serde_json::Value> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut v = serde_json::to_value(r)?;
                    if let Some(c) = components {
                        let map: serde_json::Map<String, serde_json::Value> =
                            c[i].iter().map(|(k, x)| (k.clone(), (*x).into())).collect();
                        v["components"] = map.into();
                    }
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            let doc = serde_json::json!({ "config": config, "rows": rows });
            Ok(serde_json::to_string_pretty(&doc)? + "\n")
        }
        ReportFormat::Csv => {
            let mut out = format!("# config: {}\n", serde_json::to_string(config)?);
            let table = rows_to_csv(rows)?;
            match components.filter(|c| !c.is_empty() && !c[0].is_empty()) {
                None => out.push_str(&table),
                Some(c) => {
                    for (i, line) in table.lines().enumerate() {
                        out.push_str(line);
                        let extra: Vec<String> = if i == 0 {
                            c[0].iter().map(|p| p.0.clone()).collect()
                        } else {
                            c[i - 1].iter().map(|p| p.1.to_string()).collect()
                        };
                        out.push(',');
                        out.push_str(&extra.join(","));
                        out.push('\n');
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Reads rows back from any summary this module writes: plain or annotated
/// CSV, a bare JSON array, or a JSON document with a `rows` field. Extra
/// component columns are ignored.
pub fn read_summary(text: &str, format: ReportFormat) -> Result<Vec<ExperimentRow>> {
    match format {
        ReportFormat::Csv => rows_from_csv(text),
        ReportFormat::Json => {
            let v: serde_json::Value = serde_json::from_str(text)?;
            let rows = match v {
                serde_json::Value::Object(mut o) => o.remove("rows").unwrap_or_default(),
                other => other,
            };
            Ok(serde_json::from_value(rows)?)
        }
    }
}

/// `alpha,baseline_metric,distilled_metric,improvement,n_seeds`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "baseline_metric", "distilled_metric", "improvement", "n_seeds"])?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.baseline_metric.to_string(),
            r.distilled_metric.to_string(),
            r.improvement.to_string(),
            r.per_seed.len().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
