//! Writing result bundles to disk.
//!
//! CSV and JSON output is byte-stable for a given bundle: numbers go through
//! [`format_number`] and JSON keys keep insertion order. SVG files are
//! visual aids only.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::OutputFormat;
use super::scenario::{ResultBundle, Table};
use super::svg::{line_plot, Series};
use crate::error::{CribError, Result};

/// Shortest round-trip decimal; exponent form for very large or small values.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if v == 0.0 {
        "0".into()
    } else if (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn table_csv(table: &Table) -> String {
    let mut out = table.columns.join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Everything except the tables.
pub fn metadata_json(bundle: &ResultBundle) -> Value {
    json!({
        "scenario": bundle.scenario,
        "seed": bundle.seed,
        "trials": bundle.trials,
        "model": bundle.model,
        "summary": bundle.summary,
        "provenance": bundle.provenance,
        "config": bundle.config,
    })
}

pub fn bundle_json(bundle: &ResultBundle) -> Value {
    let mut value = metadata_json(bundle);
    value["tables"] = serde_json::to_value(&bundle.tables).expect("tables serialize");
    value
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

pub fn table_svg(bundle: &ResultBundle, table: &Table) -> String {
    let series: Vec<Series> = table.columns[1..]
        .iter()
        .enumerate()
        .map(|(i, label)| Series {
            label,
            points: table.rows.iter().map(|r| (r[0], r[i + 1])).collect(),
        })
        .collect();
    line_plot(
        &format!("{} / {}", bundle.scenario, table.name),
        &table.columns[0],
        &series,
    )
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|source| CribError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the bundle under `dir` and returns the files written.
///
/// * csv: `<scenario>_<table>.csv` per table plus `<scenario>_meta.json`
/// * json: `<scenario>.json` with tables inline
/// * svg: `<scenario>_<table>.svg` per table plus `<scenario>_meta.json`
pub fn emit_outputs(
    bundle: &ResultBundle,
    format: OutputFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| CribError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let stem = bundle.scenario.name();
    let mut written = Vec::new();
    match format {
        OutputFormat::Csv => {
            for t in &bundle.tables {
                written.push(write(
                    dir.join(format!("{stem}_{}.csv", t.name)),
                    &table_csv(t),
                )?);
            }
            written.push(write(
                dir.join(format!("{stem}_meta.json")),
                &pretty(&metadata_json(bundle)),
            )?);
        }
        OutputFormat::Json => {
            written.push(write(
                dir.join(format!("{stem}.json")),
                &pretty(&bundle_json(bundle)),
            )?);
        }
        OutputFormat::Svg => {
            for t in bundle.tables.iter().filter(|t| t.columns.len() >= 2) {
                written.push(write(
                    dir.join(format!("{stem}_{}.svg", t.name)),
                    &table_svg(bundle, t),
                )?);
            }
            written.push(write(
                dir.join(format!("{stem}_meta.json")),
                &pretty(&metadata_json(bundle)),
            )?);
        }
    }
    Ok(written)
}
