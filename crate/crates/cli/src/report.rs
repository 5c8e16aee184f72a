//! Report files. Reports carry no timestamps, so identical inputs give identical
//! bytes; the runtime is added only on request.

use crate::config::{Scenario, SCHEMA_VERSION};
use crate::ops::{Outcome, Table};
use anyhow::{Context, Result};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

pub fn report_json(sc: &Scenario, out: &Outcome, runtime: Option<f64>) -> Value {
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.name,
        "operation": sc.operation.name(),
        "seed": sc.seed,
        "inputs": sc.raw,
        "tolerances": sc.tolerances,
        "verdict": out.verdict,
        "value": out.value,
        "values": out.values,
        "residuals": out.residuals,
    });
    if let Some(r) = runtime {
        v["runtime_seconds"] = json!(r);
    }
    v
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_csv(path: &Path, t: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the report and, when the scenario names one and a table exists, the CSV.
pub fn write_all(dir: &Path, sc: &Scenario, out: &Outcome, runtime: Option<f64>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = vec![];
    let p = dir.join(&sc.report);
    write_json(&p, &report_json(sc, out, runtime))?;
    written.push(p);
    if let (Some(name), Some(t)) = (&sc.csv, &out.table) {
        let p = dir.join(name);
        write_csv(&p, t)?;
        written.push(p);
    }
    Ok(written)
}
