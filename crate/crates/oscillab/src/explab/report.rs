//! Report rows and deterministic CSV/JSON/plot-script emission.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One measured check: the verdict derives solely from `measured` vs
/// `reference` under `direction`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub parameters: String,
    pub measured: f64,
    pub reference: f64,
    pub pass: bool,
    pub runtime_s: f64,
}

impl ReportRow {
    /// Pass when `measured <= reference`.
    pub fn upper(experiment: &str, parameters: String, measured: f64, reference: f64) -> Self {
        ReportRow {
            experiment: experiment.into(),
            parameters,
            measured,
            reference,
            pass: measured <= reference,
            runtime_s: 0.0,
        }
    }

    /// Pass when `measured >= reference`.
    pub fn lower(experiment: &str, parameters: String, measured: f64, reference: f64) -> Self {
        ReportRow {
            experiment: experiment.into(),
            parameters,
            measured,
            reference,
            pass: measured >= reference,
            runtime_s: 0.0,
        }
    }

    /// Pass when `|measured - reference| <= tol` (tol recorded in params).
    pub fn near(
        experiment: &str,
        mut parameters: String,
        measured: f64,
        reference: f64,
        tol: f64,
    ) -> Self {
        parameters.push_str(&format!(";tol={tol:.3e}"));
        ReportRow {
            experiment: experiment.into(),
            parameters,
            measured,
            reference,
            pass: (measured - reference).abs() <= tol,
            runtime_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.10e}")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Render rows deterministically (stable field order, fixed float format).
pub fn render(rows: &[ReportRow], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::from("experiment,parameters,measured,reference,pass,runtime_s\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    csv_field(&r.experiment),
                    csv_field(&r.parameters),
                    fmt_float(r.measured),
                    fmt_float(r.reference),
                    r.pass,
                    fmt_float(r.runtime_s),
                ));
            }
            out
        }
        Format::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "experiment": r.experiment,
                        "parameters": r.parameters,
                        "measured": fmt_float(r.measured),
                        "reference": fmt_float(r.reference),
                        "pass": r.pass,
                        "runtime_s": fmt_float(r.runtime_s),
                    })
                })
                .collect();
            serde_json::to_string_pretty(&items).expect("report serialization") + "\n"
        }
    }
}

pub fn emit(rows: &[ReportRow], format: Format, path: &Path) -> Result<()> {
    let text = render(rows, format);
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a JSON report back into rows (mutual oracle for the serializer).
pub fn parse_json(text: &str) -> Result<Vec<ReportRow>> {
    let items: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    items
        .iter()
        .map(|v| {
            let get_f = |k: &str| -> Result<f64> {
                v.get(k)
                    .and_then(|x| x.as_str())
                    .ok_or_else(|| Error::Serde(format!("missing field {k}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Serde(e.to_string()))
            };
            Ok(ReportRow {
                experiment: v["experiment"].as_str().unwrap_or_default().to_string(),
                parameters: v["parameters"].as_str().unwrap_or_default().to_string(),
                measured: get_f("measured")?,
                reference: get_f("reference")?,
                pass: v["pass"].as_bool().unwrap_or(false),
                runtime_s: get_f("runtime_s")?,
            })
        })
        .collect()
}

/// Emit a plot script (matplotlib) that consumes the CSV next to it.
pub fn emit_plotscript(rows: &[ReportRow], csv_name: &str, path: &Path) -> Result<()> {
    let mut script = String::new();
    script.push_str("#!/usr/bin/env python3\n");
    script.push_str("# Renders the measured-vs-reference chart for one report.\n");
    script.push_str("import csv\n\nimport matplotlib.pyplot as plt\n\n");
    script.push_str(&format!("SOURCE = {csv_name:?}\n"));
    script.push_str(
        r#"
rows = []
with open(SOURCE, newline="") as fh:
    for rec in csv.DictReader(fh):
        rows.append(rec)

labels = [f'{r["experiment"]}#{i}' for i, r in enumerate(rows)]
measured = [float(r["measured"]) for r in rows]
reference = [float(r["reference"]) for r in rows]
colors = ["tab:green" if r["pass"] == "true" else "tab:red" for r in rows]

fig, ax = plt.subplots(figsize=(max(6, len(rows) * 0.5), 4))
ax.bar(labels, measured, color=colors, label="measured")
ax.plot(labels, reference, "k_", markersize=14, label="reference")
ax.set_yscale("symlog", linthresh=1e-12)
ax.set_ylabel("value")
ax.tick_params(axis="x", rotation=75)
ax.legend()
fig.tight_layout()
fig.savefig(SOURCE.replace(".csv", ".png"), dpi=150)
print("wrote", SOURCE.replace(".csv", ".png"))
"#,
    );
    let _ = rows;
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(script.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<ReportRow> {
        vec![
            ReportRow::upper("demo", "a=1;b=2".into(), 0.5, 1.0),
            ReportRow::lower("demo", "c=3".into(), 2.0, 1.0),
        ]
    }

    #[test]
    fn empty_rows_render_header_only() {
        let text = render(&[], Format::Csv);
        assert_eq!(text, "experiment,parameters,measured,reference,pass,runtime_s\n");
    }

    #[test]
    fn rendering_is_deterministic() {
        let rows = sample_rows();
        assert_eq!(render(&rows, Format::Csv), render(&rows, Format::Csv));
        assert_eq!(render(&rows, Format::Json), render(&rows, Format::Json));
    }

    #[test]
    fn json_roundtrip_is_identity() {
        let rows = sample_rows();
        let text = render(&rows, Format::Json);
        let back = parse_json(&text).unwrap();
        assert_eq!(back, rows);
        assert_eq!(render(&back, Format::Json), text);
    }
}
