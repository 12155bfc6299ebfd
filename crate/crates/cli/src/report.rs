//! Plot-ready text output from a finished run.

use crate::runner::{fmt_opt, RunManifest, Summary};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing output file {0}")]
    Missing(PathBuf),
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|_| ReportError::Missing(path.into()))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Parse { path: path.into(), source })
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn pairs(v: &Value) -> Vec<(f64, f64)> {
    v.as_array().map(|a| a.iter().map(|p| (num(&p[0]), num(&p[1]))).collect()).unwrap_or_default()
}

/// `(r, ratio)` blocks, one per `(x, t)`, separated by blank lines.
fn doubling_plot(d: &Value) -> String {
    let mut out = String::from("# r ratio\n");
    let mut last: Option<(Value, Value)> = None;
    for c in d["cells"].as_array().into_iter().flatten() {
        let key = (c["x"].clone(), c["t"].clone());
        if last.as_ref() != Some(&key) {
            if last.is_some() {
                out.push_str("\n\n");
            }
            let _ = writeln!(out, "# x = {} t = {}", c["x"], c["t"]);
            last = Some(key);
        }
        let _ = writeln!(out, "{} {}", num(&c["r"]), num(&c["ratio"]));
    }
    out
}

/// Ratio matrix: one row per `(x, t)`, one column per `r`.
fn doubling_grid(d: &Value) -> String {
    let cells = d["cells"].as_array().cloned().unwrap_or_default();
    let mut rs: Vec<f64> = cells.iter().map(|c| num(&c["r"])).collect();
    rs.sort_by(f64::total_cmp);
    rs.dedup();
    let mut out = String::from("# x t | ratio at r =");
    for r in &rs {
        let _ = write!(out, " {r}");
    }
    out.push('\n');
    let mut keys: Vec<(String, f64)> = Vec::new();
    for c in &cells {
        let k = (c["x"].to_string(), num(&c["t"]));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (x, t) in keys {
        let row: Vec<String> = rs
            .iter()
            .map(|r| {
                cells
                    .iter()
                    .find(|c| c["x"].to_string() == x && num(&c["t"]) == t && num(&c["r"]) == *r)
                    .map(|c| num(&c["ratio"]).to_string())
                    .unwrap_or_else(|| "nan".into())
            })
            .collect();
        let xs = x.trim_matches(['[', ']']).replace(' ', "");
        let _ = writeln!(out, "{xs} {t} {}", row.join(" "));
    }
    out
}

fn fit_plot(fits: &[&Value], labels: &[String]) -> String {
    let mut out = String::from("# log_rho log_f\n");
    for (i, (fit, label)) in fits.iter().zip(labels).enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(
            out,
            "# {label} exponent = {} intercept = {} residual = {}",
            num(&fit["exponent"]),
            num(&fit["intercept"]),
            num(&fit["residual"])
        );
        for (rho, f) in pairs(&fit["samples"]) {
            if f > 0.0 {
                let _ = writeln!(out, "{} {}", rho.ln(), f.ln());
            }
        }
    }
    out
}

fn aronson_plot(d: &Value) -> String {
    let (lo, hi) = (num(&d["n_lower"]), num(&d["n_upper"]));
    let mut out = String::new();
    let _ = writeln!(out, "# d2 log_gamma");
    let _ = writeln!(out, "# lower envelope: log_gamma = {} - {lo} * d2", -lo.ln());
    let _ = writeln!(out, "# upper envelope: log_gamma = {} - d2 / {hi}", hi.ln());
    for (d2, g) in pairs(&d["samples"]) {
        if g > 0.0 {
            let _ = writeln!(out, "{d2} {}", g.ln());
        }
    }
    out
}

fn profile_plot(d: &Value) -> String {
    let mut out = String::from("# r omega\n");
    for (r, w) in pairs(&d["profile"]) {
        let _ = writeln!(out, "{r} {w}");
    }
    out
}

/// Two-column data for one experiment, or `None` when the kind has no
/// natural series.
fn plot(summary: &Summary) -> Option<String> {
    let d = summary.details.last()?;
    Some(match summary.kind.as_str() {
        "doubling_wholespace" | "doubling_lipschitz" => doubling_plot(d),
        "growth_exponent" => fit_plot(&[d], &["gamma1".into()]),
        "boundary_decay" => {
            let fits: Vec<&Value> = d.as_array()?.iter().collect();
            let labels = match &summary.params {
                crate::config::Experiment::BoundaryDecay { ks, .. } => ks.iter().map(|k| format!("K = {k}")).collect(),
                _ => vec![String::new(); fits.len()],
            };
            fit_plot(&fits, &labels)
        }
        "aronson" => aronson_plot(d),
        "measure" => profile_plot(d),
        _ => return None,
    })
}

/// Numeric CSV columns as a whitespace table.
fn csv_grid(path: &Path) -> Result<String, ReportError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| ReportError::Missing(path.into()))?;
    let header = rdr.headers().map_err(|e| std::io::Error::other(e.to_string()))?.clone();
    let keep: Vec<usize> = (2..header.len()).collect();
    let mut out = format!("# {}\n", keep.iter().map(|&i| header[i].replace(' ', "_")).collect::<Vec<_>>().join(" "));
    for rec in rdr.records() {
        let rec = rec.map_err(|e| std::io::Error::other(e.to_string()))?;
        let row: Vec<String> = keep.iter().map(|&i| rec[i].replace(' ', ",")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}

/// Writes `<name>.plot.dat`, `<name>.grid.dat` and `summary.txt` next to
/// the manifest and returns the summary table.
pub fn report(manifest_path: &Path) -> Result<(String, Vec<PathBuf>), ReportError> {
    let manifest: RunManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut table = format!("{:<28} {:<20} {:>14} {:>10} {:<6} {}\n", "experiment", "kind", "constant", "rel_diff", "passed", "argmax");
    let mut written = Vec::new();
    for e in &manifest.experiments {
        let summary: Summary = read_json(&dir.join(&e.summary))?;
        let csv_path = dir.join(&e.csv);
        if !csv_path.exists() {
            return Err(ReportError::Missing(csv_path));
        }
        let grid = dir.join(format!("{}.grid.dat", e.name));
        let grid_text = match summary.kind.as_str() {
            "doubling_wholespace" | "doubling_lipschitz" => summary.details.last().map(doubling_grid).unwrap_or_default(),
            _ => csv_grid(&csv_path)?,
        };
        std::fs::write(&grid, grid_text)?;
        written.push(grid);
        if let Some(text) = plot(&summary) {
            let p = dir.join(format!("{}.plot.dat", e.name));
            std::fs::write(&p, text)?;
            written.push(p);
        }
        let rel = summary.stability.first().map(|s| format!("{:.3e}", s.rel_diff)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            table,
            "{:<28} {:<20} {:>14} {:>10} {:<6} {}",
            e.name,
            summary.kind,
            fmt_opt(summary.constant),
            rel,
            if summary.passed { "yes" } else { "no" },
            summary.argmax
        );
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, &table)?;
    written.push(path);
    Ok((table, written))
}
