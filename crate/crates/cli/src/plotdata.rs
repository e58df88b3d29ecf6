//! Plot-ready CSV surfaces. No rendering.

use std::path::{Path, PathBuf};

use serde::Serialize;

use axnorm::predictor::InverseView;
use axnorm::{Error, Result};

use crate::rank::RankedMultiplierTable;
use crate::sweep::SweepResult;

pub const ACCURACY_SURFACE: &str = "accuracy_surface.csv";
pub const NORM_SURFACE: &str = "accumulated_norm_surface.csv";
pub const INVERSE_SURFACE: &str = "capped_inverse_surface.csv";
pub const RANK_POINTS: &str = "rank_points.csv";
pub const MANIFEST: &str = "manifest.json";

pub enum PlotInput<'a> {
    Sweep(&'a SweepResult),
    Rank(&'a RankedMultiplierTable),
}

/// Writes surfaces (or rank points) and `manifest.json` into `out_dir`.
/// `manifest` is embedded verbatim under `"run"`.
pub fn emit_plotdata(
    input: PlotInput<'_>,
    view: InverseView,
    manifest: &impl Serialize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    match input {
        PlotInput::Sweep(result) => {
            if result.rows.is_empty() {
                return Err(Error::Precondition("sweep result has no rows".into()));
            }
            write(ACCURACY_SURFACE, surface(result, |r| r.toy_accuracy)?)?;
            write(NORM_SURFACE, surface(result, |r| r.predicted_accumulated)?)?;
            write(INVERSE_SURFACE, surface(result, |r| view.apply(r.predicted_accumulated))?)?;
        }
        PlotInput::Rank(table) => {
            if table.rows.is_empty() {
                return Err(Error::Precondition("rank table has no rows".into()));
            }
            let mut body = String::from("model,predicted,capped_inverse,toy_accuracy\n");
            for r in &table.rows {
                body.push_str(&format!(
                    "{},{:?},{:?},{:?}\n",
                    r.model.label(),
                    r.predicted,
                    view.apply(r.predicted),
                    r.toy_accuracy
                ));
            }
            write(RANK_POINTS, body)?;
        }
    }
    let manifest = serde_json::json!({ "inverse_view": view, "run": manifest });
    write(MANIFEST, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(written)
}

/// Rows are sigma values, columns mu values.
fn surface(result: &SweepResult, value: impl Fn(&crate::sweep::SweepRow) -> f64) -> Result<String> {
    let grid = &result.grid;
    let mut out = String::from("sigma\\mu");
    for mu in &grid.mu_values {
        out.push_str(&format!(",{mu:?}"));
    }
    out.push('\n');
    for &sigma in &grid.sigma_values {
        out.push_str(&format!("{sigma:?}"));
        for &mu in &grid.mu_values {
            let row = result
                .row(mu, sigma)
                .ok_or_else(|| Error::Precondition(format!("sweep result lacks point ({mu}, {sigma})")))?;
            out.push_str(&format!(",{:?}", value(row)));
        }
        out.push('\n');
    }
    Ok(out)
}
