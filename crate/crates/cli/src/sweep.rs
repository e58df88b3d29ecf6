//! Grid sweeps over synthetic error parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use axnorm::characterization::ErrorMoments;
use axnorm::gemm::compensated_sum;
use axnorm::noise::{derive_seed, NoisePlan};
use axnorm::predictor::predict_network;
use axnorm::{Error, MultiplierModel, Result};

use crate::toy::ToyContext;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub mu_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub trials_per_point: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid::toy_preset()
    }
}

impl SweepGrid {
    /// Spans full to collapsed accuracy on the bundled toy CNN.
    pub fn toy_preset() -> Self {
        SweepGrid {
            mu_values: vec![0.0, 0.01, 0.02, 0.035, 0.05, 0.08],
            sigma_values: vec![0.0, 0.03, 0.06, 0.1, 0.15, 0.25],
            seeds: vec![0],
            trials_per_point: 2,
        }
    }

    /// Six evenly spaced values over `mu in [0, 3e-5]`, `sigma in [0, 2e-3]`.
    pub fn wide_network_preset() -> Self {
        SweepGrid {
            mu_values: (0..6).map(|i| 3e-5 * i as f64 / 5.0).collect(),
            sigma_values: (0..6).map(|i| 2e-3 * i as f64 / 5.0).collect(),
            seeds: vec![0],
            trials_per_point: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_values.is_empty() || self.sigma_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Domain("sweep axes and seed list must be non-empty".into()));
        }
        if self.trials_per_point == 0 {
            return Err(Error::Domain("trials_per_point must be positive".into()));
        }
        if let Some(v) = self.mu_values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite mu {v}")));
        }
        if let Some(v) = self.sigma_values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("invalid sigma {v}")));
        }
        Ok(())
    }

    /// Grid points in output order: sigma-major, mu-minor.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.sigma_values
            .iter()
            .flat_map(|&s| self.mu_values.iter().map(move |&m| (m, s)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mu: f64,
    pub sigma: f64,
    pub predicted_accumulated: f64,
    pub measured_mean_frob_sq: f64,
    pub toy_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub baseline_accuracy: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu,sigma,predicted_accumulated,measured_mean_frob_sq,toy_accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?}\n",
                r.mu, r.sigma, r.predicted_accumulated, r.measured_mean_frob_sq, r.toy_accuracy
            ));
        }
        out
    }

    pub fn row(&self, mu: f64, sigma: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.mu == mu && r.sigma == sigma)
    }
}

/// Predicts and measures every grid point.
///
/// Run `(seed s, trial t)` of point `i` uses noise seed
/// `derive_seed(s, [i, t])`, so results do not depend on scheduling.
pub fn run_sweep(ctx: &ToyContext, grid: &SweepGrid) -> Result<SweepResult> {
    grid.validate()?;
    let net = ctx.eval_network();
    let rows = grid
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(i, (mu, sigma))| -> Result<SweepRow> {
            let moments = ErrorMoments::known(mu, sigma)?;
            let model = MultiplierModel::synthetic_normal(mu, sigma)?;
            let predicted_accumulated = predict_network(&net, &moments)?.accumulated;
            let mut frob = Vec::new();
            let mut acc = Vec::new();
            for &s in &grid.seeds {
                for t in 0..grid.trials_per_point as u64 {
                    let m = ctx.measure(&model, NoisePlan::new(derive_seed(s, &[i as u64, t]), 0))?;
                    frob.push(m.frob_sq);
                    acc.push(m.accuracy);
                }
            }
            let runs = frob.len() as f64;
            Ok(SweepRow {
                mu,
                sigma,
                predicted_accumulated,
                measured_mean_frob_sq: compensated_sum(frob) / runs,
                toy_accuracy: compensated_sum(acc) / runs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        grid: grid.clone(),
        baseline_accuracy: ctx.baseline_accuracy,
        rows,
    })
}
