//! Ranking real multipliers by predicted network distortion.

use serde::{Deserialize, Serialize};

use axnorm::characterization::{characterize, ErrorMoments, OperandDistribution};
use axnorm::noise::{derive_seed, NoisePlan};
use axnorm::predictor::predict_network;
use axnorm::{Error, MultiplierModel, Result};

use crate::stats::spearman;
use crate::toy::ToyContext;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub model: MultiplierModel,
    pub moments: ErrorMoments,
    pub predicted: f64,
    pub measured_mean_frob_sq: f64,
    pub toy_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMultiplierTable {
    /// Sorted by `predicted`, ascending; ties keep input order.
    pub rows: Vec<RankRow>,
    /// `None` when a column is constant (e.g. every model has the same accuracy).
    pub spearman_pred_vs_acc: Option<f64>,
    pub spearman_pred_vs_measured: Option<f64>,
    pub baseline_accuracy: f64,
}

impl RankedMultiplierTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,model,mu,sigma,sample_count,predicted,measured_mean_frob_sq,toy_accuracy\n");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:?},{:?},{},{:?},{:?},{:?}\n",
                i + 1,
                r.model.label(),
                r.moments.mu,
                r.moments.sigma,
                r.moments.sample_count,
                r.predicted,
                r.measured_mean_frob_sq,
                r.toy_accuracy
            ));
        }
        out
    }

    /// The best measured accuracy over all rows.
    pub fn best_accuracy(&self) -> f64 {
        self.rows.iter().map(|r| r.toy_accuracy).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn correlation(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    match spearman(xs, ys) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Characterizes each model on `dist`, predicts the accumulated distortion of
/// the toy network, and measures distortion and accuracy with the model
/// itself in every product.
pub fn rank_multipliers(
    models: &[MultiplierModel],
    dist: &OperandDistribution,
    samples: u64,
    ctx: &ToyContext,
    seed: u64,
) -> Result<RankedMultiplierTable> {
    if models.len() < 2 {
        return Err(Error::Domain("ranking needs at least two models".into()));
    }
    let net = ctx.eval_network();
    let mut rows = Vec::with_capacity(models.len());
    for (i, model) in models.iter().enumerate() {
        let moments = characterize(model, dist, samples)?;
        let predicted = predict_network(&net, &moments)?.accumulated;
        let m = ctx.measure(model, NoisePlan::new(derive_seed(seed, &[i as u64]), 0))?;
        rows.push(RankRow {
            model: *model,
            moments,
            predicted,
            measured_mean_frob_sq: m.frob_sq,
            toy_accuracy: m.accuracy,
        });
    }
    rows.sort_by(|a, b| a.predicted.total_cmp(&b.predicted));
    let pred: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.toy_accuracy).collect();
    let measured: Vec<f64> = rows.iter().map(|r| r.measured_mean_frob_sq).collect();
    Ok(RankedMultiplierTable {
        spearman_pred_vs_acc: correlation(&pred, &acc)?,
        spearman_pred_vs_measured: correlation(&pred, &measured)?,
        baseline_accuracy: ctx.baseline_accuracy,
        rows,
    })
}
