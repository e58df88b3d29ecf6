//! Monte Carlo check of the closed-form distortion prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use axnorm::characterization::ErrorMoments;
use axnorm::gemm::{compensated_sum, error_matrix, gemm_approx, gemm_exact, GemmDims};
use axnorm::noise::{derive_seed, NoiseKey, NoisePlan};
use axnorm::predictor::predict_gemm;
use axnorm::{Error, MultiplierModel, RealMatrix, Result};

pub const MIN_TRIALS: usize = 30;

/// Acceptance band: `|empirical - predicted| <= max(z * SE, rel_tol * predicted)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub z: f64,
    /// Relative slack; the default only absorbs rounding in the
    /// deterministic (`sigma == 0`) cases.
    pub rel_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { z: 3.0, rel_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub dims: GemmDims,
    pub mu: f64,
    pub sigma: f64,
    pub trials: usize,
    pub predicted: f64,
    pub empirical_mean: f64,
    pub std_error: f64,
    pub relative_error: f64,
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub tolerance: Tolerance,
    pub seed: u64,
    pub pass: bool,
}

impl ValidationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n,m,p,mu,sigma,trials,predicted,empirical_mean,std_error,relative_error,z_score,pass\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?},{}\n",
                r.dims.n,
                r.dims.m,
                r.dims.p,
                r.mu,
                r.sigma,
                r.trials,
                r.predicted,
                r.empirical_mean,
                r.std_error,
                r.relative_error,
                r.z_score,
                r.pass
            ));
        }
        out
    }
}

/// Operand matrix for one trial; entries are standard normal.
fn operand(seed: u64, rows: usize, cols: usize) -> RealMatrix {
    let data = (0..rows * cols).map(|i| NoiseKey::new(seed, 0, i as u64).standard_normal()).collect();
    RealMatrix::new(rows, cols, data).expect("finite normal draws")
}

/// Measured `||E||_F^2` of one GEMM with `SyntheticNormal` injection.
pub fn measure_frob_sq(dims: GemmDims, moments: &ErrorMoments, seed: u64) -> Result<f64> {
    let a = operand(derive_seed(seed, &[1]), dims.n, dims.m);
    let b = operand(derive_seed(seed, &[2]), dims.m, dims.p);
    let model = MultiplierModel::synthetic_normal(moments.mu, moments.sigma)?;
    let exact = gemm_exact(&a.quantize_f32()?, &b.quantize_f32()?)?;
    let approx = gemm_approx(&a, &b, &model, NoisePlan::new(derive_seed(seed, &[3]), 0))?;
    Ok(error_matrix(&exact, &approx)?.1.frob_sq)
}

fn validate_case(
    case: usize,
    dims: GemmDims,
    moments: &ErrorMoments,
    trials: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<ValidationRow> {
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| measure_frob_sq(dims, moments, derive_seed(seed, &[case as u64, t as u64])))
        .collect::<Result<Vec<f64>>>()?;
    let mean = compensated_sum(samples.iter().copied()) / trials as f64;
    let var = compensated_sum(samples.iter().map(|s| (s - mean) * (s - mean))) / (trials - 1) as f64;
    let std_error = (var / trials as f64).sqrt();
    let predicted = predict_gemm(dims, moments).total;
    let diff = (mean - predicted).abs();
    let relative_error = if predicted == 0.0 {
        if diff == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        diff / predicted
    };
    let z_score = if std_error > 0.0 {
        diff / std_error
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ValidationRow {
        dims,
        mu: moments.mu,
        sigma: moments.sigma,
        trials,
        predicted,
        empirical_mean: mean,
        std_error,
        relative_error,
        z_score,
        pass: diff <= (tol.z * std_error).max(tol.rel_tol * predicted),
    })
}

/// Compares measured and predicted distortion for each `(dims, moments)` pair.
pub fn validate_formula(
    dims_list: &[GemmDims],
    moments_list: &[ErrorMoments],
    trials: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<ValidationReport> {
    if trials < MIN_TRIALS {
        return Err(Error::Precondition(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    if dims_list.len() != moments_list.len() {
        return Err(Error::Dimension(format!(
            "{} dims but {} moment sets",
            dims_list.len(),
            moments_list.len()
        )));
    }
    let rows = dims_list
        .iter()
        .zip(moments_list)
        .enumerate()
        .map(|(c, (d, m))| validate_case(c, *d, m, trials, seed, tol))
        .collect::<Result<Vec<_>>>()?;
    let pass = rows.iter().all(|r| r.pass);
    Ok(ValidationReport {
        rows,
        tolerance: tol,
        seed,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mo(mu: f64, sigma: f64) -> ErrorMoments {
        ErrorMoments::known(mu, sigma).unwrap()
    }

    #[test]
    fn zero_error_is_exact() {
        let d = GemmDims::new(5, 7, 3).unwrap();
        let r = validate_formula(&[d], &[mo(0.0, 0.0)], 30, 1, Tolerance::default()).unwrap();
        assert_eq!(r.rows[0].empirical_mean, 0.0);
        assert_eq!(r.rows[0].predicted, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn single_product_has_expectation_sigma_squared() {
        let d = GemmDims::new(1, 1, 1).unwrap();
        let r = validate_formula(&[d], &[mo(0.0, 1.0)], 10_000, 2, Tolerance::default()).unwrap();
        let row = &r.rows[0];
        assert_eq!(row.predicted, 1.0);
        assert!((row.empirical_mean - 1.0).abs() <= 3.0 * row.std_error, "{row:?}");
    }

    #[test]
    fn monte_carlo_within_five_percent() {
        let d = GemmDims::new(16, 64, 16).unwrap();
        let r = validate_formula(&[d], &[mo(1e-3, 1e-2)], 200, 3, Tolerance::default()).unwrap();
        assert!(r.rows[0].relative_error <= 0.05, "{:?}", r.rows[0]);
        assert!(r.pass);
    }

    #[test]
    fn deterministic_bias_only_case() {
        // sigma = 0: every element is off by m * mu up to rounding
        let d = GemmDims::new(4, 32, 2).unwrap();
        let r = validate_formula(&[d], &[mo(1e-3, 0.0)], 30, 4, Tolerance::default()).unwrap();
        assert!(r.pass, "{:?}", r.rows[0]);
    }

    #[test]
    fn preconditions() {
        let d = GemmDims::new(1, 1, 1).unwrap();
        assert!(matches!(
            validate_formula(&[d], &[mo(0.0, 1.0)], 29, 0, Tolerance::default()),
            Err(Error::Precondition(_))
        ));
        assert!(validate_formula(&[d], &[], 30, 0, Tolerance::default()).is_err());
    }

    #[test]
    fn rerun_is_identical() {
        let d = GemmDims::new(3, 9, 2).unwrap();
        let a = validate_formula(&[d], &[mo(1e-2, 1e-1)], 40, 5, Tolerance::default()).unwrap();
        let b = validate_formula(&[d], &[mo(1e-2, 1e-1)], 40, 5, Tolerance::default()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
