//! GEMM with a pluggable scalar multiplier.
//!
//! Every output element is reduced in binary64 with `k` ascending, so the
//! only deviation between [`gemm_approx`] and [`gemm_exact`] is the one
//! introduced by the multiplier. Output rows are computed in parallel; the
//! per-element reduction order and the counter-based noise keys make the
//! result independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::multiplier::{MultiplierModel, SubnormalMode};
use crate::noise::NoisePlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

impl GemmDims {
    pub fn new(n: usize, m: usize, p: usize) -> Result<Self> {
        let d = GemmDims { n, m, p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(Error::Dimension(format!(
                "GEMM dims must be positive, got n={} m={} p={}",
                self.n, self.m, self.p
            )));
        }
        Ok(())
    }

    /// Number of scalar products.
    pub fn products(&self) -> u128 {
        self.n as u128 * self.m as u128 * self.p as u128
    }
}

fn check_inner(a: &RealMatrix, b: &RealMatrix) -> Result<GemmDims> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    GemmDims::new(a.rows(), a.cols(), b.cols())
}

/// Reference product in binary64.
pub fn gemm_exact(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    let GemmDims { n, m, p } = check_inner(a, b)?;
    let bt = b.transpose();
    let (ad, btd) = (a.data(), bt.data());
    let mut out = vec![0.0; n * p];
    out.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
        let arow = &ad[i * m..(i + 1) * m];
        for (j, slot) in row.iter_mut().enumerate() {
            let bcol = &btd[j * m..(j + 1) * m];
            let mut acc = 0.0;
            for k in 0..m {
                acc += arow[k] * bcol[k];
            }
            *slot = acc;
        }
    });
    finite_or_locate(n, p, out)
}

/// Product with every scalar multiplication replaced by `model`.
///
/// Operands are rounded to binary32 first. The error for product
/// `(i, k, j)` of a stochastic model is keyed by `plan`.
pub fn gemm_approx(
    a: &RealMatrix,
    b: &RealMatrix,
    model: &MultiplierModel,
    plan: NoisePlan,
) -> Result<RealMatrix> {
    model.validate()?;
    let GemmDims { n, m, p } = check_inner(a, b)?;
    let af = a.to_f32_vec();
    let btf = b.transpose().to_f32_vec();
    let mut out = vec![0.0; n * p];
    out.par_chunks_mut(p)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let arow = &af[i * m..(i + 1) * m];
            for (j, slot) in row.iter_mut().enumerate() {
                let bcol = &btf[j * m..(j + 1) * m];
                *slot = approx_dot(arow, bcol, model, plan, i, j)?;
            }
            Ok(())
        })?;
    finite_or_locate(n, p, out)
}

#[inline]
fn approx_dot(
    arow: &[f32],
    bcol: &[f32],
    model: &MultiplierModel,
    plan: NoisePlan,
    i: usize,
    j: usize,
) -> Result<f64> {
    let locate = |e: Error| Error::Numeric {
        row: i,
        col: j,
        detail: e.to_string(),
    };
    let mut acc = 0.0;
    match *model {
        MultiplierModel::Exact => {
            for (&x, &y) in arow.iter().zip(bcol) {
                acc += x as f64 * y as f64;
            }
        }
        _ => {
            let cell = if model.is_stochastic() { plan.cell_base(i, j) } else { 0 };
            for (k, (&x, &y)) in arow.iter().zip(bcol).enumerate() {
                acc += model
                    .product(x, y, || Some(NoisePlan::key_from_cell(cell, k)), SubnormalMode::Flush)
                    .map_err(locate)?;
            }
        }
    }
    Ok(acc)
}

fn finite_or_locate(rows: usize, cols: usize, data: Vec<f64>) -> Result<RealMatrix> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            row: pos / cols,
            col: pos % cols,
            detail: format!("accumulated value is {}", data[pos]),
        });
    }
    Ok(RealMatrix::from_parts_unchecked(rows, cols, data))
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

pub fn sum_of_squares(values: &[f64]) -> f64 {
    compensated_sum(values.iter().map(|v| v * v))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrixStats {
    pub rows: usize,
    pub cols: usize,
    /// Squared Frobenius norm of the error matrix.
    pub frob_sq: f64,
    pub max_abs: f64,
    pub element_mean: f64,
    /// Population variance of the entries.
    pub element_var: f64,
}

impl ErrorMatrixStats {
    pub fn of(e: &RealMatrix) -> Self {
        let d = e.data();
        let count = d.len() as f64;
        let mean = compensated_sum(d.iter().copied()) / count;
        let var = compensated_sum(d.iter().map(|v| (v - mean) * (v - mean))) / count;
        ErrorMatrixStats {
            rows: e.rows(),
            cols: e.cols(),
            frob_sq: sum_of_squares(d),
            max_abs: d.iter().fold(0.0, |acc, v| acc.max(v.abs())),
            element_mean: mean,
            element_var: var,
        }
    }
}

/// `E = C' - C` and its statistics.
pub fn error_matrix(
    c_exact: &RealMatrix,
    c_approx: &RealMatrix,
) -> Result<(RealMatrix, ErrorMatrixStats)> {
    if !c_exact.same_shape(c_approx) {
        return Err(Error::Dimension(format!(
            "error matrix needs equal shapes, got {:?} and {:?}",
            c_exact.shape(),
            c_approx.shape()
        )));
    }
    let diff: Vec<f64> = c_approx
        .data()
        .iter()
        .zip(c_exact.data())
        .map(|(a, e)| a - e)
        .collect();
    let e = finite_or_locate(c_exact.rows(), c_exact.cols(), diff)?;
    let stats = ErrorMatrixStats::of(&e);
    Ok((e, stats))
}

/// Elementwise activation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Clamp { lo: f64, hi: f64 },
}

impl Activation {
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
            Activation::Clamp { lo, hi } => v.clamp(lo, hi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCheck {
    /// `||f(X + E) - f(X)||_F`
    pub lhs: f64,
    /// `||E||_F`
    pub rhs: f64,
    pub holds: bool,
}

/// Slack, in units of binary64 epsilon, applied to the operand norms.
const LIPSCHITZ_SLACK_ULPS: f64 = 64.0;

/// Checks `||f(X + E) - f(X)||_F <= ||E||_F` for an elementwise 1-Lipschitz `f`.
///
/// Forming `X + E` rounds at the scale of `X`, so the slack is relative to
/// `||X||_F + ||E||_F`.
pub fn lipschitz_check(x: &RealMatrix, e: &RealMatrix, activation: Activation) -> Result<LipschitzCheck> {
    if !x.same_shape(e) {
        return Err(Error::Dimension(format!(
            "Lipschitz check needs equal shapes, got {:?} and {:?}",
            x.shape(),
            e.shape()
        )));
    }
    if let Activation::Clamp { lo, hi } = activation {
        if !(lo <= hi) {
            return Err(Error::Domain(format!("clamp bounds [{lo}, {hi}] are inverted")));
        }
    }
    let diffs: Vec<f64> = x
        .data()
        .iter()
        .zip(e.data())
        .map(|(&xv, &ev)| activation.apply(xv + ev) - activation.apply(xv))
        .collect();
    let lhs = sum_of_squares(&diffs).sqrt();
    let rhs = e.frobenius_norm();
    let tol = LIPSCHITZ_SLACK_ULPS * f64::EPSILON * (x.frobenius_norm() + rhs);
    Ok(LipschitzCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKey;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> RealMatrix {
        RealMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    fn random_f32_matrix(rows: usize, cols: usize, seed: u64) -> RealMatrix {
        RealMatrix::from_fn(rows, cols, |i, j| {
            let u = NoiseKey::new(seed, i as u64, j as u64).uniform();
            (2.0 * u - 1.0) as f32 as f64
        })
        .unwrap()
    }

    fn naive(a: &RealMatrix, b: &RealMatrix) -> RealMatrix {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out[i * b.cols() + j] = s;
            }
        }
        RealMatrix::new(a.rows(), b.cols(), out).unwrap()
    }

    #[test]
    fn identity_and_scalar() {
        let b = random_f32_matrix(3, 5, 1);
        assert_eq!(gemm_exact(&RealMatrix::identity(3), &b).unwrap(), b);
        let c = gemm_exact(&mat(1, 1, &[2.0]), &mat(1, 1, &[3.0])).unwrap();
        assert_eq!(c.data(), &[6.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let a = random_f32_matrix(4, 4, 42);
        let b = random_f32_matrix(4, 4, 43);
        assert_eq!(gemm_exact(&a, &b).unwrap(), naive(&a, &b));
        let a = random_f32_matrix(7, 13, 1);
        let b = random_f32_matrix(13, 3, 2);
        assert_eq!(gemm_exact(&a, &b).unwrap(), naive(&a, &b));
    }

    #[test]
    fn dimension_mismatch() {
        let a = random_f32_matrix(2, 3, 0);
        assert!(matches!(gemm_exact(&a, &a), Err(Error::Dimension(_))));
        let plan = NoisePlan::new(0, 0);
        assert!(matches!(
            gemm_approx(&a, &a, &MultiplierModel::Exact, plan),
            Err(Error::Dimension(_))
        ));
        assert!(error_matrix(&a, &a.transpose()).is_err());
    }

    #[test]
    fn exact_model_is_bitwise_reference() {
        let a = random_f32_matrix(9, 31, 5);
        let b = random_f32_matrix(31, 6, 6);
        let plan = NoisePlan::new(123, 0);
        let c = gemm_exact(&a, &b).unwrap();
        let c2 = gemm_approx(&a, &b, &MultiplierModel::Exact, plan).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn constant_error_shifts_by_m_times_c() {
        // Small integers keep every sum exact.
        let a = RealMatrix::from_fn(2, 4, |i, k| (i + k) as f64 - 2.0).unwrap();
        let b = RealMatrix::from_fn(4, 3, |k, j| (k * j) as f64 - 1.0).unwrap();
        let model = MultiplierModel::synthetic_normal(0.5, 0.0).unwrap();
        let c = gemm_exact(&a, &b).unwrap();
        let c2 = gemm_approx(&a, &b, &model, NoisePlan::new(1, 0)).unwrap();
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert_eq!(*y, x + 2.0);
        }
        let (e, stats) = error_matrix(&c, &c2).unwrap();
        assert!(e.data().iter().all(|&v| v == 2.0));
        assert_eq!(stats.frob_sq, 24.0);
        assert_eq!(stats.max_abs, 2.0);
        assert_eq!(stats.element_mean, 2.0);
        assert_eq!(stats.element_var, 0.0);
    }

    #[test]
    fn synthetic_matches_scalar_oracle() {
        let a = random_f32_matrix(8, 64, 70);
        let b = random_f32_matrix(64, 8, 71);
        let model = MultiplierModel::synthetic_normal(1e-3, 1e-2).unwrap();
        let plan = NoisePlan::new(7, 0);
        let c2 = gemm_approx(&a, &b, &model, plan).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..64 {
                    let rec = crate::multiplier::multiply(
                        &model,
                        a.get(i, k) as f32,
                        b.get(k, j) as f32,
                        Some(plan.key(i, k, j)),
                    )
                    .unwrap();
                    acc += rec.z_approx;
                }
                assert_eq!(acc.to_bits(), c2.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn bit_level_models_match_scalar_oracle() {
        let a = random_f32_matrix(5, 17, 3);
        let b = random_f32_matrix(17, 4, 4);
        for model in [MultiplierModel::Mitchell, MultiplierModel::mbm(10).unwrap()] {
            let c2 = gemm_approx(&a, &b, &model, NoisePlan::new(0, 0)).unwrap();
            for i in 0..5 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for k in 0..17 {
                        let r = crate::multiplier::multiply(
                            &model,
                            a.get(i, k) as f32,
                            b.get(k, j) as f32,
                            None,
                        )
                        .unwrap();
                        acc += r.z_approx;
                    }
                    assert_eq!(acc, c2.get(i, j));
                }
            }
        }
    }

    #[test]
    fn replay_is_independent_of_threads() {
        let a = random_f32_matrix(33, 40, 8);
        let b = random_f32_matrix(40, 9, 9);
        let model = MultiplierModel::synthetic_normal(-2e-3, 5e-2).unwrap();
        let plan = NoisePlan::new(99, 4);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(5).build().unwrap();
        let x = one.install(|| gemm_approx(&a, &b, &model, plan)).unwrap();
        let y = many.install(|| gemm_approx(&a, &b, &model, plan)).unwrap();
        let z = gemm_approx(&a, &b, &model, plan).unwrap();
        assert_eq!(x, y);
        assert_eq!(x, z);
    }

    #[test]
    fn overflow_reports_location() {
        let a = mat(2, 1, &[1.0, 3.0e38]);
        let b = mat(1, 2, &[1.0, 3.0e38]);
        match gemm_approx(&a, &b, &MultiplierModel::Mitchell, NoisePlan::new(0, 0)) {
            Err(Error::Numeric { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_matrix_examples() {
        let c = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (_, s) = error_matrix(&c, &c).unwrap();
        assert_eq!(s.frob_sq, 0.0);
        let zero = mat(1, 2, &[0.0, 0.0]);
        let (_, s) = error_matrix(&zero, &mat(1, 2, &[3.0, 4.0])).unwrap();
        assert_eq!(s.frob_sq, 25.0);
        assert!(s.frob_sq >= s.max_abs * s.max_abs);
    }

    #[test]
    fn lipschitz_examples() {
        let x = mat(1, 2, &[1.0, -1.0]);
        let e = mat(1, 2, &[0.5, 0.5]);
        let r = lipschitz_check(&x, &e, Activation::Relu).unwrap();
        assert_eq!(r.lhs, 0.5);
        assert!((r.rhs - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(r.holds);

        let x = random_f32_matrix(6, 6, 1);
        let e = random_f32_matrix(6, 6, 2);
        let r = lipschitz_check(&x, &e, Activation::Identity).unwrap();
        assert!((r.lhs - r.rhs).abs() <= 1e-14 * r.rhs);
        assert!(r.holds);

        let bad = Activation::Clamp { lo: 1.0, hi: -1.0 };
        assert!(lipschitz_check(&x, &e, bad).is_err());
    }

    #[test]
    fn lipschitz_random_relu() {
        for t in 0..1000u64 {
            let x = random_f32_matrix(4, 5, 2 * t);
            let e = random_f32_matrix(4, 5, 2 * t + 1);
            assert!(lipschitz_check(&x, &e, Activation::Relu).unwrap().holds);
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let vals = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(vals), 2.0);
    }
}
