//! Closed-form distortion prediction.
//!
//! For a GEMM of dims `(n, m, p)` whose scalar products carry i.i.d. errors
//! with mean `mu` and standard deviation `sigma`, the expected squared
//! Frobenius norm of the error matrix is
//!
//! ```text
//! E[||E||_F^2] = n p (m sigma^2 + m^2 mu^2)
//! ```
//!
//! The first term is the variance component (linear in `m`), the second the
//! bias component (quadratic in `m`). A network is scored by summing the
//! per-layer expectations.

use serde::{Deserialize, Serialize};

use crate::characterization::ErrorMoments;
use crate::error::{Error, Result};
use crate::gemm::GemmDims;
use crate::network::NetworkDescriptor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionEstimate {
    pub dims: GemmDims,
    pub variance_term: f64,
    pub bias_term: f64,
    pub total: f64,
    pub bias_dominated: bool,
    /// `sigma^2 / mu^2`; infinite when `mu == 0`.
    pub crossover_m: f64,
}

/// `m mu^2 > sigma^2`, the single comparison behind every dominance flag.
#[inline]
fn bias_exceeds_variance(mu: f64, sigma: f64, m: f64) -> bool {
    m * (mu * mu) > sigma * sigma
}

pub fn predict_gemm(dims: GemmDims, moments: &ErrorMoments) -> DistortionEstimate {
    let (n, m, p) = (dims.n as f64, dims.m as f64, dims.p as f64);
    let (mu, sigma) = (moments.mu, moments.sigma);
    let outer = n * p;
    let variance_term = outer * m * (sigma * sigma);
    let bias_term = outer * m * (m * (mu * mu));
    DistortionEstimate {
        dims,
        variance_term,
        bias_term,
        total: variance_term + bias_term,
        bias_dominated: bias_exceeds_variance(mu, sigma, m),
        crossover_m: if mu == 0.0 {
            f64::INFINITY
        } else {
            (sigma * sigma) / (mu * mu)
        },
    }
}

/// Ratio of the bias term to the variance term, `m mu^2 / sigma^2`.
///
/// The ratio is `+inf` when `sigma == 0 != mu` and `0` when `mu == 0`.
pub fn dominance_condition(moments: &ErrorMoments, m: usize) -> Result<(f64, bool)> {
    if m == 0 {
        return Err(Error::Domain("inner dimension must be positive".into()));
    }
    let (mu, sigma, mf) = (moments.mu, moments.sigma, m as f64);
    let ratio = if mu == 0.0 {
        0.0
    } else if sigma == 0.0 {
        f64::INFINITY
    } else {
        mf * (mu * mu) / (sigma * sigma)
    };
    Ok((ratio, bias_exceeds_variance(mu, sigma, mf)))
}

/// Parameters of the capped inverse view `min(cap, scale / accumulated)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseView {
    pub cap: f64,
    pub scale: f64,
}

impl Default for InverseView {
    fn default() -> Self {
        InverseView {
            cap: 10.0,
            scale: 1.0,
        }
    }
}

impl InverseView {
    pub fn apply(&self, accumulated: f64) -> f64 {
        if accumulated <= 0.0 {
            self.cap
        } else {
            (self.scale / accumulated).min(self.cap)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDistortionReport {
    pub per_layer: Vec<DistortionEstimate>,
    pub accumulated: f64,
    pub inverse_scaled: f64,
    /// Set once the report has been marked as a bound on post-activation
    /// distortion.
    #[serde(default)]
    pub post_activation_upper_bound: bool,
}

impl NetworkDistortionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_index,n,m,p,variance_term,bias_term,total\n");
        for (l, e) in self.per_layer.iter().enumerate() {
            out.push_str(&format!(
                "{l},{},{},{},{:?},{:?},{:?}\n",
                e.dims.n, e.dims.m, e.dims.p, e.variance_term, e.bias_term, e.total
            ));
        }
        out
    }
}

/// Per-layer prediction with one set of moments per layer.
pub fn predict_layers(
    dims: &[GemmDims],
    moments: &[ErrorMoments],
    view: InverseView,
) -> Result<NetworkDistortionReport> {
    if dims.is_empty() {
        return Err(Error::Domain("network has no GEMM layers".into()));
    }
    if moments.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "{} layers but {} moment sets",
            dims.len(),
            moments.len()
        )));
    }
    let per_layer: Vec<DistortionEstimate> = dims
        .iter()
        .zip(moments)
        .map(|(d, mo)| predict_gemm(*d, mo))
        .collect();
    let accumulated = per_layer.iter().map(|e| e.total).sum();
    Ok(NetworkDistortionReport {
        per_layer,
        accumulated,
        inverse_scaled: view.apply(accumulated),
        post_activation_upper_bound: false,
    })
}

pub fn predict_network_with(
    net: &NetworkDescriptor,
    moments: &ErrorMoments,
    view: InverseView,
) -> Result<NetworkDistortionReport> {
    let dims = net.gemm_dims()?;
    predict_layers(&dims, &vec![*moments; dims.len()], view)
}

/// Accumulated prediction with the same moments for every layer.
pub fn predict_network(net: &NetworkDescriptor, moments: &ErrorMoments) -> Result<NetworkDistortionReport> {
    predict_network_with(net, moments, InverseView::default())
}

/// Marks the accumulated value as an upper bound on the distortion after
/// elementwise 1-Lipschitz activations. Numbers are left untouched.
pub fn lipschitz_bound_note(mut report: NetworkDistortionReport) -> NetworkDistortionReport {
    report.post_activation_upper_bound = true;
    report
}
