//! Error propagation from approximate scalar multipliers through matrix
//! multiplication and small neural networks.

pub mod characterization;
pub mod error;
pub mod gemm;
pub mod matrix;
pub mod multiplier;
pub mod network;
pub mod noise;
pub mod predictor;

pub use characterization::{characterize, CharacterizationRecord, ErrorMoments, OperandDistribution};
pub use error::{Error, Result};
pub use gemm::{error_matrix, gemm_approx, gemm_exact, ErrorMatrixStats, GemmDims};
pub use matrix::RealMatrix;
pub use multiplier::{multiply, MultiplierModel, SubnormalMode};
pub use noise::{NoiseKey, NoisePlan};
pub use predictor::{predict_gemm, predict_network, DistortionEstimate, NetworkDistortionReport};
