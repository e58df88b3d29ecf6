//! Run configuration (JSON) and command-line value parsing.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use axnorm::characterization::{OperandDistribution, DEFAULT_SAMPLES};
use axnorm::gemm::GemmDims;
use axnorm::network::NetworkDescriptor;
use axnorm::predictor::InverseView;
use axnorm::{Error, MultiplierModel, Result};

use crate::sweep::SweepGrid;
use crate::toy::ToyConfig;
use crate::validate::Tolerance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub characterize: CharacterizeConfig,
    /// Network for `predict`; the toy CNN at evaluation batch size if absent.
    pub network: Option<NetworkDescriptor>,
    pub toy: ToyConfig,
    /// Saved model directory; the model is trained from `toy` if absent.
    pub model_dir: Option<PathBuf>,
    pub sweep: SweepGrid,
    pub validate: ValidateConfig,
    pub rank: RankConfig,
    pub inverse_view: InverseView,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            characterize: CharacterizeConfig::default(),
            network: None,
            toy: ToyConfig::default(),
            model_dir: None,
            sweep: SweepGrid::default(),
            validate: ValidateConfig::default(),
            rank: RankConfig::default(),
            inverse_view: InverseView::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// The network `predict` scores.
    pub fn prediction_network(&self) -> NetworkDescriptor {
        self.network
            .clone()
            .unwrap_or_else(|| NetworkDescriptor::toy_cnn(self.toy.eval_size))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeConfig {
    pub model: MultiplierModel,
    pub distribution: OperandDistribution,
    pub samples: u64,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            model: MultiplierModel::Mbm { correction_code: 10 },
            distribution: OperandDistribution::default_corpus(0),
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateCase {
    pub dims: GemmDims,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub cases: Vec<ValidateCase>,
    pub trials: usize,
    pub tolerance: Tolerance,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let mut cases = Vec::new();
        for (n, p, m) in [(16, 16, 64), (32, 32, 256), (8, 8, 1024)] {
            for (mu, sigma) in [(0.0, 1e-2), (1e-3, 1e-2), (1e-3, 0.0)] {
                cases.push(ValidateCase {
                    dims: GemmDims { n, m, p },
                    mu,
                    sigma,
                });
            }
        }
        ValidateConfig {
            cases,
            trials: 200,
            tolerance: Tolerance {
                z: 3.0,
                rel_tol: 0.05,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub models: Vec<MultiplierModel>,
    pub distribution: OperandDistribution,
    pub samples: u64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            models: (0..=15).map(|c| MultiplierModel::Mbm { correction_code: c }).collect(),
            distribution: OperandDistribution::default_corpus(0),
            samples: 1 << 20,
        }
    }
}

/// A multiplier given on the command line.
///
/// Accepted forms: `exact`, `mitchell`, `mbm:<code>` (decimal),
/// `mbm-<bits>` (four binary digits, as printed in reports) and
/// `normal:<mu>:<sigma>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelArg(pub MultiplierModel);

impl FromStr for ModelArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("unrecognised multiplier '{s}'"));
        let model = match s {
            "exact" => MultiplierModel::Exact,
            "mitchell" => MultiplierModel::Mitchell,
            _ => {
                if let Some(code) = s.strip_prefix("mbm:") {
                    MultiplierModel::mbm(code.parse().map_err(|_| bad())?)?
                } else if let Some(bits) = s.strip_prefix("mbm-") {
                    MultiplierModel::mbm(u8::from_str_radix(bits, 2).map_err(|_| bad())?)?
                } else if let Some(rest) = s.strip_prefix("normal:") {
                    let (mu, sigma) = rest.split_once(':').ok_or_else(bad)?;
                    MultiplierModel::synthetic_normal(
                        mu.parse().map_err(|_| bad())?,
                        sigma.parse().map_err(|_| bad())?,
                    )?
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(ModelArg(model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_arguments() {
        assert_eq!("exact".parse::<ModelArg>().unwrap().0, MultiplierModel::Exact);
        assert_eq!("mbm:10".parse::<ModelArg>().unwrap().0, MultiplierModel::Mbm { correction_code: 10 });
        assert_eq!("mbm-1010".parse::<ModelArg>().unwrap().0, MultiplierModel::Mbm { correction_code: 10 });
        assert_eq!(
            "normal:1e-3:0.5".parse::<ModelArg>().unwrap().0,
            MultiplierModel::SyntheticNormal { mu: 1e-3, sigma: 0.5 }
        );
        for bad in ["mbm:16", "normal:1", "normal:0:-1", "booth", "mbm-2"] {
            assert!(bad.parse::<ModelArg>().is_err(), "{bad}");
        }
    }

    #[test]
    fn label_round_trips() {
        for c in 0..=15 {
            let m = MultiplierModel::mbm(c).unwrap();
            assert_eq!(m.label().parse::<ModelArg>().unwrap().0, m);
        }
    }

    #[test]
    fn config_defaults_and_partial_files() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 5, "sweep": {"mu_values": [0.0], "sigma_values": [0.0], "seeds": [1], "trials_per_point": 1}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.validate, ValidateConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 5}"#).is_err());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&RunConfig::default()).unwrap()).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
