//! Scalar multiplier models.
//!
//! A model maps two binary32 operands to an (approximate) product. The exact
//! reference is the binary64 product of the same operands, which is exact
//! because two 24-bit significands multiply into at most 48 bits.
//!
//! The logarithmic models (Mitchell and the minimally biased variant) work
//! on the IEEE-754 bit pattern: sign and exponent are handled exactly, and
//! only the significand product is approximated by adding the fractional
//! parts of the two mantissas.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::noise::NoiseKey;

/// Bits in a binary32 fraction field.
const FRAC_BITS: u32 = 23;
const ONE: u32 = 1 << FRAC_BITS;
const FRAC_MASK: u32 = ONE - 1;

/// The MBM correction constant is `correction_code * 2^-CORRECTION_SHIFT`.
pub const CORRECTION_SHIFT: u32 = 7;
pub const MAX_CORRECTION_CODE: u8 = 15;

/// Largest precision accepted by [`exhaustive_error_table`].
pub const MAX_TABLE_BITS: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawModel")]
pub enum MultiplierModel {
    Exact,
    Mitchell,
    Mbm { correction_code: u8 },
    SyntheticNormal { mu: f64, sigma: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawModel {
    Exact,
    Mitchell,
    Mbm { correction_code: u8 },
    SyntheticNormal { mu: f64, sigma: f64 },
}

impl TryFrom<RawModel> for MultiplierModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        match raw {
            RawModel::Exact => Ok(MultiplierModel::Exact),
            RawModel::Mitchell => Ok(MultiplierModel::Mitchell),
            RawModel::Mbm { correction_code } => MultiplierModel::mbm(correction_code),
            RawModel::SyntheticNormal { mu, sigma } => MultiplierModel::synthetic_normal(mu, sigma),
        }
    }
}

impl MultiplierModel {
    pub fn mbm(correction_code: u8) -> Result<Self> {
        if correction_code > MAX_CORRECTION_CODE {
            return domain(format!(
                "MBM correction code {correction_code} exceeds {MAX_CORRECTION_CODE}"
            ));
        }
        Ok(MultiplierModel::Mbm { correction_code })
    }

    pub fn synthetic_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return domain(format!("invalid synthetic error parameters mu={mu}, sigma={sigma}"));
        }
        Ok(MultiplierModel::SyntheticNormal { mu, sigma })
    }

    /// Checks the invariants for values built without the constructors.
    pub fn validate(&self) -> Result<()> {
        match *self {
            MultiplierModel::Mbm { correction_code } => Self::mbm(correction_code).map(drop),
            MultiplierModel::SyntheticNormal { mu, sigma } => {
                Self::synthetic_normal(mu, sigma).map(drop)
            }
            _ => Ok(()),
        }
    }

    /// Whether the model consumes a noise key.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, MultiplierModel::SyntheticNormal { sigma, .. } if *sigma > 0.0)
    }

    /// Short human-readable label, e.g. `mbm-1010`.
    pub fn label(&self) -> String {
        match self {
            MultiplierModel::Exact => "exact".into(),
            MultiplierModel::Mitchell => "mitchell".into(),
            MultiplierModel::Mbm { correction_code } => format!("mbm-{correction_code:04b}"),
            MultiplierModel::SyntheticNormal { mu, sigma } => format!("normal({mu},{sigma})"),
        }
    }

    /// Approximate product widened to binary64.
    ///
    /// `noise` is only evaluated for stochastic models.
    #[inline]
    pub fn product(
        &self,
        x: f32,
        y: f32,
        noise: impl FnOnce() -> Option<NoiseKey>,
        subnormals: SubnormalMode,
    ) -> Result<f64> {
        if !x.is_finite() || !y.is_finite() {
            return domain(format!("non-finite operand ({x}, {y})"));
        }
        let exact = x as f64 * y as f64;
        match *self {
            MultiplierModel::Exact => Ok(exact),
            MultiplierModel::Mitchell => log_multiply(x, y, 0, subnormals).map(f64::from),
            MultiplierModel::Mbm { correction_code } => {
                log_multiply(x, y, correction_bits(correction_code), subnormals).map(f64::from)
            }
            MultiplierModel::SyntheticNormal { mu, sigma } => {
                let eps = if sigma == 0.0 {
                    mu
                } else {
                    match noise() {
                        Some(key) => key.normal(mu, sigma),
                        None => return domain("synthetic-normal multiplier needs a noise source"),
                    }
                };
                Ok(exact + eps)
            }
        }
    }
}

/// How the logarithmic models treat subnormal operands and results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubnormalMode {
    /// Subnormal operands and results become signed zero.
    #[default]
    Flush,
    /// Subnormal operands are renormalised; tiny results are truncated into
    /// the subnormal range.
    Preserve,
}

/// One evaluated scalar product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarMulRecord {
    pub x: f32,
    pub y: f32,
    pub z_exact: f64,
    pub z_approx: f64,
    pub epsilon: f64,
}

pub fn multiply(
    model: &MultiplierModel,
    x: f32,
    y: f32,
    noise: Option<NoiseKey>,
) -> Result<ScalarMulRecord> {
    multiply_with(model, x, y, noise, SubnormalMode::Flush)
}

pub fn multiply_with(
    model: &MultiplierModel,
    x: f32,
    y: f32,
    noise: Option<NoiseKey>,
    subnormals: SubnormalMode,
) -> Result<ScalarMulRecord> {
    let z_approx = model.product(x, y, || noise, subnormals)?;
    let z_exact = x as f64 * y as f64;
    Ok(ScalarMulRecord {
        x,
        y,
        z_exact,
        z_approx,
        epsilon: z_approx - z_exact,
    })
}

#[inline]
fn correction_bits(code: u8) -> u32 {
    (code as u32) << (FRAC_BITS - CORRECTION_SHIFT)
}

/// Adds two mantissa fractions plus a correction and performs the carry test.
///
/// Returns the fraction that follows the implicit leading one and the
/// exponent increment. With a non-zero correction the carried fraction can
/// itself exceed one; the value is still `2^bump * (1 + fraction)`.
pub fn mitchell_mantissa(f1: f64, f2: f64, correction: f64) -> Result<(f64, u8)> {
    for (name, v) in [("f1", f1), ("f2", f2), ("correction", correction)] {
        if !(0.0..1.0).contains(&v) {
            return domain(format!("{name}={v} is outside [0, 1)"));
        }
    }
    let s = f1 + f2 + correction;
    if s < 1.0 {
        Ok((s, 0))
    } else {
        Ok((s - 1.0, 1))
    }
}

/// Integer form of [`mitchell_mantissa`] on 23-bit fractions.
#[inline(always)]
fn mitchell_mantissa_bits(f1: u32, f2: u32, correction: u32) -> (u32, i32) {
    let s = f1 + f2 + correction;
    if s < ONE {
        (s, 0)
    } else {
        (s - ONE, 1)
    }
}

/// Splits a finite non-zero binary32 magnitude into (unbiased exponent,
/// 23-bit fraction). Returns `None` for values treated as zero.
#[inline(always)]
fn decompose(bits: u32, subnormals: SubnormalMode) -> Option<(i32, u32)> {
    let biased = ((bits >> FRAC_BITS) & 0xFF) as i32;
    let frac = bits & FRAC_MASK;
    if biased != 0 {
        return Some((biased - 127, frac));
    }
    if frac == 0 || subnormals == SubnormalMode::Flush {
        return None;
    }
    let msb = 31 - frac.leading_zeros() as i32;
    let normalised = (frac << (FRAC_BITS as i32 - msb)) & FRAC_MASK;
    Some((msb - 149, normalised))
}

/// Log-domain product of two binary32 values with an additive mantissa
/// correction given in units of 2^-23.
fn log_multiply(x: f32, y: f32, correction: u32, subnormals: SubnormalMode) -> Result<f32> {
    let (xb, yb) = (x.to_bits(), y.to_bits());
    let sign = (xb ^ yb) & 0x8000_0000;
    let signed_zero = f32::from_bits(sign);
    let (Some((ex, fx)), Some((ey, fy))) = (decompose(xb, subnormals), decompose(yb, subnormals))
    else {
        return Ok(signed_zero);
    };

    let (mut frac, bump) = mitchell_mantissa_bits(fx, fy, correction);
    let mut exp = ex + ey + bump;
    if frac >= ONE {
        // 1 + frac lies in [2, 3): renormalise, dropping the lowest bit.
        frac = ((ONE + frac) >> 1) - ONE;
        exp += 1;
    }

    if exp > 127 {
        return domain(format!("approximate product of {x} and {y} overflows binary32"));
    }
    if exp < -126 {
        if subnormals == SubnormalMode::Flush {
            return Ok(signed_zero);
        }
        let shift = (-126 - exp) as u32;
        let mant = if shift >= 32 { 0 } else { (ONE + frac) >> shift };
        return Ok(f32::from_bits(sign | mant));
    }
    Ok(f32::from_bits(sign | (((exp + 127) as u32) << FRAC_BITS) | frac))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTableEntry {
    pub f1: f64,
    pub f2: f64,
    pub relative_error: f64,
}

/// Evaluates the model on every pair of mantissas `1 + i/2^bits`,
/// `1 + j/2^bits`.
///
/// Stochastic models draw their noise from seed 0, indexed by pair.
pub fn exhaustive_error_table(
    model: &MultiplierModel,
    mantissa_bits: u32,
) -> Result<Vec<ErrorTableEntry>> {
    if mantissa_bits > MAX_TABLE_BITS {
        return Err(Error::Resource(format!(
            "{mantissa_bits} mantissa bits would need 2^{} table entries (limit {MAX_TABLE_BITS} bits)",
            2 * mantissa_bits
        )));
    }
    let steps = 1u64 << mantissa_bits;
    let scale = 1.0 / steps as f64;
    let mut table = Vec::with_capacity((steps * steps) as usize);
    for i in 0..steps {
        for j in 0..steps {
            let (f1, f2) = (i as f64 * scale, j as f64 * scale);
            let key = NoiseKey::new(0, 0, i * steps + j);
            let rec = multiply(model, (1.0 + f1) as f32, (1.0 + f2) as f32, Some(key))?;
            table.push(ErrorTableEntry {
                f1,
                f2,
                relative_error: rec.epsilon / rec.z_exact,
            });
        }
    }
    Ok(table)
}
