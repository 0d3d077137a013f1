//! Artificial a-priori LLRs for component-wise pre-training.
//!
//! The J-function maps the parameter of a Gaussian LLR to the mutual information
//! between the LLR and the bit; its closed-form approximation and inverse use the
//! coefficients below.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::{BitBlock, LlrTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const H1: f64 = 0.3073;
pub const H2: f64 = 0.8935;
pub const H3: f64 = 1.1064;

/// Upper end used when drawing from ranges that end at 1 (`I = 1` means an infinite prior).
pub const MAX_MUTUAL_INFORMATION: f64 = 1.0 - 1e-6;

/// `J⁻¹(I) ≈ (−(1/H₁) log₂(1 − I^{1/H₃}))^{1/(2H₂)}`.
pub fn j_inverse(i_pre: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&i_pre) {
        return Err(Error::Domain(format!(
            "mutual information must lie in [0, 1), got {i_pre}"
        )));
    }
    if i_pre == 0.0 {
        return Ok(0.0);
    }
    let inner = -(1.0 - i_pre.powf(1.0 / H3)).log2() / H1;
    Ok(inner.powf(1.0 / (2.0 * H2)))
}

/// `J(σ) ≈ (1 − 2^{−H₁ σ^{2H₂}})^{H₃}`.
pub fn j_forward(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("J-function argument must be ≥ 0, got {sigma}")));
    }
    Ok((1.0 - 2f64.powf(-H1 * sigma.powf(2.0 * H2))).powf(H3))
}

/// How the inverse J-function output parameterizes the prior distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Mean `μ_A (2u − 1)`, variance `2 μ_A`, with `μ_A = J⁻¹(I)`.
    #[default]
    PaperLiteral,
    /// `σ_L = J⁻¹(I)` is the LLR standard deviation: mean `σ_L²/2 · (2u − 1)`,
    /// variance `σ_L²`.
    Consistent,
}

/// Target mutual information: fixed, or drawn uniformly per block from `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutualInformation {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl MutualInformation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MutualInformation::Fixed(i) if (0.0..1.0).contains(&i) => Ok(()),
            MutualInformation::Uniform { lo, hi } if 0.0 <= lo && lo <= hi && hi <= 1.0 => Ok(()),
            other => Err(Error::Domain(format!(
                "invalid a-priori mutual information {other:?}; values must lie in [0, 1)"
            ))),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MutualInformation::Fixed(i) => i,
            MutualInformation::Uniform { lo, hi } => {
                let hi = hi.min(MAX_MUTUAL_INFORMATION);
                let lo = lo.min(hi);
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub i_pre: MutualInformation,
    pub mode: PriorMode,
}

impl PriorSpec {
    pub fn fixed(i_pre: f64, mode: PriorMode) -> Self {
        Self {
            i_pre: MutualInformation::Fixed(i_pre),
            mode,
        }
    }

    pub fn uniform(lo: f64, hi: f64, mode: PriorMode) -> Self {
        Self {
            i_pre: MutualInformation::Uniform { lo, hi },
            mode,
        }
    }

    /// `(mean magnitude, standard deviation)` of the prior LLRs at mutual information `i`.
    pub fn moments(&self, i: f64) -> Result<(f64, f64)> {
        let param = j_inverse(i)?;
        Ok(match self.mode {
            PriorMode::PaperLiteral => (param, (2.0 * param).sqrt()),
            PriorMode::Consistent => (param * param / 2.0, param),
        })
    }
}

/// Gaussian a-priori LLRs `(batch, k, 1)` for the bits `u`, drawn from `rng` only.
pub fn sample_priors<R: Rng + ?Sized>(u: &BitBlock, spec: &PriorSpec, rng: &mut R) -> Result<LlrTensor> {
    spec.i_pre.validate()?;
    let k = u.k();
    let mut data = Vec::with_capacity(u.data().len());
    for row in u.rows() {
        let (mean, std) = spec.moments(spec.i_pre.draw(rng))?;
        data.extend(row.iter().map(|&bit| {
            let z: f64 = rng.sample(StandardNormal);
            let sign = 2.0 * bit as f64 - 1.0;
            (mean * sign + std * z) as f32
        }));
    }
    LlrTensor::new(Tensor::from_vec([u.batch(), k, 1], data)?)
}

/// `I ≈ 1 − E[log₂(1 + e^{−(2u−1) l})]`, clamped to `[0, 1]`.
pub fn estimate_mi(l: &LlrTensor, u: &BitBlock) -> Result<f64> {
    if l.features() != 1 {
        return Err(Error::Shape(format!(
            "mutual information estimate needs F = 1 messages, got F = {}",
            l.features()
        )));
    }
    if u.data().is_empty() {
        return Err(Error::Empty("mutual information of zero samples".into()));
    }
    if l.tensor().numel() != u.data().len() {
        return Err(Error::Shape(format!(
            "{} LLRs for {} bits",
            l.tensor().numel(),
            u.data().len()
        )));
    }
    let loss: f64 = l
        .tensor()
        .data()
        .iter()
        .zip(u.data())
        .map(|(&v, &bit)| {
            let x = -(2.0 * bit as f64 - 1.0) * v as f64;
            // log2(1 + e^x) without overflow.
            (x.max(0.0) + (-x.abs()).exp().ln_1p()) / std::f64::consts::LN_2
        })
        .sum();
    Ok((1.0 - loss / u.data().len() as f64).clamp(0.0, 1.0))
}
