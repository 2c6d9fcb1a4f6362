//! Graph builders for nonlinear functions, using only additions,
//! multiplications, comparisons and public constants.
//!
//! Division by a public constant is a multiplication by its reciprocal;
//! when the reciprocal is a power of two the constant is encoded exactly at
//! a small scale, so the product only grows the scale. The truncation pass
//! then decides where those extra fractional bits get dropped.

mod activation;
mod approx;
mod norm;
mod softmax;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Category, EdgeId, Graph};

pub use activation::{build_gelu, build_sigmoid, build_silu, GELU_SIGMOID_SCALE};
pub use approx::{build_exp, build_reciprocal, build_rsqrt};
pub use norm::{build_layernorm, build_rmsnorm};
pub use softmax::{build_row_max, build_softmax};
pub use transformer::{
    build_model, build_transformer_block, preset, preset_names, Activation, BlockDims, ModelConfig,
    Norm,
};

/// Initial guess `scale * exp(shift - x) + offset` for the reciprocal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReciprocalGuess {
    pub scale: f64,
    pub shift: f64,
    pub offset: f64,
}

impl Default for ReciprocalGuess {
    fn default() -> Self {
        ReciprocalGuess {
            scale: 3.0,
            shift: 0.5,
            offset: 0.003,
        }
    }
}

/// Initial guess `(scale * exp(-(x/2 + shift)) + offset) * damping` for the
/// inverse square root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsqrtGuess {
    pub scale: f64,
    pub shift: f64,
    pub offset: f64,
    pub damping: f64,
}

impl Default for RsqrtGuess {
    fn default() -> Self {
        RsqrtGuess {
            scale: 2.2,
            shift: 0.2,
            offset: 0.2,
            damping: 1023.0 / 1024.0,
        }
    }
}

/// Iteration counts and initial guesses for the approximations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApproxConfig {
    pub exp_squarings: u32,
    pub recip_iters: u32,
    pub rsqrt_iters: u32,
    pub softmax_stabilize: bool,
    /// Lower bound applied to exponent inputs after max subtraction.
    pub exp_input_clamp: f64,
    pub recip_guess: ReciprocalGuess,
    pub rsqrt_guess: RsqrtGuess,
    pub norm_eps: f64,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            exp_squarings: 8,
            recip_iters: 20,
            rsqrt_iters: 12,
            softmax_stabilize: true,
            exp_input_clamp: -32.0,
            recip_guess: ReciprocalGuess::default(),
            rsqrt_guess: RsqrtGuess::default(),
            norm_eps: 1e-5,
        }
    }
}

impl ApproxConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exp_squarings == 0 || self.recip_iters == 0 || self.rsqrt_iters == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.exp_input_clamp < 0.0) {
            return Err(Error::Config("exp input clamp must be negative".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `[p, m] x [m, q]`, tagged so that truncations of the product are
/// attributed to matrix multiplication.
pub fn build_matmul(g: &mut Graph, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
    g.with_category(Category::MatMulTrunc, |g| g.matmul(a, b, false))
}

/// `b + flag * (a - b)`: picks `a` where `flag` is 1.
pub(crate) fn select(g: &mut Graph, flag: EdgeId, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
    let d = g.sub(a, b)?;
    let picked = g.mul(flag, d)?;
    g.add(b, picked)
}
