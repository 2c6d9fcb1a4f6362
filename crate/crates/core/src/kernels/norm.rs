use crate::error::{Error, Result};
use crate::ir::{Category, ConstScale, ConstValue, EdgeId, Graph};

use super::{build_rsqrt, ApproxConfig};

/// Row mean `[R, L] -> [R, 1]`: a ones matmul, then a multiply by `1/L`.
fn row_mean(g: &mut Graph, x: EdgeId) -> Result<EdgeId> {
    let l = match g.ann(x).shape[..] {
        [_, l] if l > 0 => l,
        _ => {
            return Err(Error::Shape(format!(
                "norm expects a non-empty [rows, len] matrix, got {:?}",
                g.ann(x).shape
            )))
        }
    };
    let ones = g.constant(ConstValue::Ones { rows: l, cols: 1 }, ConstScale::Fixed(0));
    let sum = g.matmul(x, ones, false)?;
    let inv = g.scalar(1.0 / l as f64);
    g.mul(sum, inv)
}

/// `(x - mean) / sqrt(var + eps)` per row, without the affine part.
pub fn build_layernorm(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::Norm, |g| {
        let mu = row_mean(g, x)?;
        let c = g.sub(x, mu)?;
        let c2 = g.mul(c, c)?;
        let var = row_mean(g, c2)?;
        let eps = g.scalar_like(cfg.norm_eps, var);
        let v = g.add(var, eps)?;
        let r = build_rsqrt(g, v, cfg)?;
        g.mul(c, r)
    })
}

/// `x / sqrt(mean(x^2) + eps)` per row, without the gain.
pub fn build_rmsnorm(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::Norm, |g| {
        let x2 = g.mul(x, x)?;
        let ms = row_mean(g, x2)?;
        let eps = g.scalar_like(cfg.norm_eps, ms);
        let v = g.add(ms, eps)?;
        let r = build_rsqrt(g, v, cfg)?;
        g.mul(x, r)
    })
}
