use crate::error::Result;
use crate::ir::{Category, EdgeId, Graph};

use super::{build_exp, build_reciprocal, ApproxConfig};

/// Slope of the logistic approximation `gelu(x) ~ x * sigmoid(1.702 x)`.
pub const GELU_SIGMOID_SCALE: f64 = 1.702;

/// `1 / (1 + e^-x)`.
///
/// The exponential only ever sees `-|x|`, so the reciprocal argument stays
/// in `(1, 2]`; the sign is reapplied with `sigmoid(x) = 1 - sigmoid(-x)`.
pub fn build_sigmoid(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::GeluSilu, |g| sigmoid(g, x, cfg))
}

fn sigmoid(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    let zero = g.scalar_like(0.0, x);
    let pos = g.compare(x, zero)?;
    let two = g.scalar(2.0);
    let twice = g.mul(pos, two)?;
    let one = g.scalar_like(1.0, twice);
    // 1 - 2 pos: +1 for x <= 0, -1 for x > 0
    let flip = g.sub(one, twice)?;
    let neg_abs = g.mul(x, flip)?;
    let e = build_exp(g, neg_abs, cfg)?;
    let one = g.scalar_like(1.0, e);
    let denom = g.add(one, e)?;
    let p = build_reciprocal(g, denom, cfg)?;
    let one = g.scalar_like(1.0, p);
    let q = g.sub(one, p)?;
    let p2 = g.mul(p, two)?;
    let one = g.scalar_like(1.0, p2);
    let d = g.sub(p2, one)?;
    let shift = g.mul(pos, d)?;
    g.add(q, shift)
}

/// `x * sigmoid(x)`.
pub fn build_silu(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::GeluSilu, |g| {
        let s = sigmoid(g, x, cfg)?;
        g.mul(x, s)
    })
}

/// `x * sigmoid(1.702 x)`.
pub fn build_gelu(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::GeluSilu, |g| {
        let c = g.scalar(GELU_SIGMOID_SCALE);
        let xs = g.mul(x, c)?;
        let s = sigmoid(g, xs, cfg)?;
        g.mul(x, s)
    })
}
