use crate::error::{Error, Result};
use crate::ir::{Category, ConstScale, ConstValue, EdgeId, Graph};

use super::{build_exp, build_reciprocal, select, ApproxConfig};

fn columns(g: &Graph, x: EdgeId) -> Result<(usize, usize)> {
    match g.ann(x).shape[..] {
        [r, l] if r > 0 && l > 0 => Ok((r, l)),
        _ => Err(Error::Shape(format!(
            "softmax expects a non-empty [rows, len] matrix, got {:?}",
            g.ann(x).shape
        ))),
    }
}

/// Row-wise maximum `[R, L] -> [R, 1]` by a tournament of compare-selects.
///
/// Each round splits the columns into a left and a right half with 0/1
/// selector matmuls (the halves overlap by one column when the width is
/// odd) and keeps the larger of each pair.
pub fn build_row_max(g: &mut Graph, x: EdgeId) -> Result<EdgeId> {
    let (_, mut w) = columns(g, x)?;
    let mut cur = x;
    while w > 1 {
        let h = w.div_ceil(2);
        let left = g.constant(
            ConstValue::Selector {
                rows: w,
                cols: h,
                offset: 0,
            },
            ConstScale::Fixed(0),
        );
        let right = g.constant(
            ConstValue::Selector {
                rows: w,
                cols: h,
                offset: w - h,
            },
            ConstScale::Fixed(0),
        );
        let a = g.matmul(cur, left, false)?;
        let b = g.matmul(cur, right, false)?;
        let flag = g.compare(a, b)?;
        cur = select(g, flag, a, b)?;
        w = h;
    }
    Ok(cur)
}

/// Row-wise softmax of a `[R, L]` matrix.
pub fn build_softmax(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    g.with_category(Category::Softmax, |g| softmax(g, x, cfg))
}

fn softmax(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    let (_, l) = columns(g, x)?;
    let z = if cfg.softmax_stabilize {
        let m = build_row_max(g, x)?;
        let z = g.sub(x, m)?;
        let floor = g.scalar_like(cfg.exp_input_clamp, z);
        let above = g.compare(z, floor)?;
        select(g, above, z, floor)?
    } else {
        x
    };
    let e = build_exp(g, z, cfg)?;
    let ones = g.constant(ConstValue::Ones { rows: l, cols: 1 }, ConstScale::Fixed(0));
    let sum = g.matmul(e, ones, false)?;
    let inv = build_reciprocal(g, sum, cfg)?;
    g.mul(e, inv)
}
