use crate::error::Result;
use crate::ir::{ConstScale, ConstValue, EdgeId, Graph};

use super::ApproxConfig;

/// `e^x ~ (1 + x / 2^r)^(2^r)` with `r = exp_squarings`.
pub fn build_exp(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    let r = cfg.exp_squarings;
    let inv = g.constant(
        ConstValue::Scalar {
            value: 2f64.powi(-(r as i32)),
        },
        ConstScale::Fixed(r),
    );
    let t = g.mul(x, inv)?;
    let one = g.scalar_like(1.0, t);
    let mut y = g.add(t, one)?;
    for _ in 0..r {
        y = g.mul(y, y)?;
    }
    Ok(y)
}

/// Newton iteration `y <- y (2 - x y)` for `1/x`, `x > 0`.
pub fn build_reciprocal(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    let guess = cfg.recip_guess;
    let shift = g.scalar_like(guess.shift, x);
    let arg = g.sub(shift, x)?;
    let e = build_exp(g, arg, cfg)?;
    let scale = g.scalar(guess.scale);
    let y0 = g.mul(e, scale)?;
    let offset = g.scalar_like(guess.offset, y0);
    let mut y = g.add(y0, offset)?;
    for _ in 0..cfg.recip_iters {
        let xy = g.mul(x, y)?;
        let two = g.scalar_like(2.0, xy);
        let t = g.sub(two, xy)?;
        y = g.mul(y, t)?;
    }
    Ok(y)
}

/// Newton iteration `y <- y (3 - x y^2) / 2` for `1/sqrt(x)`, `x > 0`,
/// from a damped exponential guess.
pub fn build_rsqrt(g: &mut Graph, x: EdgeId, cfg: &ApproxConfig) -> Result<EdgeId> {
    let guess = cfg.rsqrt_guess;
    let half = g.scalar(0.5);
    let xh = g.mul(x, half)?;
    let neg_shift = g.scalar_like(-guess.shift, xh);
    let arg = g.sub(neg_shift, xh)?;
    let e = build_exp(g, arg, cfg)?;
    let scale = g.scalar(guess.scale);
    let y0 = g.mul(e, scale)?;
    let offset = g.scalar_like(guess.offset, y0);
    let y0 = g.add(y0, offset)?;
    let damping = g.scalar(guess.damping);
    let mut y = g.mul(y0, damping)?;
    for _ in 0..cfg.rsqrt_iters {
        let y2 = g.mul(y, y)?;
        let xy2 = g.mul(x, y2)?;
        let three = g.scalar_like(3.0, xy2);
        let t = g.sub(three, xy2)?;
        let yt = g.mul(y, t)?;
        let half = g.scalar(0.5);
        y = g.mul(yt, half)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::testutil::{grid, run_unary};

    // Float oracles of each iteration scheme, written independently of the
    // graph builders.
    fn exp_oracle(x: f64, r: u32) -> f64 {
        let mut y = 1.0 + x / 2f64.powi(r as i32);
        for _ in 0..r {
            y *= y;
        }
        y
    }

    fn recip_oracle(x: f64, iters: u32) -> f64 {
        let mut y = 3.0 * exp_oracle(0.5 - x, 8) + 0.003;
        for _ in 0..iters {
            y *= 2.0 - x * y;
        }
        y
    }

    fn rsqrt_oracle(x: f64, iters: u32) -> f64 {
        let mut y = (exp_oracle(-(x / 2.0 + 0.2), 8) * 2.2 + 0.2) * 1023.0 / 1024.0;
        for _ in 0..iters {
            y = y * (3.0 - x * y * y) / 2.0;
        }
        y
    }

    fn sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        grid(
            &(0..n)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn exp_examples() {
        let cfg = ApproxConfig::default();
        let (fixed, reference) =
            run_unary(&[0.0, 1.0, -1.0], -4.0, 4.0, |g, x| build_exp(g, x, &cfg));
        assert_eq!(fixed[0], 1.0);
        assert_eq!(reference[0], 1.0);
        // (1 + 1/256)^256 and (1 - 1/256)^256 to 15 digits.
        assert!((reference[1] - 2.712_991_624_253_434).abs() < 1e-12);
        assert!((reference[2] - 0.367_159_754_891_536).abs() < 1e-12);
    }

    #[test]
    fn exp_reference_matches_oracle_and_is_monotone() {
        let cfg = ApproxConfig::default();
        let xs = sweep(-8.0, 4.0, 200);
        let (fixed, reference) = run_unary(&xs, -8.0, 4.0, |g, x| build_exp(g, x, &cfg));
        for (x, r) in xs.iter().zip(&reference) {
            assert!((r - exp_oracle(*x, 8)).abs() <= 1e-12 * r.max(1.0));
        }
        assert!(fixed.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn reciprocal_examples() {
        let cfg = ApproxConfig::default();
        let tol = 2f64.powi(-11);
        let (fixed, reference) =
            run_unary(&[1.0, 2.0], 0.1, 10.0, |g, x| build_reciprocal(g, x, &cfg));
        assert!((fixed[0] - 1.0).abs() <= tol, "{}", fixed[0]);
        assert!((fixed[1] - 0.5).abs() <= tol, "{}", fixed[1]);
        assert!((reference[0] - recip_oracle(1.0, 20)).abs() < 1e-12);
        assert!((reference[1] - recip_oracle(2.0, 20)).abs() < 1e-12);
    }

    #[test]
    fn rsqrt_examples() {
        let cfg = ApproxConfig::default();
        let tol = 2f64.powi(-11);
        let (fixed, reference) = run_unary(&[1.0, 4.0], 0.1, 10.0, |g, x| build_rsqrt(g, x, &cfg));
        assert!((fixed[0] - 1.0).abs() <= tol, "{}", fixed[0]);
        assert!((fixed[1] - 0.5).abs() <= tol, "{}", fixed[1]);
        assert!((reference[0] - rsqrt_oracle(1.0, 12)).abs() < 1e-12);
        assert!((reference[1] - rsqrt_oracle(4.0, 12)).abs() < 1e-12);
    }

    #[test]
    fn newton_references_track_oracles() {
        let cfg = ApproxConfig::default();
        let xs = sweep(0.1, 10.0, 100);
        let (_, r) = run_unary(&xs, 0.1, 10.0, |g, x| build_reciprocal(g, x, &cfg));
        let (_, s) = run_unary(&xs, 0.1, 10.0, |g, x| build_rsqrt(g, x, &cfg));
        for (i, x) in xs.iter().enumerate() {
            assert!((r[i] - recip_oracle(*x, 20)).abs() < 1e-9);
            assert!((s[i] - rsqrt_oracle(*x, 12)).abs() < 1e-9);
        }
    }
}
