//! Fixed-point encoding and the arithmetic of a `2^F` two's-complement ring.
//!
//! A real `x` is carried as an integer magnitude `m` together with a
//! fractional-bit count `f`, so that `x = m / 2^f`. Field operations reduce
//! their exact integer result modulo `2^F` and interpret the representative
//! in `[-2^(F-1), 2^(F-1))`. Magnitudes are stored as `i128`, which covers
//! every field size up to 128 bits; products are formed with wrapping
//! `i128` arithmetic, which is exact modulo `2^128` and therefore exact
//! modulo any `2^F` with `F <= 128`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision and size parameters shared by the whole pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedConfig {
    /// Fractional bits `n`; the scaling factor is `2^n`.
    pub frac_bits: u32,
    /// Assumed width `k` (sign bit included) of any freshly encoded or
    /// freshly truncated value.
    pub base_width: u32,
    /// Field size `F` in bits.
    pub field_bits: u32,
}

impl FixedConfig {
    pub fn new(frac_bits: u32, base_width: u32, field_bits: u32) -> Result<Self> {
        let cfg = FixedConfig {
            frac_bits,
            base_width,
            field_bits,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let FixedConfig {
            frac_bits: n,
            base_width: k,
            field_bits: f,
        } = *self;
        if !(1 <= n && n < k && k <= f && f <= 128) {
            return Err(Error::Config(format!(
                "need 1 <= frac_bits < base_width <= field_bits <= 128, got n={n}, k={k}, F={f}"
            )));
        }
        Ok(())
    }

    /// Largest real magnitude (exclusive) that a base-width value can hold.
    pub fn max_abs(&self) -> f64 {
        2f64.powi(self.base_width as i32 - 1 - self.frac_bits as i32)
    }

    pub fn with_field_bits(self, field_bits: u32) -> Self {
        FixedConfig { field_bits, ..self }
    }
}

impl Default for FixedConfig {
    fn default() -> Self {
        FixedConfig {
            frac_bits: 13,
            base_width: 20,
            field_bits: 64,
        }
    }
}

/// A single fixed-point value: `magnitude / 2^scale`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldValue {
    pub magnitude: i128,
    pub scale: u32,
}

impl FieldValue {
    pub const fn new(magnitude: i128, scale: u32) -> Self {
        FieldValue { magnitude, scale }
    }

    pub fn decode(self) -> f64 {
        decode(self)
    }
}

/// Reduce `v` modulo `2^bits` into the signed range `[-2^(bits-1), 2^(bits-1))`.
#[inline]
pub fn wrap(v: i128, bits: u32) -> i128 {
    debug_assert!((1..=128).contains(&bits));
    if bits >= 128 {
        v
    } else {
        let s = 128 - bits;
        (v << s) >> s
    }
}

/// Whether `v` is representable in `bits`-bit two's complement.
#[inline]
pub fn fits(v: i128, bits: u32) -> bool {
    signed_width(v) <= bits
}

/// Minimal two's-complement width of `v`, sign bit included (`0` needs 1 bit).
#[inline]
pub fn signed_width(v: i128) -> u32 {
    let body = if v >= 0 { v } else { !v };
    128 - body.leading_zeros() + 1
}

/// `round(x * 2^scale)` with ties away from zero, without any range check.
///
/// Returns `None` for non-finite input or a result outside `i128`.
pub fn scale_to_int(x: f64, scale: u32) -> Option<i128> {
    let y = (x * 2f64.powi(scale as i32)).round();
    // 2^127 is exactly representable; anything at or past it cannot be stored.
    if !y.is_finite() || y.abs() >= 2f64.powi(127) {
        return None;
    }
    Some(y as i128)
}

/// Encode a real at `cfg.frac_bits` fractional bits, enforcing the
/// base-width range.
pub fn encode(x: f64, cfg: &FixedConfig) -> Result<FieldValue> {
    let range_err = || Error::Range {
        value: x,
        frac_bits: cfg.frac_bits,
        base_width: cfg.base_width,
    };
    if !x.is_finite() || x.abs() >= cfg.max_abs() {
        return Err(range_err());
    }
    let m = scale_to_int(x, cfg.frac_bits).ok_or_else(range_err)?;
    // Rounding can push a value sitting just under the bound onto it.
    if !fits(m, cfg.base_width) {
        return Err(range_err());
    }
    Ok(FieldValue::new(m, cfg.frac_bits))
}

pub fn decode(v: FieldValue) -> f64 {
    v.magnitude as f64 * 2f64.powi(-(v.scale as i32))
}

pub fn field_add(a: FieldValue, b: FieldValue, field_bits: u32) -> Result<FieldValue> {
    if a.scale != b.scale {
        return Err(Error::ScaleMismatch {
            left: a.scale,
            right: b.scale,
        });
    }
    Ok(FieldValue::new(
        wrap(a.magnitude.wrapping_add(b.magnitude), field_bits),
        a.scale,
    ))
}

pub fn field_sub(a: FieldValue, b: FieldValue, field_bits: u32) -> Result<FieldValue> {
    if a.scale != b.scale {
        return Err(Error::ScaleMismatch {
            left: a.scale,
            right: b.scale,
        });
    }
    Ok(FieldValue::new(
        wrap(a.magnitude.wrapping_sub(b.magnitude), field_bits),
        a.scale,
    ))
}

pub fn field_mul(a: FieldValue, b: FieldValue, field_bits: u32) -> FieldValue {
    FieldValue::new(
        wrap(a.magnitude.wrapping_mul(b.magnitude), field_bits),
        a.scale + b.scale,
    )
}

/// Drop `shift` fractional bits with an arithmetic (flooring) right shift.
pub fn truncate(v: FieldValue, shift: u32) -> Result<FieldValue> {
    if shift > v.scale {
        return Err(Error::BadShift {
            shift,
            scale: v.scale,
        });
    }
    Ok(FieldValue::new(
        shr_floor(v.magnitude, shift),
        v.scale - shift,
    ))
}

/// Multiply by the public constant `2^shift`, adding `shift` fractional bits.
pub fn rescale_up(v: FieldValue, shift: u32, field_bits: u32) -> FieldValue {
    FieldValue::new(shl_wrap(v.magnitude, shift, field_bits), v.scale + shift)
}

#[inline]
pub(crate) fn shr_floor(m: i128, shift: u32) -> i128 {
    if shift >= 127 {
        if m < 0 {
            -1
        } else {
            0
        }
    } else {
        m >> shift
    }
}

#[inline]
pub(crate) fn shl_wrap(m: i128, shift: u32, field_bits: u32) -> i128 {
    if shift >= 128 {
        0
    } else {
        wrap(m.wrapping_shl(shift), field_bits)
    }
}

/// A dense tensor of magnitudes sharing one scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i128>,
    pub scale: u32,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i128>, scale: u32) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {count} elements, got {}",
                data.len()
            )));
        }
        Ok(FixedTensor { shape, data, scale })
    }

    pub fn encode(shape: Vec<usize>, values: &[f64], cfg: &FixedConfig) -> Result<Self> {
        let data = values
            .iter()
            .map(|&x| encode(x, cfg).map(|v| v.magnitude))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, data, cfg.frac_bits)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> FieldValue {
        FieldValue::new(self.data[i], self.scale)
    }

    pub fn decode(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|&m| decode(FieldValue::new(m, self.scale)))
            .collect()
    }
}
