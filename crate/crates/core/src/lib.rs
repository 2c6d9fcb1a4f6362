//! Static truncation placement and exact fixed-point emulation for
//! private transformer inference.
//!
//! Graphs of additions, multiplications and comparisons are built by the
//! [`kernels`] module, rewritten by [`truncpass`] so that no value can
//! outgrow the field, executed bit-exactly by [`evaluator`], and priced by
//! [`costmodel`].

pub mod commands;
pub mod costmodel;
pub mod error;
pub mod evaluator;
mod exact;
pub mod fixedpoint;
pub mod ir;
pub mod kernels;
pub mod shape;
pub mod truncpass;

pub use error::{Error, Result};
pub use fixedpoint::{FieldValue, FixedConfig, FixedTensor};
pub use ir::{Category, Graph};
pub use truncpass::{
    count_truncated_scalars, naive_baseline, place_truncations, Strategy, TruncPlan,
};
