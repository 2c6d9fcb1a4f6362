//! Pre-norm decoder blocks and whole-model graphs.
//!
//! Weights are graph inputs named `L<i>.w.*`, so a model graph carries
//! shapes only and any set of weights can be fed at evaluation time.
//! Attention is unmasked and per head; there is no embedding or LM head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::FixedConfig;
use crate::ir::{EdgeId, Graph};

use super::{
    build_gelu, build_layernorm, build_matmul, build_rmsnorm, build_silu, build_softmax,
    ApproxConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Silu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Layernorm,
    Rmsnorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub seq_len: usize,
}

impl BlockDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 || self.seq_len == 0 {
            return Err(Error::Shape("block dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Shape(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Architecture, shapes and approximation settings of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Where the shapes come from.
    #[serde(default)]
    pub source: String,
    pub activation: Activation,
    pub norm: Norm,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub n_layers: usize,
    /// Prompt length processed by the prefill step.
    pub seq_len: usize,
    /// Generated tokens; the first comes out of prefill, each further one
    /// is a single-token decode step.
    #[serde(default = "one")]
    pub gen_len: usize,
    /// Activations are drawn from `[-input_range, input_range]`.
    #[serde(default = "four")]
    pub input_range: f64,
    #[serde(default)]
    pub approx: ApproxConfig,
}

fn one() -> usize {
    1
}

fn four() -> f64 {
    4.0
}

impl ModelConfig {
    pub fn dims(&self) -> BlockDims {
        BlockDims {
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            seq_len: self.seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if self.n_layers == 0 || self.gen_len == 0 {
            return Err(Error::Config(
                "n_layers and gen_len must be positive".into(),
            ));
        }
        if !(self.input_range > 0.0) {
            return Err(Error::Config("input_range must be positive".into()));
        }
        self.approx.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ModelConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const PRESETS: [(&str, &str); 3] = [
    ("llama-7b", include_str!("../../../../models/llama-7b.json")),
    ("gemma-2b", include_str!("../../../../models/gemma-2b.json")),
    ("toy", include_str!("../../../../models/toy.json")),
];

/// Names of the shipped model configs.
pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// A shipped model config by name (`llama-7b`, `gemma-2b`, `toy`).
pub fn preset(name: &str) -> Option<ModelConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| ModelConfig::from_json(json).expect("shipped presets are valid"))
}

struct HeadWeights {
    q: EdgeId,
    k: EdgeId,
    v: EdgeId,
    o: EdgeId,
}

struct BlockWeights {
    heads: Vec<HeadWeights>,
    gate: EdgeId,
    up: EdgeId,
    down: EdgeId,
}

fn weight(g: &mut Graph, name: String, rows: usize, cols: usize) -> EdgeId {
    let r = (3.0 / rows as f64).sqrt();
    g.input(&name, vec![rows, cols], -r, r)
}

impl BlockWeights {
    fn declare(g: &mut Graph, prefix: &str, dims: &BlockDims) -> Self {
        let (d, dh) = (dims.d_model, dims.head_dim());
        let heads = (0..dims.n_heads)
            .map(|h| HeadWeights {
                q: weight(g, format!("{prefix}w.q.h{h}"), d, dh),
                k: weight(g, format!("{prefix}w.k.h{h}"), d, dh),
                v: weight(g, format!("{prefix}w.v.h{h}"), d, dh),
                o: weight(g, format!("{prefix}w.o.h{h}"), dh, d),
            })
            .collect();
        BlockWeights {
            heads,
            gate: weight(g, format!("{prefix}w.gate"), d, dims.d_ffn),
            up: weight(g, format!("{prefix}w.up"), d, dims.d_ffn),
            down: weight(g, format!("{prefix}w.down"), dims.d_ffn, d),
        }
    }
}

/// Keys and values for a single-token step: the cache holds `ctx` rows,
/// the current token included, and the new projections are emitted as
/// outputs so that their cost is counted.
struct DecodeCache<'a> {
    prefix: &'a str,
    ctx: usize,
    range: f64,
}

#[derive(Clone, Copy)]
struct Variant<'a> {
    activation: Activation,
    norm: Norm,
    approx: &'a ApproxConfig,
}

fn norm(g: &mut Graph, x: EdgeId, v: Variant) -> Result<EdgeId> {
    match v.norm {
        Norm::Layernorm => build_layernorm(g, x, v.approx),
        Norm::Rmsnorm => build_rmsnorm(g, x, v.approx),
    }
}

fn sum_tree(g: &mut Graph, mut terms: Vec<EdgeId>) -> Result<EdgeId> {
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        for pair in terms.chunks(2) {
            next.push(match pair {
                [a, b] => g.add(*a, *b)?,
                [a] => *a,
                _ => unreachable!(),
            });
        }
        terms = next;
    }
    Ok(terms[0])
}

fn block(
    g: &mut Graph,
    x: EdgeId,
    w: &BlockWeights,
    dims: &BlockDims,
    v: Variant,
    cache: Option<&DecodeCache>,
) -> Result<EdgeId> {
    let dh = dims.head_dim();
    let b = norm(g, x, v)?;
    let scale = g.scalar(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(w.heads.len());
    for (h, hw) in w.heads.iter().enumerate() {
        let q = build_matmul(g, b, hw.q)?;
        let (k, val) = match cache {
            None => (build_matmul(g, b, hw.k)?, build_matmul(g, b, hw.v)?),
            Some(c) => {
                let k_new = build_matmul(g, b, hw.k)?;
                let v_new = build_matmul(g, b, hw.v)?;
                g.output(&format!("{}k_new.h{h}", c.prefix), k_new)?;
                g.output(&format!("{}v_new.h{h}", c.prefix), v_new)?;
                let shape = vec![c.ctx, dh];
                (
                    g.input(
                        &format!("{}k_cache.h{h}", c.prefix),
                        shape.clone(),
                        -c.range,
                        c.range,
                    ),
                    g.input(
                        &format!("{}v_cache.h{h}", c.prefix),
                        shape,
                        -c.range,
                        c.range,
                    ),
                )
            }
        };
        let scores = g.with_category(crate::ir::Category::MatMulTrunc, |g| g.matmul(q, k, true))?;
        let scores = g.mul(scores, scale)?;
        let p = build_softmax(g, scores, v.approx)?;
        let o = build_matmul(g, p, val)?;
        heads.push(build_matmul(g, o, hw.o)?);
    }
    let attn = sum_tree(g, heads)?;
    let x1 = g.add(x, attn)?;
    let b2 = norm(g, x1, v)?;
    let gate = build_matmul(g, b2, w.gate)?;
    let gate = match v.activation {
        Activation::Gelu => build_gelu(g, gate, v.approx)?,
        Activation::Silu => build_silu(g, gate, v.approx)?,
    };
    let up = build_matmul(g, b2, w.up)?;
    let hidden = g.mul(gate, up)?;
    let down = build_matmul(g, hidden, w.down)?;
    g.add(x1, down)
}

/// One block over a `[seq_len, d_model]` activation, with fresh weight
/// inputs named `<prefix>w.*`.
pub fn build_transformer_block(
    g: &mut Graph,
    x: EdgeId,
    dims: &BlockDims,
    activation: Activation,
    norm: Norm,
    approx: &ApproxConfig,
    prefix: &str,
) -> Result<EdgeId> {
    dims.validate()?;
    let shape = &g.ann(x).shape;
    if shape[..] != [dims.seq_len, dims.d_model] {
        return Err(Error::Shape(format!(
            "block input must be [{}, {}], got {shape:?}",
            dims.seq_len, dims.d_model
        )));
    }
    let w = BlockWeights::declare(g, prefix, dims);
    let v = Variant {
        activation,
        norm,
        approx,
    };
    block(g, x, &w, dims, v, None)
}

/// The full model: a prefill pass over `seq_len` tokens (output `y`), then
/// `gen_len - 1` single-token decode steps (outputs `step<t>.y`) sharing
/// the same weights.
pub fn build_model(model: &ModelConfig, fixed: FixedConfig) -> Result<Graph> {
    model.validate()?;
    fixed.validate()?;
    let dims = model.dims();
    let v = Variant {
        activation: model.activation,
        norm: model.norm,
        approx: &model.approx,
    };
    let mut g = Graph::new(fixed);
    let weights: Vec<BlockWeights> = (0..model.n_layers)
        .map(|l| BlockWeights::declare(&mut g, &format!("L{l}."), &dims))
        .collect();
    let r = model.input_range;
    let mut x = g.input("x", vec![dims.seq_len, dims.d_model], -r, r);
    for w in &weights {
        x = block(&mut g, x, w, &dims, v, None)?;
    }
    g.output("y", x)?;
    for t in 1..model.gen_len {
        let mut x = g.input(&format!("step{t}.x"), vec![1, dims.d_model], -r, r);
        let step = BlockDims { seq_len: 1, ..dims };
        for (l, w) in weights.iter().enumerate() {
            let cache = DecodeCache {
                prefix: &format!("step{t}.L{l}."),
                ctx: dims.seq_len + t,
                range: r,
            };
            x = block(&mut g, x, w, &step, v, Some(&cache))?;
        }
        g.output(&format!("step{t}.y"), x)?;
    }
    Ok(g)
}
