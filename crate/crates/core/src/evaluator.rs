//! Exact execution of lowered graphs.
//!
//! The fixed-point track keeps two values per element: the residue the
//! field would hold, and the exact unbounded integer the same operations
//! produce. Any disagreement is an overflow; the element's exact value is
//! then reset to the residue, so each event is reported at the node where
//! it happens and diverging values do not grow without bound. The reference
//! track runs the same graph in `f64` with truncations and rescales as
//! identities, so `fixed - reference` isolates quantization error.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Exact;
use crate::fixedpoint::{encode, scale_to_int, shl_wrap, shr_floor, wrap, FixedTensor};
use crate::ir::{topo_order, Category, ConstValue, EdgeId, Graph, NodeId, OpKind};
use crate::shape::{broadcast_index, numel};

/// Real-valued inputs keyed by input name, flattened row-major.
pub type Inputs = BTreeMap<String, Vec<f64>>;

/// Draw every input uniformly from its declared range.
pub fn random_inputs(g: &Graph, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.input_nodes()
        .map(|n| {
            let OpKind::Input {
                name,
                shape,
                lo,
                hi,
            } = &n.op
            else {
                unreachable!()
            };
            let values = (0..numel(shape))
                .map(|_| {
                    if hi > lo {
                        rng.gen_range(*lo..*hi)
                    } else {
                        *lo
                    }
                })
                .collect();
            (name.clone(), values)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverflowEvent {
    pub node: NodeId,
    pub op: String,
    /// Elements of the node's output whose field value differs from the
    /// exact value.
    pub elements: u64,
    /// First offending exact value, in decimal.
    pub exact: String,
    pub field: i128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub edge: EdgeId,
    pub bits: u32,
    pub elements: u64,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedOutput {
    pub name: String,
    pub tensor: FixedTensor,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRun {
    pub outputs: Vec<NamedOutput>,
    pub overflow_events: Vec<OverflowEvent>,
    pub overflow_count: u64,
    pub range_violations: Vec<RangeViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealOutput {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub per_element: Vec<f64>,
    pub truth_max_abs: Option<f64>,
    pub truth_mean_abs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputError {
    pub name: String,
    #[serde(flatten)]
    pub metrics: ErrorMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryError {
    pub category: Category,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub outputs: Vec<NamedOutput>,
    pub overflow_events: Vec<OverflowEvent>,
    pub overflow_count: u64,
    pub range_violations: Vec<RangeViolation>,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub output_errors: Vec<OutputError>,
    /// Largest deviation from the reference on any edge of each category.
    pub category_errors: Vec<CategoryError>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_fixed(g: &Graph, inputs: &Inputs) -> Result<FixedRun> {
    let t = Engine::new(g, true, false).run(inputs)?;
    Ok(t.fixed_run())
}

pub fn run_reference(g: &Graph, inputs: &Inputs) -> Result<Vec<RealOutput>> {
    let t = Engine::new(g, false, true).run(inputs)?;
    Ok(t.reference)
}

/// Run both tracks in lockstep and compare them.
pub fn evaluate(g: &Graph, inputs: &Inputs) -> Result<EvalReport> {
    let t = Engine::new(g, true, true).run(inputs)?;
    let mut output_errors = Vec::new();
    let (mut max, mut sum, mut count) = (0f64, 0f64, 0usize);
    for (fixed, reference) in t.fixed.iter().zip(&t.reference) {
        let m = error_report(&fixed.values, &reference.values, None)?;
        max = nan_max(max, m.max_abs);
        sum += m.per_element.iter().sum::<f64>();
        count += m.per_element.len();
        output_errors.push(OutputError {
            name: fixed.name.clone(),
            metrics: m,
        });
    }
    let category_errors = Category::ALL
        .iter()
        .filter_map(|c| {
            t.category_error.get(c).map(|&max_abs| CategoryError {
                category: *c,
                max_abs,
            })
        })
        .collect();
    let run = t.fixed_run();
    Ok(EvalReport {
        outputs: run.outputs,
        overflow_events: run.overflow_events,
        overflow_count: run.overflow_count,
        range_violations: run.range_violations,
        max_abs_error: max,
        mean_abs_error: if count > 0 { sum / count as f64 } else { 0.0 },
        output_errors,
        category_errors,
    })
}

/// Like `f64::max`, but a NaN (a diverged reference) is kept rather than
/// skipped.
fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Elementwise error of `approx` against `reference`, and optionally
/// against the true function values.
pub fn error_report(
    approx: &[f64],
    reference: &[f64],
    truth: Option<&[f64]>,
) -> Result<ErrorMetrics> {
    if approx.len() != reference.len() || truth.is_some_and(|t| t.len() != approx.len()) {
        return Err(Error::Shape(format!(
            "error report over {} vs {} elements",
            approx.len(),
            reference.len()
        )));
    }
    let stats = |v: &[f64]| {
        let max = v.iter().fold(0f64, |m, &e| nan_max(m, e));
        let mean = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        (max, mean)
    };
    let per_element: Vec<f64> = approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs())
        .collect();
    let (max_abs, mean_abs) = stats(&per_element);
    let (truth_max_abs, truth_mean_abs) = match truth {
        Some(t) => {
            let e: Vec<f64> = approx.iter().zip(t).map(|(a, t)| (a - t).abs()).collect();
            let (m, a) = stats(&e);
            (Some(m), Some(a))
        }
        None => (None, None),
    };
    Ok(ErrorMetrics {
        max_abs,
        mean_abs,
        per_element,
        truth_max_abs,
        truth_mean_abs,
    })
}

#[derive(Clone)]
struct FixedVal {
    shape: Vec<usize>,
    scale: u32,
    field: Vec<i128>,
    exact: Vec<Exact>,
}

impl FixedVal {
    fn decode(&self) -> Vec<f64> {
        let f = 2f64.powi(-(self.scale as i32));
        self.field.iter().map(|&m| m as f64 * f).collect()
    }
}

#[derive(Clone)]
struct RealVal {
    shape: Vec<usize>,
    values: Vec<f64>,
}

struct Trace {
    fixed: Vec<NamedOutput>,
    reference: Vec<RealOutput>,
    overflow_events: Vec<OverflowEvent>,
    range_violations: Vec<RangeViolation>,
    category_error: BTreeMap<Category, f64>,
}

impl Trace {
    fn fixed_run(self) -> FixedRun {
        let overflow_count = self.overflow_events.iter().map(|e| e.elements).sum();
        FixedRun {
            outputs: self.fixed,
            overflow_events: self.overflow_events,
            overflow_count,
            range_violations: self.range_violations,
        }
    }
}

struct Engine<'a> {
    g: &'a Graph,
    do_fixed: bool,
    do_ref: bool,
    field_bits: u32,
    fixed: Vec<Option<FixedVal>>,
    real: Vec<Option<RealVal>>,
}

/// Matmuls with at least this many multiply-adds run rows in parallel.
const PAR_MATMUL: usize = 1 << 14;

impl<'a> Engine<'a> {
    fn new(g: &'a Graph, do_fixed: bool, do_ref: bool) -> Self {
        let n = g.edges().len();
        Engine {
            g,
            do_fixed,
            do_ref,
            field_bits: g.config.field_bits,
            fixed: vec![None; n],
            real: vec![None; n],
        }
    }

    fn check_inputs(&self, inputs: &Inputs) -> Result<()> {
        let mut names = Vec::new();
        for n in self.g.input_nodes() {
            let OpKind::Input { name, shape, .. } = &n.op else {
                unreachable!()
            };
            let v = inputs
                .get(name)
                .ok_or_else(|| Error::Input(format!("missing input `{name}`")))?;
            if v.len() != numel(shape) {
                return Err(Error::Input(format!(
                    "input `{name}` has {} values, shape {shape:?} needs {}",
                    v.len(),
                    numel(shape)
                )));
            }
            names.push(name.as_str());
        }
        if let Some(extra) = inputs.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(Error::Input(format!("unknown input `{extra}`")));
        }
        Ok(())
    }

    fn run(mut self, inputs: &Inputs) -> Result<Trace> {
        self.check_inputs(inputs)?;
        let order = topo_order(self.g)?;
        let mut last_use = vec![usize::MAX; self.g.edges().len()];
        for (pos, &id) in order.iter().enumerate() {
            for &e in &self.g.node(id).inputs {
                last_use[e] = pos;
            }
        }
        let mut trace = Trace {
            fixed: Vec::new(),
            reference: Vec::new(),
            overflow_events: Vec::new(),
            range_violations: Vec::new(),
            category_error: BTreeMap::new(),
        };
        for (pos, &id) in order.iter().enumerate() {
            let node = self.g.node(id);
            let out = node.output;
            if self.do_fixed {
                let v = self.step_fixed(id, inputs, &mut trace)?;
                self.fixed[out] = Some(v);
            }
            if self.do_ref {
                let v = self.step_real(id, inputs)?;
                self.real[out] = Some(v);
            }
            if self.do_fixed && self.do_ref && !matches!(node.op, OpKind::Compare) {
                let f = self.fixed[out].as_ref().unwrap().decode();
                let r = &self.real[out].as_ref().unwrap().values;
                let err = f
                    .iter()
                    .zip(r)
                    .fold(0f64, |m, (a, b)| nan_max(m, (a - b).abs()));
                let slot = trace
                    .category_error
                    .entry(self.g.ann(out).category)
                    .or_insert(0.0);
                *slot = slot.max(err);
            }
            if let OpKind::Output { name } = &node.op {
                if let Some(v) = &self.fixed[out] {
                    trace.fixed.push(NamedOutput {
                        name: name.clone(),
                        tensor: FixedTensor::new(v.shape.clone(), v.field.clone(), v.scale)?,
                        values: v.decode(),
                    });
                }
                if let Some(v) = &self.real[out] {
                    trace.reference.push(RealOutput {
                        name: name.clone(),
                        shape: v.shape.clone(),
                        values: v.values.clone(),
                    });
                }
            }
            for &e in &node.inputs {
                if last_use[e] == pos {
                    self.fixed[e] = None;
                    self.real[e] = None;
                }
            }
        }
        Ok(trace)
    }

    fn fx(&self, e: EdgeId) -> &FixedVal {
        self.fixed[e].as_ref().expect("edge computed before use")
    }

    fn rl(&self, e: EdgeId) -> &RealVal {
        self.real[e].as_ref().expect("edge computed before use")
    }

    fn step_fixed(&self, id: NodeId, inputs: &Inputs, trace: &mut Trace) -> Result<FixedVal> {
        let node = self.g.node(id);
        let f = self.field_bits;
        let cfg = self.g.config;
        let mut val = match &node.op {
            OpKind::Input { name, shape, .. } => {
                let field = inputs[name]
                    .iter()
                    .map(|&x| encode(x, &cfg).map(|v| v.magnitude))
                    .collect::<Result<Vec<_>>>()?;
                let exact = field.iter().map(|&v| Exact::Small(v)).collect();
                FixedVal {
                    shape: shape.clone(),
                    scale: cfg.frac_bits,
                    field: field.iter().map(|&v| wrap(v, f)).collect(),
                    exact,
                }
            }
            OpKind::Constant { value, .. } => {
                let scale = self.g.ann(node.output).scale;
                let exact = value
                    .materialize()
                    .iter()
                    .map(|&x| {
                        scale_to_int(x, scale).map(Exact::Small).ok_or_else(|| {
                            Error::Config(format!("constant {x} does not fit at scale {scale}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FixedVal {
                    shape: value.shape(),
                    scale,
                    field: exact.iter().map(|e| e.reduce(f)).collect(),
                    exact,
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Compare => {
                let (a, b) = (self.fx(node.inputs[0]), self.fx(node.inputs[1]));
                let shape = self.g.ann(node.output).shape.clone();
                let ia = broadcast_index(&a.shape, &shape);
                let ib = broadcast_index(&b.shape, &shape);
                let pairs = ia.iter().zip(&ib);
                let (field, exact, scale): (Vec<i128>, Vec<Exact>, u32) = match node.op {
                    OpKind::Add => (
                        pairs
                            .clone()
                            .map(|(&i, &j)| wrap(a.field[i].wrapping_add(b.field[j]), f))
                            .collect(),
                        pairs.map(|(&i, &j)| a.exact[i].add(&b.exact[j])).collect(),
                        a.scale,
                    ),
                    OpKind::Sub => (
                        pairs
                            .clone()
                            .map(|(&i, &j)| wrap(a.field[i].wrapping_sub(b.field[j]), f))
                            .collect(),
                        pairs.map(|(&i, &j)| a.exact[i].sub(&b.exact[j])).collect(),
                        a.scale,
                    ),
                    OpKind::Mul => (
                        pairs
                            .clone()
                            .map(|(&i, &j)| wrap(a.field[i].wrapping_mul(b.field[j]), f))
                            .collect(),
                        pairs.map(|(&i, &j)| a.exact[i].mul(&b.exact[j])).collect(),
                        a.scale + b.scale,
                    ),
                    _ => (
                        pairs
                            .clone()
                            .map(|(&i, &j)| {
                                (wrap(a.field[i].wrapping_sub(b.field[j]), f) > 0) as i128
                            })
                            .collect(),
                        pairs
                            .map(|(&i, &j)| Exact::Small((a.exact[i] > b.exact[j]) as i128))
                            .collect(),
                        0,
                    ),
                };
                FixedVal {
                    shape,
                    scale,
                    field,
                    exact,
                }
            }
            OpKind::MatMul { transpose_rhs, .. } => {
                let (a, b) = (self.fx(node.inputs[0]), self.fx(node.inputs[1]));
                let (p, m) = (a.shape[0], a.shape[1]);
                let q = if *transpose_rhs {
                    b.shape[0]
                } else {
                    b.shape[1]
                };
                let bidx = |t: usize, j: usize| if *transpose_rhs { j * m + t } else { t * q + j };
                let row = |i: usize| -> (Vec<i128>, Vec<Exact>) {
                    let mut fr = Vec::with_capacity(q);
                    let mut er = Vec::with_capacity(q);
                    for j in 0..q {
                        let mut acc_f = 0i128;
                        let mut acc_small = Some(0i128);
                        for t in 0..m {
                            let (x, y) = (a.field[i * m + t], b.field[bidx(t, j)]);
                            acc_f = acc_f.wrapping_add(x.wrapping_mul(y));
                        }
                        for t in 0..m {
                            let (Exact::Small(x), Exact::Small(y)) =
                                (&a.exact[i * m + t], &b.exact[bidx(t, j)])
                            else {
                                acc_small = None;
                                break;
                            };
                            acc_small = acc_small
                                .and_then(|acc| x.checked_mul(*y).and_then(|v| acc.checked_add(v)));
                            if acc_small.is_none() {
                                break;
                            }
                        }
                        let exact = match acc_small {
                            Some(v) => Exact::Small(v),
                            None => (0..m).fold(Exact::Small(0), |acc, t| {
                                acc.add(&a.exact[i * m + t].mul(&b.exact[bidx(t, j)]))
                            }),
                        };
                        fr.push(wrap(acc_f, f));
                        er.push(exact);
                    }
                    (fr, er)
                };
                let rows: Vec<(Vec<i128>, Vec<Exact>)> = if p * q * m >= PAR_MATMUL {
                    (0..p).into_par_iter().map(row).collect()
                } else {
                    (0..p).map(row).collect()
                };
                let mut field = Vec::with_capacity(p * q);
                let mut exact = Vec::with_capacity(p * q);
                for (fr, er) in rows {
                    field.extend(fr);
                    exact.extend(er);
                }
                FixedVal {
                    shape: vec![p, q],
                    scale: a.scale + b.scale,
                    field,
                    exact,
                }
            }
            OpKind::Truncate { shift } => {
                let a = self.fx(node.inputs[0]);
                let v = FixedVal {
                    shape: a.shape.clone(),
                    scale: a.scale.checked_sub(*shift).ok_or(Error::BadShift {
                        shift: *shift,
                        scale: a.scale,
                    })?,
                    field: a.field.iter().map(|&m| shr_floor(m, *shift)).collect(),
                    exact: a.exact.iter().map(|e| e.shr(*shift)).collect(),
                };
                let bits = self.g.ann(node.output).bits;
                let bad: Vec<&Exact> = v.exact.iter().filter(|e| !e.fits(bits)).collect();
                if let Some(first) = bad.first() {
                    trace.range_violations.push(RangeViolation {
                        edge: node.output,
                        bits,
                        elements: bad.len() as u64,
                        value: first.to_string(),
                    });
                }
                v
            }
            OpKind::RescaleUp { shift } => {
                let a = self.fx(node.inputs[0]);
                FixedVal {
                    shape: a.shape.clone(),
                    scale: a.scale + shift,
                    field: a.field.iter().map(|&m| shl_wrap(m, *shift, f)).collect(),
                    exact: a.exact.iter().map(|e| e.shl(*shift)).collect(),
                }
            }
            OpKind::Output { .. } => self.fx(node.inputs[0]).clone(),
        };
        if !matches!(node.op, OpKind::Output { .. }) {
            let mismatched: Vec<usize> = (0..val.field.len())
                .filter(|&i| val.exact[i] != Exact::Small(val.field[i]))
                .collect();
            if let Some(&i) = mismatched.first() {
                trace.overflow_events.push(OverflowEvent {
                    node: id,
                    op: node.op.name().to_string(),
                    elements: mismatched.len() as u64,
                    exact: val.exact[i].to_string(),
                    field: val.field[i],
                });
                for i in mismatched {
                    val.exact[i] = Exact::Small(val.field[i]);
                }
            }
        }
        Ok(val)
    }

    fn step_real(&self, id: NodeId, inputs: &Inputs) -> Result<RealVal> {
        let node = self.g.node(id);
        let val = match &node.op {
            OpKind::Input { name, shape, .. } => RealVal {
                shape: shape.clone(),
                values: inputs[name].clone(),
            },
            OpKind::Constant { value, .. } => RealVal {
                shape: value.shape(),
                values: match value {
                    ConstValue::Scalar { value } => vec![*value],
                    v => v.materialize(),
                },
            },
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Compare => {
                let (a, b) = (self.rl(node.inputs[0]), self.rl(node.inputs[1]));
                let shape = self.g.ann(node.output).shape.clone();
                let ia = broadcast_index(&a.shape, &shape);
                let ib = broadcast_index(&b.shape, &shape);
                let op: fn(f64, f64) -> f64 = match node.op {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    OpKind::Mul => |x, y| x * y,
                    _ => |x, y| if x > y { 1.0 } else { 0.0 },
                };
                RealVal {
                    values: ia
                        .iter()
                        .zip(&ib)
                        .map(|(&i, &j)| op(a.values[i], b.values[j]))
                        .collect(),
                    shape,
                }
            }
            OpKind::MatMul { transpose_rhs, .. } => {
                let (a, b) = (self.rl(node.inputs[0]), self.rl(node.inputs[1]));
                let (p, m) = (a.shape[0], a.shape[1]);
                let q = if *transpose_rhs {
                    b.shape[0]
                } else {
                    b.shape[1]
                };
                let mut values = vec![0.0; p * q];
                for i in 0..p {
                    for j in 0..q {
                        values[i * q + j] = (0..m)
                            .map(|t| {
                                let bv = if *transpose_rhs {
                                    b.values[j * m + t]
                                } else {
                                    b.values[t * q + j]
                                };
                                a.values[i * m + t] * bv
                            })
                            .sum();
                    }
                }
                RealVal {
                    shape: vec![p, q],
                    values,
                }
            }
            OpKind::Truncate { .. } | OpKind::RescaleUp { .. } | OpKind::Output { .. } => {
                self.rl(node.inputs[0]).clone()
            }
        };
        Ok(val)
    }
}
