//! Lowered computation graphs.
//!
//! A [`Graph`] is a DAG whose nodes are in-field operations (add, subtract,
//! multiply, matrix multiply), comparisons, and scale adjustments. Every
//! node produces exactly one tensor-valued edge, and every edge carries an
//! [`EdgeAnnotation`]: a worst-case two's-complement width, a fractional
//! scale, a shape, and a cost category.
//!
//! Annotations written by the builder describe the graph *without* any
//! truncation, so scales grow through every multiplication. They saturate
//! at `u32::MAX` on long iterative chains; the truncation pass recomputes
//! every annotation from scratch.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{scale_to_int, signed_width, FixedConfig};
use crate::shape;

pub type NodeId = usize;
pub type EdgeId = usize;

/// Cost-breakdown bucket for truncations.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Category {
    Softmax,
    GeluSilu,
    Norm,
    MatMulTrunc,
    #[default]
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Softmax,
        Category::GeluSilu,
        Category::Norm,
        Category::MatMulTrunc,
        Category::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Softmax => "Softmax",
            Category::GeluSilu => "GELU/SiLU",
            Category::Norm => "Norm",
            Category::MatMulTrunc => "MatMul",
            Category::Other => "Other",
        }
    }
}

/// Values of a public constant. Structured variants avoid materializing the
/// 0/1 matrices used for row reductions and column selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstValue {
    /// A single value broadcast against its partner.
    Scalar {
        value: f64,
    },
    /// All-ones `[rows, cols]` matrix.
    Ones {
        rows: usize,
        cols: usize,
    },
    /// `S[i][j] = 1` iff `i == j + offset`; right-multiplying by it selects
    /// `cols` consecutive columns starting at `offset`.
    Selector {
        rows: usize,
        cols: usize,
        offset: usize,
    },
    Dense {
        shape: Vec<usize>,
        values: Vec<f64>,
    },
}

impl ConstValue {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ConstValue::Scalar { .. } => vec![1],
            ConstValue::Ones { rows, cols } | ConstValue::Selector { rows, cols, .. } => {
                vec![*rows, *cols]
            }
            ConstValue::Dense { shape, .. } => shape.clone(),
        }
    }

    pub fn materialize(&self) -> Vec<f64> {
        match self {
            ConstValue::Scalar { value } => vec![*value],
            ConstValue::Ones { rows, cols } => vec![1.0; rows * cols],
            ConstValue::Selector { rows, cols, offset } => {
                let mut v = vec![0.0; rows * cols];
                for j in 0..*cols {
                    let i = j + offset;
                    if i < *rows {
                        v[i * cols + j] = 1.0;
                    }
                }
                v
            }
            ConstValue::Dense { values, .. } => values.clone(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            ConstValue::Scalar { value } => value.abs(),
            ConstValue::Ones { .. } => 1.0,
            ConstValue::Selector { .. } => 1.0,
            ConstValue::Dense { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Whether every entry is 0 or 1, i.e. the constant only selects or sums.
    pub fn is_zero_one(&self) -> bool {
        match self {
            ConstValue::Scalar { value } => *value == 0.0 || *value == 1.0,
            ConstValue::Ones { .. } | ConstValue::Selector { .. } => true,
            ConstValue::Dense { values, .. } => values.iter().all(|&v| v == 0.0 || v == 1.0),
        }
    }
}

/// How a constant's fractional scale is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstScale {
    Fixed(u32),
    /// Encode at whatever scale the other operand of the consuming
    /// add/sub/compare ends up with. Public constants can be re-encoded for
    /// free, so they never force an alignment.
    MatchPartner,
}

/// Smallest scale `s <= max_scale` at which `value` is an exact multiple of
/// `2^-s`, or `max_scale` when there is none.
pub fn dyadic_scale(value: f64, max_scale: u32) -> u32 {
    (0..=max_scale)
        .find(|&s| {
            let y = value * 2f64.powi(s as i32);
            y.is_finite() && y == y.round()
        })
        .unwrap_or(max_scale)
}

/// Width in bits of a constant encoded at `scale`.
/// A 0/1 constant at scale 0 counts as one bit, like a comparison flag.
pub fn const_bits(value: &ConstValue, scale: u32) -> u32 {
    if scale == 0 && value.is_zero_one() {
        return 1;
    }
    let max = value.max_abs();
    match scale_to_int(max, scale) {
        Some(m) => signed_width(m),
        None => {
            // Beyond i128: a conservative estimate that saturates.
            let int_bits = if max > 0.0 {
                max.log2().floor() as i64 + 2
            } else {
                1
            };
            (int_bits + scale as i64).clamp(1, u32::MAX as i64) as u32
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum OpKind {
    Input {
        name: String,
        shape: Vec<usize>,
        /// Declared real range used when inputs are drawn at random.
        lo: f64,
        hi: f64,
    },
    Constant {
        value: ConstValue,
        scale: ConstScale,
    },
    Add,
    Sub,
    Mul,
    /// `[p, m] x [m, q]` (or `[q, m]` transposed). `accum` is the most nonzero
    /// terms any output sums, which bounds accumulation growth; it equals
    /// `inner` unless the right operand is a column selector.
    MatMul {
        inner: usize,
        accum: usize,
        transpose_rhs: bool,
    },
    /// 1 where `lhs > rhs`, else 0.
    Compare,
    Truncate {
        shift: u32,
    },
    RescaleUp {
        shift: u32,
    },
    Output {
        name: String,
    },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input { .. } => "Input",
            OpKind::Constant { .. } => "Constant",
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::MatMul { .. } => "MatMul",
            OpKind::Compare => "Compare",
            OpKind::Truncate { .. } => "Truncate",
            OpKind::RescaleUp { .. } => "RescaleUp",
            OpKind::Output { .. } => "Output",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Input { .. } | OpKind::Constant { .. } => 0,
            OpKind::Truncate { .. } | OpKind::RescaleUp { .. } | OpKind::Output { .. } => 1,
            _ => 2,
        }
    }

    pub fn is_elementwise_binary(&self) -> bool {
        matches!(
            self,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Compare
        )
    }

    /// Add, Sub and Compare need operands at equal scale.
    pub fn needs_aligned_scales(&self) -> bool {
        matches!(self, OpKind::Add | OpKind::Sub | OpKind::Compare)
    }

    pub fn grows_scale(&self) -> bool {
        matches!(self, OpKind::Mul | OpKind::MatMul { .. })
    }
}

pub(crate) fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// Worst-case signed width of a node's output given its input widths.
///
/// Addition grows by one bit, multiplication sums the widths, and a matrix
/// product adds `ceil(log2(accum))` bits of accumulation headroom. A
/// comparison yields a 1-bit flag. Unary ops ignore `e2`.
pub fn worst_case_bits(op: &OpKind, e1: u32, e2: u32) -> u32 {
    match op {
        OpKind::Add | OpKind::Sub => e1.max(e2).saturating_add(1),
        OpKind::Mul => e1.saturating_add(e2),
        OpKind::MatMul { accum, .. } => e1.saturating_add(e2).saturating_add(ceil_log2(*accum)),
        OpKind::Compare => 1,
        OpKind::Truncate { shift } => e1.saturating_sub(*shift).max(1),
        OpKind::RescaleUp { shift } => e1.saturating_add(*shift),
        OpKind::Input { .. } | OpKind::Constant { .. } | OpKind::Output { .. } => e1,
    }
}

/// Width a node needs internally; for a comparison this is its subtraction.
pub fn required_bits(op: &OpKind, e1: u32, e2: u32) -> u32 {
    match op {
        OpKind::Compare => e1.max(e2).saturating_add(1),
        _ => worst_case_bits(op, e1, e2),
    }
}

pub fn output_scale(op: &OpKind, s1: u32, s2: u32) -> u32 {
    match op {
        OpKind::Add | OpKind::Sub => s1,
        OpKind::Mul | OpKind::MatMul { .. } => s1.saturating_add(s2),
        OpKind::Compare => 0,
        OpKind::Truncate { shift } => s1.saturating_sub(*shift),
        OpKind::RescaleUp { shift } => s1.saturating_add(*shift),
        OpKind::Input { .. } | OpKind::Constant { .. } | OpKind::Output { .. } => s1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAnnotation {
    pub bits: u32,
    pub scale: u32,
    pub shape: Vec<usize>,
    pub category: Category,
}

impl EdgeAnnotation {
    pub fn numel(&self) -> usize {
        shape::numel(&self.shape)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub producer: NodeId,
    #[serde(flatten)]
    pub ann: EdgeAnnotation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(flatten)]
    pub op: OpKind,
    pub inputs: Vec<EdgeId>,
    pub output: EdgeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub config: FixedConfig,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    category: Category,
}

/// One structural problem found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Cycle {
        node: NodeId,
    },
    UnknownEdge {
        node: NodeId,
        edge: EdgeId,
    },
    Arity {
        node: NodeId,
        expected: usize,
        got: usize,
    },
    ScaleMismatch {
        node: NodeId,
        left: u32,
        right: u32,
    },
    Shape {
        node: NodeId,
        detail: String,
    },
    Producer {
        edge: EdgeId,
    },
}

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    version: u32,
    config: FixedConfig,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(config: FixedConfig) -> Self {
        Graph {
            config,
            nodes: Vec::new(),
            edges: Vec::new(),
            category: Category::Other,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn ann(&self, id: EdgeId) -> &EdgeAnnotation {
        &self.edges[id].ann
    }

    pub fn producer(&self, edge: EdgeId) -> &Node {
        &self.nodes[self.edges[edge].producer]
    }

    pub fn category(&self) -> Category {
        self.category
    }

    /// Set the category stamped on new edges, returning the previous one.
    pub fn set_category(&mut self, cat: Category) -> Category {
        std::mem::replace(&mut self.category, cat)
    }

    /// Run `f` with new edges stamped `cat`.
    pub fn with_category<T>(&mut self, cat: Category, f: impl FnOnce(&mut Self) -> T) -> T {
        let prev = self.set_category(cat);
        let out = f(self);
        self.category = prev;
        out
    }

    fn check_edge(&self, e: EdgeId) -> Result<&EdgeAnnotation> {
        self.edges
            .get(e)
            .map(|e| &e.ann)
            .ok_or(Error::UnknownEdge(e))
    }

    /// Append a node, deriving its output annotation from its inputs.
    pub fn add_node(&mut self, op: OpKind, inputs: &[EdgeId]) -> Result<(NodeId, EdgeId)> {
        if inputs.len() != op.arity() {
            return Err(Error::Arity {
                kind: op.name(),
                expected: op.arity(),
                got: inputs.len(),
            });
        }
        let ins = inputs
            .iter()
            .map(|&e| self.check_edge(e).cloned())
            .collect::<Result<Vec<_>>>()?;
        let ann = self.derive_annotation(&op, &ins)?;
        Ok(self.push_node(op, inputs.to_vec(), ann))
    }

    /// Append a node with a caller-supplied annotation. Used by the
    /// truncation pass, which computes annotations itself.
    pub(crate) fn push_node(
        &mut self,
        op: OpKind,
        inputs: Vec<EdgeId>,
        ann: EdgeAnnotation,
    ) -> (NodeId, EdgeId) {
        let id = self.nodes.len();
        let out = self.edges.len();
        self.edges.push(Edge {
            id: out,
            producer: id,
            ann,
        });
        self.nodes.push(Node {
            id,
            op,
            inputs,
            output: out,
        });
        (id, out)
    }

    fn derive_annotation(&self, op: &OpKind, ins: &[EdgeAnnotation]) -> Result<EdgeAnnotation> {
        let cfg = &self.config;
        let category = self.category;
        let ann = match op {
            OpKind::Input { shape, .. } => EdgeAnnotation {
                bits: cfg.base_width,
                scale: cfg.frac_bits,
                shape: shape.clone(),
                category,
            },
            OpKind::Constant { value, scale } => {
                let s = match scale {
                    ConstScale::Fixed(s) => *s,
                    ConstScale::MatchPartner => cfg.frac_bits,
                };
                EdgeAnnotation {
                    bits: const_bits(value, s),
                    scale: s,
                    shape: value.shape(),
                    category,
                }
            }
            _ => {
                let a = &ins[0];
                let b = ins.get(1).unwrap_or(a);
                if op.needs_aligned_scales() && a.scale != b.scale {
                    return Err(Error::ScaleMismatch {
                        left: a.scale,
                        right: b.scale,
                    });
                }
                if let OpKind::Truncate { shift } = op {
                    if *shift > a.scale {
                        return Err(Error::BadShift {
                            shift: *shift,
                            scale: a.scale,
                        });
                    }
                }
                EdgeAnnotation {
                    bits: worst_case_bits(op, a.bits, b.bits),
                    scale: output_scale(op, a.scale, b.scale),
                    shape: result_shape(op, &a.shape, &b.shape)?,
                    category,
                }
            }
        };
        Ok(ann)
    }

    // Builder conveniences; each wraps `add_node` and returns the output edge.

    pub fn input(&mut self, name: &str, shape: Vec<usize>, lo: f64, hi: f64) -> EdgeId {
        let op = OpKind::Input {
            name: name.to_string(),
            shape,
            lo,
            hi,
        };
        self.add_node(op, &[]).expect("inputs cannot fail").1
    }

    pub fn constant(&mut self, value: ConstValue, scale: ConstScale) -> EdgeId {
        self.add_node(OpKind::Constant { value, scale }, &[])
            .expect("constants cannot fail")
            .1
    }

    /// A scalar constant that will be encoded at its partner's scale.
    pub fn scalar_like(&mut self, value: f64, partner: EdgeId) -> EdgeId {
        let s = self.ann(partner).scale;
        let value = ConstValue::Scalar { value };
        let ann = EdgeAnnotation {
            bits: const_bits(&value, s),
            scale: s,
            shape: vec![1],
            category: self.category,
        };
        self.push_node(
            OpKind::Constant {
                value,
                scale: ConstScale::MatchPartner,
            },
            vec![],
            ann,
        )
        .1
    }

    /// A scalar multiplier, encoded exactly when it is dyadic within
    /// `frac_bits` fractional bits and rounded at `frac_bits` otherwise.
    pub fn scalar(&mut self, value: f64) -> EdgeId {
        let s = dyadic_scale(value, self.config.frac_bits);
        self.constant(ConstValue::Scalar { value }, ConstScale::Fixed(s))
    }

    /// Rescale the operand with the smaller scale up to the other's.
    fn align(&mut self, a: EdgeId, b: EdgeId) -> Result<(EdgeId, EdgeId)> {
        let (sa, sb) = (self.check_edge(a)?.scale, self.check_edge(b)?.scale);
        Ok(match sa.cmp(&sb) {
            std::cmp::Ordering::Less => (self.rescale_up(a, sb - sa)?, b),
            std::cmp::Ordering::Greater => (a, self.rescale_up(b, sa - sb)?),
            std::cmp::Ordering::Equal => (a, b),
        })
    }

    /// `a + b`, aligning scales with a `RescaleUp` when they differ.
    pub fn add(&mut self, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
        let (a, b) = self.align(a, b)?;
        Ok(self.add_node(OpKind::Add, &[a, b])?.1)
    }

    pub fn sub(&mut self, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
        let (a, b) = self.align(a, b)?;
        Ok(self.add_node(OpKind::Sub, &[a, b])?.1)
    }

    pub fn mul(&mut self, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
        Ok(self.add_node(OpKind::Mul, &[a, b])?.1)
    }

    pub fn compare(&mut self, a: EdgeId, b: EdgeId) -> Result<EdgeId> {
        let (a, b) = self.align(a, b)?;
        Ok(self.add_node(OpKind::Compare, &[a, b])?.1)
    }

    pub fn matmul(&mut self, a: EdgeId, b: EdgeId, transpose_rhs: bool) -> Result<EdgeId> {
        let inner = *self
            .check_edge(a)?
            .shape
            .last()
            .ok_or_else(|| Error::Shape("matmul lhs must be a matrix".into()))?;
        let accum = match &self.producer(b).op {
            OpKind::Constant {
                value: ConstValue::Selector { .. },
                ..
            } => 1,
            _ => inner,
        };
        let op = OpKind::MatMul {
            inner,
            accum,
            transpose_rhs,
        };
        Ok(self.add_node(op, &[a, b])?.1)
    }

    pub fn rescale_up(&mut self, a: EdgeId, shift: u32) -> Result<EdgeId> {
        Ok(self.add_node(OpKind::RescaleUp { shift }, &[a])?.1)
    }

    pub fn truncate(&mut self, a: EdgeId, shift: u32) -> Result<EdgeId> {
        Ok(self.add_node(OpKind::Truncate { shift }, &[a])?.1)
    }

    pub fn output(&mut self, name: &str, a: EdgeId) -> Result<EdgeId> {
        let op = OpKind::Output {
            name: name.to_string(),
        };
        Ok(self.add_node(op, &[a])?.1)
    }

    /// Replace one input of an existing node without any checking.
    /// Intended for tests and tooling that need malformed graphs.
    pub fn rewire_unchecked(&mut self, node: NodeId, slot: usize, edge: EdgeId) {
        self.nodes[node].inputs[slot] = edge;
    }

    pub fn input_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, OpKind::Input { .. }))
    }

    pub fn output_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, OpKind::Output { .. }))
    }

    pub fn count_kind(&self, pred: impl Fn(&OpKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.op)).count()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GraphDoc {
            version: GRAPH_FORMAT_VERSION,
            config: self.config,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        if doc.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported graph format version {}",
                doc.version
            )));
        }
        doc.config.validate()?;
        for (i, n) in doc.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Config(format!("node {i} has id {}", n.id)));
            }
        }
        for (i, e) in doc.edges.iter().enumerate() {
            if e.id != i {
                return Err(Error::Config(format!("edge {i} has id {}", e.id)));
            }
        }
        Ok(Graph {
            config: doc.config,
            nodes: doc.nodes,
            edges: doc.edges,
            category: Category::Other,
        })
    }
}

pub(crate) fn result_shape(op: &OpKind, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    match op {
        OpKind::MatMul {
            inner,
            transpose_rhs,
            ..
        } => {
            if a.len() != 2 || b.len() != 2 {
                return Err(Error::Shape(format!(
                    "matmul needs matrices, got {a:?} and {b:?}"
                )));
            }
            let (bk, bq) = if *transpose_rhs {
                (b[1], b[0])
            } else {
                (b[0], b[1])
            };
            if a[1] != bk || a[1] != *inner {
                return Err(Error::Shape(format!(
                    "matmul {a:?} x {b:?}{} with inner {inner}",
                    if *transpose_rhs { "^T" } else { "" }
                )));
            }
            Ok(vec![a[0], bq])
        }
        op if op.is_elementwise_binary() => shape::broadcast(a, b)
            .ok_or_else(|| Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        _ => Ok(a.to_vec()),
    }
}

/// Nodes in dependency order; ties resolve to the smaller node id.
pub fn topo_order(g: &Graph) -> Result<Vec<NodeId>> {
    let n = g.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for node in &g.nodes {
        for &e in &node.inputs {
            let edge = g.edges.get(e).ok_or(Error::UnknownEdge(e))?;
            consumers[edge.producer].push(node.id);
            indegree[node.id] += 1;
        }
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for &c in &consumers[id] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::Cycle(stuck));
    }
    Ok(order)
}

/// Structural check: acyclicity, edge existence, arity, scale alignment
/// and shape compatibility.
pub fn validate(g: &Graph) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in &g.edges {
        let ok = g
            .nodes
            .get(e.producer)
            .map(|n| n.output == e.id)
            .unwrap_or(false);
        if !ok {
            out.push(Violation::Producer { edge: e.id });
        }
    }
    for node in &g.nodes {
        if node.inputs.len() != node.op.arity() {
            out.push(Violation::Arity {
                node: node.id,
                expected: node.op.arity(),
                got: node.inputs.len(),
            });
            continue;
        }
        let mut ins = Vec::new();
        for &e in &node.inputs {
            match g.edges.get(e) {
                Some(edge) => ins.push(&edge.ann),
                None => out.push(Violation::UnknownEdge {
                    node: node.id,
                    edge: e,
                }),
            }
        }
        if ins.len() != node.inputs.len() || ins.is_empty() {
            continue;
        }
        let a = ins[0];
        let b = ins.get(1).copied().unwrap_or(a);
        if node.op.needs_aligned_scales() && a.scale != b.scale {
            out.push(Violation::ScaleMismatch {
                node: node.id,
                left: a.scale,
                right: b.scale,
            });
        }
        if let Err(e) = result_shape(&node.op, &a.shape, &b.shape) {
            out.push(Violation::Shape {
                node: node.id,
                detail: e.to_string(),
            });
        }
    }
    if let Err(Error::Cycle(node)) = topo_order(g) {
        out.push(Violation::Cycle { node });
    }
    out
}

/// Nodes whose output width disagrees with [`worst_case_bits`] of their
/// inputs. Constants and inputs are skipped.
pub fn annotation_mismatches(g: &Graph) -> Vec<NodeId> {
    g.nodes
        .iter()
        .filter(|n| n.op.arity() > 0)
        .filter(|n| {
            let a = g.ann(n.inputs[0]).bits;
            let b = n.inputs.get(1).map(|&e| g.ann(e).bits).unwrap_or(a);
            g.ann(n.output).bits != worst_case_bits(&n.op, a, b)
        })
        .map(|n| n.id)
        .collect()
}
