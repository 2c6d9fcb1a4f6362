//! Static truncation placement.
//!
//! [`place_truncations`] walks a builder graph in dependency order and
//! rebuilds it, tracking a worst-case width and scale for every value. When
//! a node's worst case exceeds the field, the wider operand is truncated
//! back to `frac_bits` and the node's own width rule is re-applied until it
//! fits. A truncated edge replaces the original for every later consumer.
//!
//! [`naive_baseline`] instead truncates right after every scale-growing
//! multiplication, which is what protocols without a width analysis do.
//! Like those protocols it relies on values staying within the base width
//! and inserts nothing else; annotated widths above the field are left in
//! place and reported by [`field_bound_violations`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::FixedConfig;
use crate::ir::{
    self, const_bits, output_scale, required_bits, worst_case_bits, Category, ConstScale,
    ConstValue, EdgeAnnotation, EdgeId, Graph, NodeId, OpKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Static,
    NaiveEveryOp,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(Strategy::Static),
            "naive" | "naive_every_op" => Some(Strategy::NaiveEveryOp),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::NaiveEveryOp => "naive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    /// Edge of the rewritten graph that is truncated.
    pub edge: EdgeId,
    pub shift: u32,
    pub scalars: u64,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncPlan {
    pub strategy: Strategy,
    pub field_bits: u32,
    pub base_width: u32,
    pub frac_bits: u32,
    pub entries: Vec<PlanEntry>,
}

impl TruncPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn scalars_by_category(&self) -> Vec<(Category, u64)> {
        Category::ALL
            .iter()
            .map(|&c| {
                let n = self
                    .entries
                    .iter()
                    .filter(|e| e.category == c)
                    .map(|e| e.scalars)
                    .sum();
                (c, n)
            })
            .collect()
    }
}

pub fn count_truncated_scalars(plan: &TruncPlan) -> u64 {
    plan.entries.iter().map(|e| e.scalars).sum()
}

/// A rewritten graph together with the truncations that were inserted.
#[derive(Clone, Debug)]
pub struct Lowered {
    pub plan: TruncPlan,
    pub graph: Graph,
}

pub fn place_truncations(g: &Graph, cfg: &FixedConfig) -> Result<Lowered> {
    Pass::new(g, cfg, Strategy::Static)?.run()
}

pub fn naive_baseline(g: &Graph, cfg: &FixedConfig) -> Result<Lowered> {
    Pass::new(g, cfg, Strategy::NaiveEveryOp)?.run()
}

pub fn lower(g: &Graph, cfg: &FixedConfig, strategy: Strategy) -> Result<Lowered> {
    Pass::new(g, cfg, strategy)?.run()
}

/// Edges of `h` whose annotated width exceeds the field.
pub fn field_bound_violations(h: &Graph) -> Vec<EdgeId> {
    let f = h.config.field_bits;
    h.edges()
        .iter()
        .filter(|e| e.ann.bits > f)
        .map(|e| e.id)
        .collect()
}

#[derive(Clone, Copy)]
enum Slot {
    Edge(EdgeId),
    /// A constant encoded at whatever scale its consumer needs.
    Deferred(NodeId),
}

struct Pass<'a> {
    g: &'a Graph,
    cfg: FixedConfig,
    strategy: Strategy,
    h: Graph,
    map: Vec<Option<Slot>>,
    entries: Vec<PlanEntry>,
}

impl<'a> Pass<'a> {
    fn new(g: &'a Graph, cfg: &FixedConfig, strategy: Strategy) -> Result<Self> {
        cfg.validate()?;
        Ok(Pass {
            g,
            cfg: *cfg,
            strategy,
            h: Graph::new(*cfg),
            map: vec![None; g.edges().len()],
            entries: Vec::new(),
        })
    }

    fn run(mut self) -> Result<Lowered> {
        let violations = ir::validate(self.g);
        if let Some(v) = violations.first() {
            return Err(match v {
                ir::Violation::Cycle { node } => Error::Cycle(*node),
                ir::Violation::UnknownEdge { edge, .. } => Error::UnknownEdge(*edge),
                other => Error::Config(format!("invalid graph: {other:?}")),
            });
        }
        for id in ir::topo_order(self.g)? {
            self.visit(id)?;
        }
        let cfg = self.cfg;
        Ok(Lowered {
            plan: TruncPlan {
                strategy: self.strategy,
                field_bits: cfg.field_bits,
                base_width: cfg.base_width,
                frac_bits: cfg.frac_bits,
                entries: self.entries,
            },
            graph: self.h,
        })
    }

    fn visit(&mut self, id: NodeId) -> Result<()> {
        let node = self.g.node(id);
        let out_ann = self.g.ann(node.output);
        let category = out_ann.category;
        let slot = match &node.op {
            OpKind::Input { .. } => {
                let ann = EdgeAnnotation {
                    bits: self.cfg.base_width,
                    scale: self.cfg.frac_bits,
                    shape: out_ann.shape.clone(),
                    category,
                };
                Slot::Edge(self.h.push_node(node.op.clone(), vec![], ann).1)
            }
            OpKind::Constant {
                scale: ConstScale::MatchPartner,
                ..
            } => Slot::Deferred(id),
            OpKind::Constant {
                value,
                scale: ConstScale::Fixed(s),
            } => Slot::Edge(self.push_const(value, *s, category)),
            OpKind::RescaleUp { .. } => Slot::Edge(self.resolve(node.inputs[0], None)),
            OpKind::Truncate { shift } => {
                let e = self.resolve(node.inputs[0], None);
                let s = self.h.ann(e).scale;
                let d = (*shift).min(s);
                if d == 0 {
                    Slot::Edge(e)
                } else {
                    Slot::Edge(self.emit_truncate(e, d, None))
                }
            }
            OpKind::Output { .. } => {
                let e = self.resolve(node.inputs[0], None);
                let mut ann = self.h.ann(e).clone();
                ann.category = category;
                Slot::Edge(self.h.push_node(node.op.clone(), vec![e], ann).1)
            }
            OpKind::Add | OpKind::Sub | OpKind::Compare => {
                Slot::Edge(self.visit_aligned(id, category)?)
            }
            OpKind::Mul | OpKind::MatMul { .. } => {
                let out = self.visit_product(id, category)?;
                match self.strategy {
                    Strategy::NaiveEveryOp => {
                        let s = self.h.ann(out).scale;
                        let n = self.cfg.frac_bits;
                        if s > n {
                            Slot::Edge(self.emit_truncate(out, s - n, None))
                        } else {
                            Slot::Edge(out)
                        }
                    }
                    Strategy::Static => Slot::Edge(out),
                }
            }
        };
        self.map[node.output] = Some(slot);
        Ok(())
    }

    fn push_const(&mut self, value: &ConstValue, scale: u32, category: Category) -> EdgeId {
        let ann = EdgeAnnotation {
            bits: const_bits(value, scale),
            scale,
            shape: value.shape(),
            category,
        };
        let op = OpKind::Constant {
            value: value.clone(),
            scale: ConstScale::Fixed(scale),
        };
        self.h.push_node(op, vec![], ann).1
    }

    /// Current rewritten edge for a builder edge. Deferred constants are
    /// encoded at `scale`, or at `frac_bits` when no partner scale applies.
    fn resolve(&mut self, g_edge: EdgeId, scale: Option<u32>) -> EdgeId {
        match self.map[g_edge].expect("producer visited first") {
            Slot::Edge(e) => e,
            Slot::Deferred(node) => {
                let OpKind::Constant { value, .. } = &self.g.node(node).op else {
                    unreachable!("only constants are deferred")
                };
                let cat = self.g.ann(g_edge).category;
                self.push_const(value, scale.unwrap_or(self.cfg.frac_bits), cat)
            }
        }
    }

    fn is_deferred(&self, g_edge: EdgeId) -> bool {
        matches!(self.map[g_edge], Some(Slot::Deferred(_)))
    }

    /// Truncate `e` by `d` bits. Records a plan entry unless `e` is a
    /// public constant, which is re-encoded instead.
    fn emit_truncate(&mut self, e: EdgeId, d: u32, replace: Option<EdgeId>) -> EdgeId {
        let ann = self.h.ann(e).clone();
        let k = self.cfg.base_width;
        let out = if let OpKind::Constant { value, .. } = &self.h.producer(e).op {
            let value = value.clone();
            self.push_const(&value, ann.scale - d, ann.category)
        } else {
            let bits = worst_case_bits(&OpKind::Truncate { shift: d }, ann.bits, 0).min(k);
            let new_ann = EdgeAnnotation {
                bits,
                scale: ann.scale - d,
                shape: ann.shape.clone(),
                category: ann.category,
            };
            let out = self
                .h
                .push_node(OpKind::Truncate { shift: d }, vec![e], new_ann)
                .1;
            self.entries.push(PlanEntry {
                edge: e,
                shift: d,
                scalars: ann.numel() as u64,
                category: ann.category,
            });
            out
        };
        if let Some(g_edge) = replace {
            self.map[g_edge] = Some(Slot::Edge(out));
        }
        out
    }

    /// Truncate the operand behind builder edge `g_edge` back to `frac_bits`.
    fn truncate_to_base(&mut self, g_edge: EdgeId) {
        let e = self.resolve(g_edge, None);
        let d = self.h.ann(e).scale - self.cfg.frac_bits;
        self.emit_truncate(e, d, Some(g_edge));
    }

    /// The baseline assumes values wider than the base width still fit
    /// at run time, so it only fails when base-width operands overflow.
    fn naive_tolerates(&self, widths: &[u32]) -> bool {
        self.strategy == Strategy::NaiveEveryOp && widths.iter().any(|w| *w > self.cfg.base_width)
    }

    fn truncatable(&self, e: EdgeId) -> bool {
        self.h.ann(e).scale > self.cfg.frac_bits
    }

    /// Pick which operand to truncate. `order` lists operand slots from
    /// the preferred (wider) one. Returns the builder edge to truncate.
    fn choose(&self, node: NodeId, required: u32, order: [(EdgeId, EdgeId); 2]) -> Result<EdgeId> {
        for &(g_edge, h_edge) in &order {
            if self.truncatable(h_edge) {
                return Ok(g_edge);
            }
        }
        let widest = order[0].1;
        if self.h.ann(widest).bits <= self.cfg.base_width {
            Err(Error::FieldTooSmall {
                node,
                required,
                field_bits: self.cfg.field_bits,
            })
        } else {
            Err(Error::UntruncatableEdge { node, edge: widest })
        }
    }

    fn visit_product(&mut self, id: NodeId, category: Category) -> Result<EdgeId> {
        let node = self.g.node(id);
        let op = node.op.clone();
        let (ga, gb) = (node.inputs[0], node.inputs[1]);
        let f = self.cfg.field_bits;
        loop {
            let a = self.resolve(ga, None);
            let b = if gb == ga { a } else { self.resolve(gb, None) };
            let (ea, eb) = (self.h.ann(a).bits, self.h.ann(b).bits);
            let worst = worst_case_bits(&op, ea, eb);
            if worst <= f || self.naive_tolerates(&[ea, eb]) {
                let ann = EdgeAnnotation {
                    bits: worst,
                    scale: output_scale(&op, self.h.ann(a).scale, self.h.ann(b).scale),
                    shape: self.g.ann(node.output).shape.clone(),
                    category,
                };
                return Ok(self.h.push_node(op, vec![a, b], ann).1);
            }
            let order = if ea >= eb {
                [(ga, a), (gb, b)]
            } else {
                [(gb, b), (ga, a)]
            };
            let pick = self.choose(id, worst, order)?;
            self.truncate_to_base(pick);
        }
    }

    fn visit_aligned(&mut self, id: NodeId, category: Category) -> Result<EdgeId> {
        let node = self.g.node(id);
        let op = node.op.clone();
        let (ga, gb) = (node.inputs[0], node.inputs[1]);
        let f = self.cfg.field_bits;
        let out_shape = self.g.ann(node.output).shape.clone();

        // A deferred constant takes its partner's scale and never needs
        // alignment. With two deferred constants the left one is pinned.
        let (da, db) = (self.is_deferred(ga), self.is_deferred(gb));
        if da || db {
            let (real, konst, real_left) = if db { (ga, gb, true) } else { (gb, ga, false) };
            let value = match self.map[konst] {
                Some(Slot::Deferred(n)) => match &self.g.node(n).op {
                    OpKind::Constant { value, .. } => value.clone(),
                    _ => unreachable!(),
                },
                _ => unreachable!(),
            };
            loop {
                let r = self.resolve(real, None);
                let ra = self.h.ann(r).clone();
                let cb = const_bits(&value, ra.scale);
                let req = required_bits(&op, ra.bits, cb);
                if req <= f || self.naive_tolerates(&[ra.bits]) {
                    let c = self.resolve(konst, Some(ra.scale));
                    let (a, b) = if real_left { (r, c) } else { (c, r) };
                    let ann = EdgeAnnotation {
                        bits: worst_case_bits(&op, ra.bits, cb),
                        scale: output_scale(&op, ra.scale, ra.scale),
                        shape: out_shape,
                        category,
                    };
                    return Ok(self.h.push_node(op, vec![a, b], ann).1);
                }
                if self.truncatable(r) {
                    self.truncate_to_base(real);
                } else {
                    return Err(self.choose(id, req, [(real, r), (real, r)]).unwrap_err());
                }
            }
        }

        loop {
            let a = self.resolve(ga, None);
            let b = if gb == ga { a } else { self.resolve(gb, None) };
            let (aa, ab) = (self.h.ann(a).clone(), self.h.ann(b).clone());
            let target = aa.scale.max(ab.scale);
            let wa = aa.bits.saturating_add(target - aa.scale);
            let wb = ab.bits.saturating_add(target - ab.scale);
            let req = required_bits(&op, wa, wb);
            if req <= f || self.naive_tolerates(&[wa, wb]) {
                let a = self.align(a, target);
                let b = self.align(b, target);
                let ann = EdgeAnnotation {
                    bits: worst_case_bits(&op, wa, wb),
                    scale: output_scale(&op, target, target),
                    shape: out_shape,
                    category,
                };
                return Ok(self.h.push_node(op, vec![a, b], ann).1);
            }
            let order = if wa >= wb {
                [(ga, a), (gb, b)]
            } else {
                [(gb, b), (ga, a)]
            };
            let pick = self.choose(id, req, order)?;
            self.truncate_to_base(pick);
        }
    }

    fn align(&mut self, e: EdgeId, target: u32) -> EdgeId {
        let ann = self.h.ann(e).clone();
        if ann.scale == target {
            return e;
        }
        let d = target - ann.scale;
        if let OpKind::Constant { value, .. } = &self.h.producer(e).op {
            let value = value.clone();
            return self.push_const(&value, target, ann.category);
        }
        let op = OpKind::RescaleUp { shift: d };
        let new_ann = EdgeAnnotation {
            bits: worst_case_bits(&op, ann.bits, 0),
            scale: target,
            shape: ann.shape,
            category: ann.category,
        };
        self.h.push_node(op, vec![e], new_ann).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u32, k: u32, f: u32) -> FixedConfig {
        FixedConfig::new(n, k, f).unwrap()
    }

    fn chain(c: FixedConfig) -> Graph {
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1], -1.0, 1.0);
        let b = g.input("b", vec![1], -1.0, 1.0);
        let c2 = g.input("c", vec![1], -1.0, 1.0);
        let ab = g.mul(a, b).unwrap();
        let abc = g.mul(ab, c2).unwrap();
        g.output("y", abc).unwrap();
        g
    }

    #[test]
    fn chain_needs_one_truncation() {
        let c = cfg(4, 8, 16);
        let g = chain(c);
        let low = place_truncations(&g, &c).unwrap();
        assert_eq!(low.plan.entries.len(), 1);
        let e = &low.plan.entries[0];
        assert_eq!(e.shift, 4);
        assert_eq!(e.scalars, 1);
        // The truncated edge is the first product.
        let producer = low.graph.producer(e.edge);
        assert!(matches!(producer.op, OpKind::Mul));
        assert_eq!(low.graph.ann(e.edge).bits, 16);
        assert!(field_bound_violations(&low.graph).is_empty());
        let out = low.graph.output_nodes().next().unwrap().output;
        assert_eq!(low.graph.ann(out).bits, 16);
        assert_eq!(low.graph.ann(out).scale, 8);

        let naive = naive_baseline(&g, &c).unwrap();
        assert_eq!(naive.plan.entries.len(), 2);
    }

    #[test]
    fn adds_only_need_nothing() {
        let c = cfg(4, 8, 64);
        let mut g = Graph::new(c);
        let mut acc = g.input("x0", vec![3], -1.0, 1.0);
        for i in 1..10 {
            let x = g.input(&format!("x{i}"), vec![3], -1.0, 1.0);
            acc = g.add(acc, x).unwrap();
        }
        g.output("y", acc).unwrap();
        assert!(place_truncations(&g, &c).unwrap().plan.entries.is_empty());
        assert!(naive_baseline(&g, &c).unwrap().plan.entries.is_empty());
    }

    #[test]
    fn field_too_small() {
        let c = cfg(13, 40, 64);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1], -1.0, 1.0);
        let b = g.input("b", vec![1], -1.0, 1.0);
        g.mul(a, b).unwrap();
        assert!(matches!(
            place_truncations(&g, &c),
            Err(Error::FieldTooSmall {
                required: 80,
                field_bits: 64,
                ..
            })
        ));
        assert!(matches!(
            naive_baseline(&g, &c),
            Err(Error::FieldTooSmall { .. })
        ));
    }

    #[test]
    fn matmul_field_too_small() {
        let c = cfg(13, 30, 64);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1, 32], -1.0, 1.0);
        let b = g.input("b", vec![32, 1], -1.0, 1.0);
        g.matmul(a, b, false).unwrap();
        assert!(matches!(
            place_truncations(&g, &c),
            Err(Error::FieldTooSmall { required: 65, .. })
        ));
    }

    #[test]
    fn untruncatable_edge() {
        // A sum of many base-width inputs grows past k while staying at
        // scale n; multiplying two of them cannot be fixed by truncation.
        let c = cfg(2, 8, 24);
        let mut g = Graph::new(c);
        let mut acc = g.input("x0", vec![1], -1.0, 1.0);
        for i in 1..40 {
            let x = g.input(&format!("x{i}"), vec![1], -1.0, 1.0);
            acc = g.add(acc, x).unwrap();
        }
        let sq = g.mul(acc, acc).unwrap();
        g.output("y", sq).unwrap();
        assert!(matches!(
            place_truncations(&g, &c),
            Err(Error::UntruncatableEdge { .. })
        ));
    }

    #[test]
    fn tie_breaks_left() {
        let c = cfg(4, 8, 16);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1], -1.0, 1.0);
        let b = g.input("b", vec![2], -1.0, 1.0);
        let p = g.mul(a, a).unwrap();
        let q = g.mul(b, b).unwrap();
        let r = g.mul(p, q).unwrap();
        g.output("y", r).unwrap();
        let low = place_truncations(&g, &c).unwrap();
        // Both products are 16 bits; the left one goes first, then the
        // right one since 8 + 16 still exceeds 16.
        let shapes: Vec<_> = low
            .plan
            .entries
            .iter()
            .map(|e| low.graph.ann(e.edge).shape.clone())
            .collect();
        assert_eq!(shapes, vec![vec![1], vec![2]]);
    }

    #[test]
    fn shared_edge_is_truncated_once() {
        let c = cfg(4, 8, 16);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1], -1.0, 1.0);
        let p = g.mul(a, a).unwrap();
        let q = g.mul(p, p).unwrap();
        let r = g.mul(p, a).unwrap();
        g.output("q", q).unwrap();
        g.output("r", r).unwrap();
        let low = place_truncations(&g, &c).unwrap();
        assert_eq!(low.plan.entries.len(), 1);
    }

    #[test]
    fn rescale_before_add() {
        let c = cfg(4, 8, 20);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![1], -1.0, 1.0);
        let b = g.input("b", vec![1], -1.0, 1.0);
        let p = g.mul(a, b).unwrap();
        // p is at scale 8 and 16 bits; p*p needs 32 > 20 so p is truncated
        // to scale 4. p + q then aligns the truncated p upward.
        let q = g.mul(a, a).unwrap();
        let pp = g.mul(p, p).unwrap();
        let s = g.add(p, q).unwrap();
        g.output("pp", pp).unwrap();
        g.output("y", s).unwrap();
        let low = place_truncations(&g, &c).unwrap();
        assert!(ir::validate(&low.graph).is_empty());
        assert!(low
            .graph
            .nodes()
            .iter()
            .any(|n| matches!(n.op, OpKind::RescaleUp { .. })));
        assert!(field_bound_violations(&low.graph).is_empty());
    }

    #[test]
    fn deferred_constants_take_partner_scale() {
        let c = cfg(4, 8, 32);
        let mut g = Graph::new(c);
        let a = g.input("a", vec![2], -1.0, 1.0);
        let p = g.mul(a, a).unwrap();
        let two = g.scalar_like(2.0, p);
        let s = g.sub(two, p).unwrap();
        g.output("y", s).unwrap();
        let low = place_truncations(&g, &c).unwrap();
        assert!(low.plan.entries.is_empty());
        let consts: Vec<_> = low
            .graph
            .nodes()
            .iter()
            .filter(|n| matches!(n.op, OpKind::Constant { .. }))
            .map(|n| low.graph.ann(n.output).scale)
            .collect();
        assert_eq!(consts, vec![8]);
        assert!(ir::validate(&low.graph).is_empty());
    }

    #[test]
    fn count_scalars() {
        let plan = |shapes: &[u64]| TruncPlan {
            strategy: Strategy::Static,
            field_bits: 64,
            base_width: 20,
            frac_bits: 13,
            entries: shapes
                .iter()
                .map(|&s| PlanEntry {
                    edge: 0,
                    shift: 13,
                    scalars: s,
                    category: Category::Other,
                })
                .collect(),
        };
        assert_eq!(count_truncated_scalars(&plan(&[])), 0);
        assert_eq!(count_truncated_scalars(&plan(&[16])), 16);
        assert_eq!(count_truncated_scalars(&plan(&[6, 5])), 11);
    }

    #[test]
    fn plan_json_round_trip() {
        let c = cfg(4, 8, 16);
        let low = place_truncations(&chain(c), &c).unwrap();
        let text = low.plan.to_json().unwrap();
        assert!(text.contains("\"strategy\": \"static\""));
        assert_eq!(TruncPlan::from_json(&text).unwrap(), low.plan);
    }

    #[test]
    fn deterministic() {
        let c = cfg(4, 8, 16);
        let g = chain(c);
        let a = place_truncations(&g, &c).unwrap();
        let b = place_truncations(&g, &c).unwrap();
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.graph, b.graph);
    }
}
