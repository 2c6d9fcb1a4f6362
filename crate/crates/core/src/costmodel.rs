//! Online latency estimates from per-scalar costs.
//!
//! Only evaluator time counts towards the online total; garbling can be
//! done ahead of time and is reported separately.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{Category, Graph, OpKind};
use crate::truncpass::{count_truncated_scalars, Strategy, TruncPlan};

pub const COST_TABLE_FORMAT_VERSION: u32 = 1;

const DEFAULT_TABLE: &str = include_str!("../../../data/cost_table.json");

/// Per-scalar costs, in milliseconds, for one field size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub field_bits: u32,
    pub trunc_evaluator_ms: f64,
    pub trunc_garbler_ms: f64,
    pub mul_ms_per_scalar: f64,
    pub compare_ms_per_scalar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub entries: Vec<CostEntry>,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::from_json(DEFAULT_TABLE).expect("shipped cost table is valid")
    }
}

impl CostTable {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: CostTable = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != COST_TABLE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported cost table version {}",
                self.version
            )));
        }
        for e in &self.entries {
            let costs = [
                e.trunc_evaluator_ms,
                e.trunc_garbler_ms,
                e.mul_ms_per_scalar,
                e.compare_ms_per_scalar,
            ];
            if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::Config(format!(
                    "cost entry for F={} has a negative or non-finite cost",
                    e.field_bits
                )));
            }
        }
        for f in [64, 128] {
            self.entry(f)?;
        }
        Ok(())
    }

    pub fn entry(&self, field_bits: u32) -> Result<&CostEntry> {
        self.entries
            .iter()
            .find(|e| e.field_bits == field_bits)
            .ok_or(Error::MissingCostEntry(field_bits))
    }

    /// Every cost multiplied by `c`.
    pub fn scaled(&self, c: f64) -> CostTable {
        let mut t = self.clone();
        for e in &mut t.entries {
            e.trunc_evaluator_ms *= c;
            e.trunc_garbler_ms *= c;
            e.mul_ms_per_scalar *= c;
            e.compare_ms_per_scalar *= c;
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryCost {
    pub category: Category,
    pub scalars: u64,
    pub trunc_ms: f64,
    /// Fraction of `trunc_ms`.
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub field_bits: u32,
    pub strategy: Strategy,
    pub truncated_scalars: u64,
    pub mul_scalars: u64,
    pub compare_scalars: u64,
    pub trunc_ms: f64,
    pub mul_ms: f64,
    pub compare_ms: f64,
    pub total_online_ms: f64,
    pub trunc_fraction: f64,
    /// Offline, not part of the total.
    pub trunc_garbler_ms: f64,
    pub categories: Vec<CategoryCost>,
}

/// Scalar multiplications and comparisons performed by a graph.
pub fn op_census(g: &Graph) -> (u64, u64) {
    let (mut muls, mut cmps) = (0u64, 0u64);
    for node in g.nodes() {
        let n = g.ann(node.output).numel() as u64;
        match node.op {
            OpKind::Mul => muls += n,
            OpKind::MatMul { inner, .. } => muls += n * inner as u64,
            OpKind::Compare => cmps += n,
            _ => {}
        }
    }
    (muls, cmps)
}

/// Latency of running `g` with the truncations of `plan`.
pub fn estimate(g: &Graph, plan: &TruncPlan, table: &CostTable) -> Result<CostReport> {
    let e = table.entry(plan.field_bits)?;
    let (mul_scalars, compare_scalars) = op_census(g);
    let truncated = count_truncated_scalars(plan);
    let trunc_ms = truncated as f64 * e.trunc_evaluator_ms;
    let mul_ms = mul_scalars as f64 * e.mul_ms_per_scalar;
    let compare_ms = compare_scalars as f64 * e.compare_ms_per_scalar;
    let total = trunc_ms + mul_ms + compare_ms;
    let categories = plan
        .scalars_by_category()
        .into_iter()
        .map(|(category, scalars)| {
            let ms = scalars as f64 * e.trunc_evaluator_ms;
            CategoryCost {
                category,
                scalars,
                trunc_ms: ms,
                share: if trunc_ms > 0.0 { ms / trunc_ms } else { 0.0 },
            }
        })
        .collect();
    Ok(CostReport {
        field_bits: plan.field_bits,
        strategy: plan.strategy,
        truncated_scalars: truncated,
        mul_scalars,
        compare_scalars,
        trunc_ms,
        mul_ms,
        compare_ms,
        total_online_ms: total,
        trunc_fraction: if total > 0.0 { trunc_ms / total } else { 0.0 },
        trunc_garbler_ms: truncated as f64 * e.trunc_garbler_ms,
        categories,
    })
}

/// `baseline.trunc_ms / ours.trunc_ms`.
pub fn speedup(baseline: &CostReport, ours: &CostReport) -> Result<f64> {
    if ours.trunc_ms == 0.0 {
        return Err(Error::DivideByZero);
    }
    Ok(baseline.trunc_ms / ours.trunc_ms)
}

impl CostReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text rendering: totals, then the per-category breakdown.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("field bits", self.field_bits.to_string()),
            ("strategy", self.strategy.label().to_string()),
            ("truncated scalars", self.truncated_scalars.to_string()),
            ("mul scalars", self.mul_scalars.to_string()),
            ("compare scalars", self.compare_scalars.to_string()),
            ("trunc ms", format!("{:.3}", self.trunc_ms)),
            ("mul ms", format!("{:.3}", self.mul_ms)),
            ("compare ms", format!("{:.3}", self.compare_ms)),
            ("total online ms", format!("{:.3}", self.total_online_ms)),
            ("trunc fraction", format!("{:.4}", self.trunc_fraction)),
            (
                "garbler ms (offline)",
                format!("{:.3}", self.trunc_garbler_ms),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<22}{v:>20}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<12}{:>16}{:>16}{:>10}",
            "category", "scalars", "trunc ms", "share"
        );
        for c in &self.categories {
            let _ = writeln!(
                s,
                "{:<12}{:>16}{:>16.3}{:>9.2}%",
                c.category.label(),
                c.scalars,
                c.trunc_ms,
                100.0 * c.share
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedConfig;
    use crate::truncpass::{lower, PlanEntry};

    fn plan(field_bits: u32, scalars: &[(Category, u64)]) -> TruncPlan {
        TruncPlan {
            strategy: Strategy::Static,
            field_bits,
            base_width: 20,
            frac_bits: 13,
            entries: scalars
                .iter()
                .enumerate()
                .map(|(i, &(category, scalars))| PlanEntry {
                    edge: i,
                    shift: 13,
                    scalars,
                    category,
                })
                .collect(),
        }
    }

    fn empty_graph() -> Graph {
        Graph::new(FixedConfig::default())
    }

    #[test]
    fn shipped_table_values() {
        let t = CostTable::default();
        let e64 = t.entry(64).unwrap();
        let e128 = t.entry(128).unwrap();
        assert_eq!(
            (e64.trunc_evaluator_ms, e64.trunc_garbler_ms),
            (0.099, 0.098)
        );
        assert_eq!(
            (e128.trunc_evaluator_ms, e128.trunc_garbler_ms),
            (0.175, 0.152)
        );
        assert_eq!(e64.mul_ms_per_scalar, 1e-4);
        assert_eq!(e64.compare_ms_per_scalar, e64.trunc_evaluator_ms);
        assert!(matches!(t.entry(32), Err(Error::MissingCostEntry(32))));
        assert_eq!(CostTable::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    #[test]
    fn thousand_scalars() {
        let t = CostTable::default();
        let g = empty_graph();
        let r = estimate(&g, &plan(64, &[(Category::Other, 1000)]), &t).unwrap();
        assert!((r.trunc_ms - 99.0).abs() <= 1e-9);
        let r128 = estimate(&g, &plan(128, &[(Category::Other, 1000)]), &t).unwrap();
        assert!((r128.trunc_ms / r.trunc_ms - 0.175 / 0.099).abs() < 1e-12);
        let none = estimate(&g, &plan(64, &[]), &t).unwrap();
        assert_eq!((none.trunc_ms, none.trunc_fraction), (0.0, 0.0));
        assert!(matches!(speedup(&r, &none), Err(Error::DivideByZero)));
        assert_eq!(speedup(&r, &r).unwrap(), 1.0);
        assert!(matches!(
            estimate(&g, &plan(32, &[]), &t),
            Err(Error::MissingCostEntry(32))
        ));
    }

    #[test]
    fn census_and_fraction() {
        let mut g = empty_graph();
        let a = g.input("a", vec![2, 3], -1.0, 1.0);
        let b = g.input("b", vec![3, 4], -1.0, 1.0);
        let p = g.matmul(a, b, false).unwrap();
        let q = g.mul(p, p).unwrap();
        g.compare(q, p).unwrap();
        assert_eq!(op_census(&g), (24 + 8, 8));
        let t = CostTable::default();
        let r = estimate(&g, &plan(64, &[(Category::MatMulTrunc, 8)]), &t).unwrap();
        let want_mul = (24 + 8) as f64 * 1e-4;
        let cmps = 8.0 * 0.099;
        assert!((r.mul_ms - want_mul).abs() < 1e-15);
        let total = 8.0 * 0.099 + want_mul + cmps;
        assert!((r.trunc_fraction - 8.0 * 0.099 / total).abs() < 1e-12);
    }

    #[test]
    fn chain_speedup_is_two() {
        let cfg = FixedConfig::new(13, 32, 64).unwrap();
        let mut g = Graph::new(cfg);
        let a = g.input("a", vec![4], -1.0, 1.0);
        let b = g.input("b", vec![4], -1.0, 1.0);
        let c = g.input("c", vec![4], -1.0, 1.0);
        let ab = g.mul(a, b).unwrap();
        let abc = g.mul(ab, c).unwrap();
        g.output("y", abc).unwrap();
        let t = CostTable::default();
        let ours = lower(&g, &cfg, Strategy::Static).unwrap();
        let naive = lower(&g, &cfg, Strategy::NaiveEveryOp).unwrap();
        let r_ours = estimate(&ours.graph, &ours.plan, &t).unwrap();
        let r_naive = estimate(&naive.graph, &naive.plan, &t).unwrap();
        assert_eq!(speedup(&r_naive, &r_ours).unwrap(), 2.0);
    }

    #[test]
    fn shares_partition_trunc_time() {
        let t = CostTable::default();
        let r = estimate(
            &empty_graph(),
            &plan(
                64,
                &[
                    (Category::Softmax, 7),
                    (Category::Norm, 3),
                    (Category::Softmax, 5),
                ],
            ),
            &t,
        )
        .unwrap();
        let total: f64 = r.categories.iter().map(|c| c.share).sum();
        assert!((total - 1.0).abs() <= 1e-9);
        assert_eq!(r.categories[0].scalars, 12);
        let table = r.to_table();
        assert!(table.contains("Softmax") && table.contains("trunc fraction"));
        let widths: Vec<usize> = table.lines().take(11).map(str::len).collect();
        assert!(widths.iter().all(|w| *w == widths[0]));
    }
}
