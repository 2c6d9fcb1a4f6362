//! The pipeline behind each CLI subcommand. Every function returns data;
//! writing files and choosing exit codes is left to the binary.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{estimate, speedup, CostReport, CostTable};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, random_inputs, run_reference, EvalReport, Inputs};
use crate::fixedpoint::FixedConfig;
use crate::ir::{Category, EdgeId, Graph};
use crate::kernels::{
    build_exp, build_model, build_reciprocal, build_rsqrt, ApproxConfig, ModelConfig,
};
use crate::truncpass::{count_truncated_scalars, lower, Lowered, Strategy, TruncPlan};

/// Everything a command needs, already loaded.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub fixed: FixedConfig,
    pub strategy: Strategy,
    pub cost_table: CostTable,
    pub seed: u64,
    pub compare_naive: bool,
}

impl RunConfig {
    pub fn new(model: ModelConfig) -> Self {
        RunConfig {
            model,
            fixed: FixedConfig::default(),
            strategy: Strategy::Static,
            cost_table: CostTable::default(),
            seed: 0,
            compare_naive: false,
        }
    }

    fn build(&self) -> Result<Graph> {
        build_model(&self.model, self.fixed)
    }

    fn lower(&self, g: &Graph, strategy: Strategy) -> Result<Lowered> {
        lower(g, &self.fixed, strategy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub strategy: Strategy,
    pub truncation_points: usize,
    pub truncated_scalars: u64,
    pub categories: Vec<(Category, u64)>,
}

impl PlanSummary {
    fn of(plan: &TruncPlan) -> Self {
        PlanSummary {
            strategy: plan.strategy,
            truncation_points: plan.entries.len(),
            truncated_scalars: count_truncated_scalars(plan),
            categories: plan.scalars_by_category(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSummary {
    pub model: String,
    pub field_bits: u32,
    pub frac_bits: u32,
    pub base_width: u32,
    pub nodes: usize,
    pub plans: Vec<PlanSummary>,
}

impl AnalyzeSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {}  F={} n={} k={}  nodes {}",
            self.model, self.field_bits, self.frac_bits, self.base_width, self.nodes
        );
        let _ = write!(s, "{:<12}{:>10}{:>18}", "strategy", "points", "scalars");
        for c in Category::ALL {
            let _ = write!(s, "{:>16}", c.label());
        }
        let _ = writeln!(s);
        for p in &self.plans {
            let _ = write!(
                s,
                "{:<12}{:>10}{:>18}",
                p.strategy.label(),
                p.truncation_points,
                p.truncated_scalars
            );
            for (_, n) in &p.categories {
                let _ = write!(s, "{n:>16}");
            }
            let _ = writeln!(s);
        }
        s
    }
}

pub struct Analysis {
    pub summary: AnalyzeSummary,
    pub plan: TruncPlan,
}

/// Static analysis only; no input data is involved.
pub fn cmd_analyze(rc: &RunConfig) -> Result<Analysis> {
    let g = rc.build()?;
    let low = rc.lower(&g, rc.strategy)?;
    let mut plans = vec![PlanSummary::of(&low.plan)];
    if rc.compare_naive && rc.strategy != Strategy::NaiveEveryOp {
        plans.push(PlanSummary::of(&rc.lower(&g, Strategy::NaiveEveryOp)?.plan));
    }
    Ok(Analysis {
        summary: AnalyzeSummary {
            model: rc.model.name.clone(),
            field_bits: rc.fixed.field_bits,
            frac_bits: rc.fixed.frac_bits,
            base_width: rc.fixed.base_width,
            nodes: g.nodes().len(),
            plans,
        },
        plan: low.plan,
    })
}

/// Fixed-point and reference execution. Inputs not given are drawn from
/// the declared ranges with `rc.seed`.
pub fn cmd_run(rc: &RunConfig, inputs: Option<&Inputs>) -> Result<EvalReport> {
    let g = rc.build()?;
    let low = rc.lower(&g, rc.strategy)?;
    let mut all = random_inputs(&g, rc.seed);
    if let Some(given) = inputs {
        for (name, values) in given {
            if !all.contains_key(name) {
                return Err(Error::Input(format!("graph has no input named {name}")));
            }
            all.insert(name.clone(), values.clone());
        }
    }
    evaluate(&low.graph, &all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostOutput {
    pub model: String,
    pub reports: Vec<CostReport>,
    /// Naive over static truncation time, per field size.
    pub speedups: Vec<(u32, f64)>,
}

impl CostOutput {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            s.push_str(&r.to_table());
            s.push('\n');
        }
        for (f, x) in &self.speedups {
            let _ = writeln!(
                s,
                "{:<22}{:>20}",
                format!("speedup F={f}"),
                format!("{x:.4}")
            );
        }
        s
    }
}

/// Cost of the chosen strategy at each field size in `fields` (the
/// configured one when empty), plus the naive baseline when requested.
pub fn cmd_cost(rc: &RunConfig, fields: &[u32]) -> Result<CostOutput> {
    let fields = if fields.is_empty() {
        vec![rc.fixed.field_bits]
    } else {
        fields.to_vec()
    };
    let mut reports = Vec::new();
    let mut speedups = Vec::new();
    for f in fields {
        let mut one = rc.clone();
        one.fixed = rc.fixed.with_field_bits(f);
        one.fixed.validate()?;
        one.cost_table.entry(f)?;
        let g = one.build()?;
        let low = one.lower(&g, one.strategy)?;
        let ours = estimate(&low.graph, &low.plan, &one.cost_table)?;
        if one.compare_naive && one.strategy != Strategy::NaiveEveryOp {
            let naive = one.lower(&g, Strategy::NaiveEveryOp)?;
            let base = estimate(&naive.graph, &naive.plan, &one.cost_table)?;
            speedups.push((f, speedup(&base, &ours)?));
            reports.push(ours);
            reports.push(base);
        } else {
            reports.push(ours);
        }
    }
    Ok(CostOutput {
        model: rc.model.name.clone(),
        reports,
        speedups,
    })
}

/// One axis of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    RsqrtIters(Vec<u32>),
    RecipIters(Vec<u32>),
    ExpSquarings(Vec<u32>),
    FracBits(Vec<u32>),
    SeqGen {
        seq_len: Vec<usize>,
        gen_len: Vec<usize>,
    },
}

fn parse_list<T: std::str::FromStr + Copy + TryFrom<u64>>(s: &str) -> Result<Vec<T>> {
    let bad = || Error::Config(format!("bad sweep values {s:?}"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let raw: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if raw.is_empty() {
        return Err(bad());
    }
    raw.into_iter()
        .map(|v| T::try_from(v).map_err(|_| bad()))
        .collect()
}

impl SweepAxis {
    /// `axis=a..b` (inclusive) or `axis=v1,v2,...`; the sequence axis is
    /// `seq_len=...;gen_len=...` with either part optional.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut seq = None;
        let mut gen = None;
        for part in spec.split(';') {
            let (axis, values) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("sweep spec {part:?} is not axis=values")))?;
            let axis = axis.trim();
            let single = |a: Result<Vec<u32>>, f: fn(Vec<u32>) -> SweepAxis| -> Result<SweepAxis> {
                if spec.contains(';') {
                    return Err(Error::Config(format!("{axis} cannot be combined")));
                }
                Ok(f(a?))
            };
            match axis {
                "rsqrt_iters" => return single(parse_list(values), SweepAxis::RsqrtIters),
                "recip_iters" => return single(parse_list(values), SweepAxis::RecipIters),
                "exp_squarings" => return single(parse_list(values), SweepAxis::ExpSquarings),
                "frac_bits" => return single(parse_list(values), SweepAxis::FracBits),
                "seq_len" => seq = Some(parse_list(values)?),
                "gen_len" => gen = Some(parse_list(values)?),
                other => return Err(Error::UnknownAxis(other.to_string())),
            }
        }
        Ok(SweepAxis::SeqGen {
            seq_len: seq.unwrap_or_default(),
            gen_len: gen.unwrap_or_default(),
        })
    }
}

#[derive(Serialize)]
struct KernelRow {
    input: f64,
    approx: f64,
    truth: f64,
    abs_err: f64,
    iters: u32,
}

#[derive(Serialize)]
struct PrecisionRow {
    frac_bits: u32,
    base_width: u32,
    max_abs_err: f64,
    mean_abs_err: f64,
    overflow_count: u64,
    range_violations: usize,
    truncated_scalars: u64,
}

#[derive(Serialize)]
struct LengthRow {
    seq_len: usize,
    gen_len: usize,
    static_scalars: u64,
    naive_scalars: u64,
    speedup: f64,
    static_trunc_fraction: f64,
}

/// Inputs `0.1, 0.2, ..., 10.0`.
pub fn positive_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 10.0).collect()
}

/// Inputs `-5.0, -4.9, ..., 5.0`.
pub fn symmetric_grid() -> Vec<f64> {
    (-50..=50).map(|i| i as f64 / 10.0).collect()
}

type UnaryBuilder = fn(&mut Graph, EdgeId, &ApproxConfig) -> Result<EdgeId>;

/// A unary kernel evaluated in real arithmetic over `xs`.
pub fn kernel_reference(
    build: UnaryBuilder,
    approx: &ApproxConfig,
    fixed: FixedConfig,
    xs: &[f64],
) -> Result<Vec<f64>> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut g = Graph::new(fixed);
    let x = g.input("x", vec![xs.len(), 1], lo, hi);
    let y = build(&mut g, x, approx)?;
    g.output("y", y)?;
    let inputs: Inputs = [("x".to_string(), xs.to_vec())].into_iter().collect();
    Ok(run_reference(&g, &inputs)?.remove(0).values)
}

fn kernel_sweep(rc: &RunConfig, iters: &[u32], which: &SweepAxis) -> Result<Vec<KernelRow>> {
    let (build, truth, xs): (UnaryBuilder, fn(f64) -> f64, Vec<f64>) = match which {
        SweepAxis::RsqrtIters(_) => (build_rsqrt, |x| 1.0 / x.sqrt(), positive_grid()),
        SweepAxis::RecipIters(_) => (build_reciprocal, |x| 1.0 / x, positive_grid()),
        _ => (build_exp, f64::exp, symmetric_grid()),
    };
    let per_point: Vec<Vec<KernelRow>> = iters
        .par_iter()
        .map(|&it| {
            let mut a = rc.model.approx;
            match which {
                SweepAxis::RsqrtIters(_) => a.rsqrt_iters = it,
                SweepAxis::RecipIters(_) => a.recip_iters = it,
                _ => a.exp_squarings = it,
            }
            a.validate()?;
            let ys = kernel_reference(build, &a, rc.fixed, &xs)?;
            Ok(xs
                .iter()
                .zip(ys)
                .map(|(&x, y)| {
                    let t = truth(x);
                    KernelRow {
                        input: x,
                        approx: y,
                        truth: t,
                        abs_err: (y - t).abs(),
                        iters: it,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

fn precision_sweep(rc: &RunConfig, bits: &[u32]) -> Result<Vec<PrecisionRow>> {
    let headroom = rc.fixed.base_width.saturating_sub(rc.fixed.frac_bits);
    bits.par_iter()
        .map(|&n| {
            let mut one = rc.clone();
            one.fixed = FixedConfig::new(n, n + headroom, rc.fixed.field_bits)?;
            let g = one.build()?;
            let low = one.lower(&g, one.strategy)?;
            let inputs = random_inputs(&g, one.seed);
            let rep = evaluate(&low.graph, &inputs)?;
            Ok(PrecisionRow {
                frac_bits: n,
                base_width: n + headroom,
                max_abs_err: rep.max_abs_error,
                mean_abs_err: rep.mean_abs_error,
                overflow_count: rep.overflow_count,
                range_violations: rep.range_violations.len(),
                truncated_scalars: count_truncated_scalars(&low.plan),
            })
        })
        .collect()
}

fn length_sweep(rc: &RunConfig, seq: &[usize], gen: &[usize]) -> Result<Vec<LengthRow>> {
    let seq = if seq.is_empty() {
        vec![rc.model.seq_len]
    } else {
        seq.to_vec()
    };
    let gen = if gen.is_empty() {
        vec![rc.model.gen_len]
    } else {
        gen.to_vec()
    };
    let grid: Vec<(usize, usize)> = gen
        .iter()
        .flat_map(|&t| seq.iter().map(move |&s| (s, t)))
        .collect();
    grid.par_iter()
        .map(|&(s, t)| {
            let mut one = rc.clone();
            one.model.seq_len = s;
            one.model.gen_len = t;
            let g = one.build()?;
            let ours = one.lower(&g, Strategy::Static)?;
            let naive = one.lower(&g, Strategy::NaiveEveryOp)?;
            let r_ours = estimate(&ours.graph, &ours.plan, &one.cost_table)?;
            let r_naive = estimate(&naive.graph, &naive.plan, &one.cost_table)?;
            Ok(LengthRow {
                seq_len: s,
                gen_len: t,
                static_scalars: r_ours.truncated_scalars,
                naive_scalars: r_naive.truncated_scalars,
                speedup: speedup(&r_naive, &r_ours)?,
                static_trunc_fraction: r_ours.trunc_fraction,
            })
        })
        .collect()
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Run the pipeline at every grid point of `axis`; rows come out in grid
/// order whatever order the points finish in.
///
/// Iteration axes produce `input,approx,truth,abs_err,iters` rows from the
/// real-arithmetic reference over a fixed input grid.
pub fn cmd_sweep(rc: &RunConfig, axis: &SweepAxis) -> Result<String> {
    match axis {
        SweepAxis::RsqrtIters(v) | SweepAxis::RecipIters(v) | SweepAxis::ExpSquarings(v) => {
            to_csv(&kernel_sweep(rc, v, axis)?)
        }
        SweepAxis::FracBits(v) => to_csv(&precision_sweep(rc, v)?),
        SweepAxis::SeqGen { seq_len, gen_len } => to_csv(&length_sweep(rc, seq_len, gen_len)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Activation, Norm};

    fn toy() -> RunConfig {
        RunConfig::new(ModelConfig {
            name: "toy".into(),
            source: String::new(),
            activation: Activation::Silu,
            norm: Norm::Rmsnorm,
            d_model: 8,
            n_heads: 2,
            d_ffn: 16,
            n_layers: 1,
            seq_len: 4,
            gen_len: 1,
            input_range: 4.0,
            approx: ApproxConfig::default(),
        })
    }

    #[test]
    fn parse_axes() {
        assert_eq!(
            SweepAxis::parse("rsqrt_iters=10..12").unwrap(),
            SweepAxis::RsqrtIters(vec![10, 11, 12])
        );
        assert_eq!(
            SweepAxis::parse("frac_bits=10,13").unwrap(),
            SweepAxis::FracBits(vec![10, 13])
        );
        assert_eq!(
            SweepAxis::parse("seq_len=4,8;gen_len=1..2").unwrap(),
            SweepAxis::SeqGen {
                seq_len: vec![4, 8],
                gen_len: vec![1, 2]
            }
        );
        assert!(
            matches!(SweepAxis::parse("depth=1..3"), Err(Error::UnknownAxis(a)) if a == "depth")
        );
        assert!(SweepAxis::parse("rsqrt_iters=5..2").is_err());
        assert!(SweepAxis::parse("rsqrt_iters").is_err());
        assert!(SweepAxis::parse("rsqrt_iters=3;gen_len=1").is_err());
    }

    #[test]
    fn analyze_reports_both_strategies() {
        let mut rc = toy();
        rc.compare_naive = true;
        let a = cmd_analyze(&rc).unwrap();
        assert_eq!(a.summary.plans.len(), 2);
        assert!(a.summary.plans[0].truncated_scalars < a.summary.plans[1].truncated_scalars);
        assert_eq!(
            a.summary.plans[0].truncated_scalars,
            count_truncated_scalars(&a.plan)
        );
        assert!(a.summary.to_table().contains("naive"));
    }

    #[test]
    fn analyze_field_too_small() {
        let mut rc = toy();
        rc.fixed = FixedConfig::new(13, 20, 32).unwrap();
        assert!(matches!(cmd_analyze(&rc), Err(Error::FieldTooSmall { .. })));
    }

    #[test]
    fn run_is_clean_and_deterministic() {
        let rc = toy();
        let a = cmd_run(&rc, None).unwrap();
        assert_eq!(a.overflow_count, 0);
        assert!(a.max_abs_error < 0.1, "{}", a.max_abs_error);
        let b = cmd_run(&rc, None).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let bad: Inputs = [("nope".to_string(), vec![0.0])].into_iter().collect();
        assert!(matches!(cmd_run(&rc, Some(&bad)), Err(Error::Input(_))));
    }

    #[test]
    fn cost_with_naive_and_two_fields() {
        let mut rc = toy();
        rc.compare_naive = true;
        let out = cmd_cost(&rc, &[64, 128]).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert!(out.speedups.iter().all(|(_, s)| *s > 1.0));
        assert!(out.to_table().contains("speedup F=128"));
        assert!(matches!(
            cmd_cost(&rc, &[96]),
            Err(Error::MissingCostEntry(96))
        ));
    }

    #[test]
    fn kernel_sweep_csv() {
        let rc = toy();
        let csv = cmd_sweep(&rc, &SweepAxis::RsqrtIters(vec![12, 14])).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("input,approx,truth,abs_err,iters"));
        assert_eq!(csv.lines().count(), 1 + 200);
        let row: Vec<&str> = csv.lines().nth(10).unwrap().split(',').collect();
        assert_eq!(row[0], "1.0");
        assert_eq!(row[4], "12");
        assert_eq!(
            csv,
            cmd_sweep(&rc, &SweepAxis::RsqrtIters(vec![12, 14])).unwrap()
        );
    }

    #[test]
    fn length_sweep_rows_in_grid_order() {
        let rc = toy();
        let axis = SweepAxis::parse("seq_len=2,4;gen_len=1,2").unwrap();
        let csv = cmd_sweep(&rc, &axis).unwrap();
        let keys: Vec<String> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(keys, vec!["2,1", "4,1", "2,2", "4,2"]);
    }
}
