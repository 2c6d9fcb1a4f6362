//! Random graph generation shared by the property tests and the acceptance
//! run.

#![allow(dead_code)]

use fixtrunc::ir::Graph;
use fixtrunc::FixedConfig;
use proptest::prelude::*;

#[derive(Clone, Debug)]
pub enum Step {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
}

pub fn step() -> impl Strategy<Value = Step> {
    (
        0usize..4,
        any::<prop::sample::Index>(),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(k, a, b)| {
            let (a, b) = (a.index(1 << 20), b.index(1 << 20));
            match k {
                0 => Step::Add(a, b),
                1 => Step::Sub(a, b),
                2 => Step::Mul(a, b),
                _ => Step::MatMul(a, b),
            }
        })
}

pub fn build(cfg: FixedConfig, inputs: usize, dim: usize, steps: &[Step]) -> Graph {
    let mut g = Graph::new(cfg);
    let mut edges: Vec<usize> = (0..inputs)
        .map(|i| g.input(&format!("x{i}"), vec![dim, dim], -1.0, 1.0))
        .collect();
    for s in steps {
        let n = edges.len();
        let out = match *s {
            Step::Add(a, b) | Step::Sub(a, b) => {
                let (mut a, mut b) = (edges[a % n], edges[b % n]);
                let (sa, sb) = (g.ann(a).scale, g.ann(b).scale);
                if sa < sb {
                    a = g.rescale_up(a, sb - sa).unwrap();
                } else if sb < sa {
                    b = g.rescale_up(b, sa - sb).unwrap();
                }
                if matches!(s, Step::Add(..)) {
                    g.add(a, b).unwrap()
                } else {
                    g.sub(a, b).unwrap()
                }
            }
            Step::Mul(a, b) => g.mul(edges[a % n], edges[b % n]).unwrap(),
            Step::MatMul(a, b) => g.matmul(edges[a % n], edges[b % n], false).unwrap(),
        };
        edges.push(out);
    }
    let last = *edges.last().unwrap();
    g.output("y", last).unwrap();
    g
}

pub fn configs() -> impl Strategy<Value = (u32, u32)> {
    (2u32..=16).prop_flat_map(|k| (1..k).prop_map(move |n| (n, k)))
}
