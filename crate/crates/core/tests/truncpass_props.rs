mod common;

use common::{build, configs, step, Step};
use fixtrunc::ir::{validate, OpKind};
use fixtrunc::truncpass::{
    count_truncated_scalars, field_bound_violations, lower, naive_baseline, place_truncations,
    Strategy as Placement,
};
use fixtrunc::{Error, FixedConfig};
use proptest::prelude::*;

proptest! {
    #[test]
    fn rewritten_graph_respects_field(
        (n, k) in configs(),
        f in prop::sample::select(vec![32u32, 64, 128]),
        inputs in 1usize..4,
        dim in 1usize..4,
        steps in prop::collection::vec(step(), 1..25),
    ) {
        let cfg = FixedConfig::new(n, k, f).unwrap();
        let g = build(cfg, inputs, dim, &steps);
        for strategy in [Placement::Static, Placement::NaiveEveryOp] {
            match lower(&g, &cfg, strategy) {
                Ok(low) => {
                    if strategy == Placement::Static {
                        prop_assert!(field_bound_violations(&low.graph).is_empty());
                    }
                    prop_assert!(validate(&low.graph).is_empty());
                    prop_assert!(low.plan.entries.iter().all(|e| e.shift >= 1 && e.scalars >= 1));
                    let again = lower(&g, &cfg, strategy).unwrap();
                    prop_assert_eq!(&again.plan, &low.plan);
                }
                Err(Error::FieldTooSmall { .. } | Error::UntruncatableEdge { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn naive_truncates_every_scale_growing_product(
        inputs in 1usize..4,
        dim in 1usize..4,
        steps in prop::collection::vec(step(), 1..25),
    ) {
        let cfg = FixedConfig::new(8, 16, 128).unwrap();
        let g = build(cfg, inputs, dim, &steps);
        let products = g.count_kind(|op| matches!(op, OpKind::Mul | OpKind::MatMul { .. }));
        let low = naive_baseline(&g, &cfg).unwrap();
        prop_assert_eq!(low.plan.entries.len(), products);
    }
}

/// Fan-out lets the greedy placement spend more truncations than the
/// baseline: the square `m` feeds two sums and a later product, and each
/// of those consumers truncates its own copy.
#[test]
fn fan_out_can_beat_dominance() {
    let cfg = FixedConfig::new(1, 11, 32).unwrap();
    let steps = [
        Step::Mul(0, 0),
        Step::Add(2, 0),
        Step::Add(2, 0),
        Step::Add(0, 0),
        Step::Mul(4, 3),
        Step::Mul(2, 6),
    ];
    let g = build(cfg, 2, 1, &steps);
    let s = place_truncations(&g, &cfg).unwrap();
    let nv = naive_baseline(&g, &cfg).unwrap();
    assert_eq!(count_truncated_scalars(&s.plan), 4);
    assert_eq!(count_truncated_scalars(&nv.plan), 3);
}
