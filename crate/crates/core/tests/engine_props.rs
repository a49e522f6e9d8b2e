mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn step_order_does_not_matter(inst in instance()) {
        check_order_independence(&inst)?;
    }

    #[test]
    fn sets_only_grow(inst in instance()) {
        check_monotone(&inst)?;
    }

    #[test]
    fn packets_and_channels_add_up(inst in instance()) {
        check_accounting(&inst)?;
    }

    #[test]
    fn trace_replay_explains_every_set(inst in instance()) {
        check_conservation(&inst)?;
    }

    #[test]
    fn subset_tracking_is_a_restriction(inst in instance(), pick in any::<u32>()) {
        check_subset(&inst, pick & ((1 << inst.n) - 1))?;
    }
}

#[test]
fn walk_tokens_are_conserved() {
    for seed in 0..3 {
        check_walk_conservation(512, seed).unwrap();
    }
}
