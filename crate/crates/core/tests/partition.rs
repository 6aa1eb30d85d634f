//! Fuzzed structured outputs through parse, token alignment, scoring and
//! routing.

mod common;

use common::fuzz::{check_partition, equal_field_gap, group_strategy, output, routing_error, Variant};
use grca::schema::{parse_text, FieldStatus, GeomField};
use grca::spans::TokenizerMode;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn partitions_are_disjoint_and_covering(out in output()) {
        for mode in [TokenizerMode::Char, TokenizerMode::DigitBoundary] {
            check_partition(&out.text, mode)?;
        }
        if !out.truncated {
            let parsed = parse_text(&out.text);
            for (f, v) in GeomField::ALL.iter().zip(&out.variants) {
                // Bins past the range still parse; they are scored as out of range.
                let want = if let Variant::Ok(_) = v { FieldStatus::Ok } else { v.expected() };
                prop_assert_eq!(parsed.status(*f), want, "{}", f.name());
            }
        }
    }

    #[test]
    fn arbitrary_text_aligns(text in "\\PC{0,120}") {
        check_partition(&text, TokenizerMode::Char)?;
        check_partition(&text, TokenizerMode::DigitBoundary)?;
    }
}

proptest! {
    #[test]
    fn routed_tokens_carry_their_owner_advantage(group in group_strategy(), lambda in 0.0..=1.0f64) {
        prop_assert!(routing_error(&group, lambda) <= 1e-12);
    }

    #[test]
    fn equal_field_rewards_make_routing_a_broadcast(group in group_strategy()) {
        prop_assert!(equal_field_gap(&group) <= 1e-12);
    }
}
