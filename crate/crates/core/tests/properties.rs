//! Randomized property tests for the structural and metric layers.

use formula_core::ast::parse_formula;
use formula_core::corpus::{synth_formula, SynthSpec};
use formula_core::eval::{bleu, edit_distance, normalize, EquivalenceRuleSet};
use formula_core::lexer::tokenize;
use formula_core::subformula::sample_subformulas;
use proptest::prelude::*;

fn synth_input() -> impl Strategy<Value = String> {
    (0u32..=6, 1usize..=3, any::<u64>()).prop_map(|(level, lines, seed)| {
        let lines = if level == 0 { 1 } else { lines };
        synth_formula(&SynthSpec {
            target_level: level,
            target_lines: lines,
            max_chars: level as usize + lines + 30,
            rng_seed: seed,
        })
        .expect("feasible spec")
    })
}

proptest! {
    #[test]
    fn lexing_is_lossless(s in "[a-z0-9+\\-= ^_{}]{0,40}") {
        if let Ok(tokens) = tokenize(&s) {
            let joined: String = tokens.iter().map(|t| t.text.as_str()).collect();
            prop_assert_eq!(joined, s);
        }
    }

    #[test]
    fn synthesized_formulas_round_trip(latex in synth_input()) {
        let first = parse_formula(&latex).unwrap();
        let second = parse_formula(&first.serialize()).unwrap();
        prop_assert!(first.structurally_equal(&second));
    }

    #[test]
    fn serialization_preserves_measurements(latex in synth_input()) {
        let first = parse_formula(&latex).unwrap();
        let second = parse_formula(&first.serialize()).unwrap();
        prop_assert_eq!(first.level, second.level);
        prop_assert_eq!(first.char_count, second.char_count);
        prop_assert_eq!(first.line_count, second.line_count);
    }

    #[test]
    fn edit_distance_axioms(a in "[ab^\\\\]{0,10}", b in "[ab^\\\\]{0,10}", c in "[ab^\\\\]{0,10}") {
        prop_assert_eq!(edit_distance(&a, &a), 0);
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert!(edit_distance(&a, &b) <= a.chars().count().max(b.chars().count()));
    }

    #[test]
    fn bleu_stays_in_unit_interval(a in synth_input(), b in synth_input()) {
        let score = bleu(&a, &b);
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert!((bleu(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent(latex in synth_input()) {
        let rules = EquivalenceRuleSet::builtins();
        let once = normalize(&latex, &rules).unwrap();
        prop_assert_eq!(normalize(&once, &rules).unwrap(), once);
    }

    #[test]
    fn coverage_sampling_is_deterministic(latex in synth_input(), seed in any::<u64>()) {
        let ast = parse_formula(&latex).unwrap();
        let a = sample_subformulas(&ast, 4, 0.7, seed);
        let b = sample_subformulas(&ast, 4, 0.7, seed);
        prop_assert_eq!(a.fallback, b.fallback);
        prop_assert_eq!(&a.subs, &b.subs);
        // Sampled parts always re-parse.
        for sub in &a.subs {
            prop_assert!(parse_formula(&sub.latex).is_ok());
        }
    }
}
