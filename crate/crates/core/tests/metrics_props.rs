mod common;

use common::{oracle_f1, oracle_overlap};
use proptest::prelude::*;
use revprompt::engine::{best_index, Candidate, ScoreBreakdown};
use revprompt::text_metrics::{
    combined_score, cosine_similarity, rouge1, token_sequence, EmbeddingVector, ScoreVariant,
};

const VOCAB: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "a", "dog", "rug", "ran", "fast", "x1", "42",
];

fn word_seq(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(VOCAB).prop_map(str::to_string), 0..max)
}

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..max)
}

fn variant() -> impl Strategy<Value = ScoreVariant> {
    prop::sample::select(ScoreVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rouge_matches_brute_force(c in word_seq(25), r in word_seq(25)) {
        let (cs, rs) = (c.join(" "), r.join(" "));
        let got = rouge1(&cs, &rs);
        prop_assert!((got.f1 - oracle_f1(&cs, &rs)).abs() < 1e-12);
        let overlap = oracle_overlap(&c, &r) as f64;
        if !c.is_empty() {
            prop_assert!((got.precision - overlap / c.len() as f64).abs() < 1e-12);
        }
        if !r.is_empty() {
            prop_assert!((got.recall - overlap / r.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rouge_f1_is_symmetric_and_bounded(c in word_seq(20), r in word_seq(20)) {
        let (cs, rs) = (c.join(" "), r.join(" "));
        let ab = rouge1(&cs, &rs);
        let ba = rouge1(&rs, &cs);
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
        prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
        for v in [ab.precision, ab.recall, ab.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn rouge_of_text_with_itself_is_one(c in word_seq(20)) {
        prop_assume!(!c.is_empty());
        let s = c.join(" ");
        prop_assert_eq!(rouge1(&s, &s).f1, 1.0);
    }

    #[test]
    fn rouge_ignores_token_order(c in word_seq(20), r in word_seq(20), seed in any::<u64>()) {
        let mut shuffled = c.clone();
        let n = shuffled.len();
        if n > 1 {
            shuffled.rotate_left((seed % n as u64) as usize);
        }
        prop_assert_eq!(rouge1(&c.join(" "), &r.join(" ")), rouge1(&shuffled.join(" "), &r.join(" ")));
    }

    #[test]
    fn tokens_are_lowercase_and_separator_free(text in "\\PC{0,60}") {
        for t in token_sequence(&text) {
            prop_assert!(!t.is_empty());
            let ok = t.chars().all(|c| c.is_alphanumeric() || c == '\'' || c == '\u{2019}');
            prop_assert!(ok, "bad token {:?}", t);
            prop_assert!(t.chars().next().unwrap().is_alphanumeric());
            prop_assert!(t.chars().last().unwrap().is_alphanumeric());
            let lower: String = t.chars().flat_map(char::to_lowercase).collect();
            prop_assert_eq!(&t, &lower);
        }
    }

    #[test]
    fn tokenizing_joined_tokens_is_stable(text in "\\PC{0,60}") {
        let once = token_sequence(&text);
        prop_assert_eq!(token_sequence(&once.join(" ")), once);
    }

    #[test]
    fn combined_matches_formula_and_is_bounded(s in scores(12)) {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let max = s.iter().cloned().fold(0.0, f64::max);
        let min = s.iter().cloned().fold(1.0, f64::min);
        let ga = combined_score(&s, ScoreVariant::MeanMax).unwrap();
        let gam = combined_score(&s, ScoreVariant::Max).unwrap();
        let gaa = combined_score(&s, ScoreVariant::Mean).unwrap();
        prop_assert!((ga - (mean + max) / 2.0).abs() < 1e-12);
        prop_assert_eq!(gam, max);
        prop_assert!((gaa - mean).abs() < 1e-12);
        prop_assert!(min - 1e-12 <= gaa && gaa <= ga && ga <= gam);
        prop_assert!((0.0..=1.0).contains(&ga));
    }

    #[test]
    fn combined_is_permutation_invariant(s in scores(12), v in variant()) {
        let mut r = s.clone();
        r.reverse();
        let a = combined_score(&s, v).unwrap();
        let b = combined_score(&r, v).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(
        pair in (1usize..32).prop_flat_map(|d| (
            prop::collection::vec(-100.0f64..100.0, d),
            prop::collection::vec(-100.0f64..100.0, d),
        ))
    ) {
        let (a, b) = pair;
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let ea = EmbeddingVector::new(a, "m").unwrap();
        let eb = EmbeddingVector::new(b, "m").unwrap();
        let ab = cosine_similarity(&ea, &eb).unwrap();
        let ba = cosine_similarity(&eb, &ea).unwrap();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((cosine_similarity(&ea, &ea).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_survives_positive_scaling(
        s in prop::collection::vec(0.0f64..=1.0, 1..10),
        dup in any::<prop::sample::Index>(),
        exp in -8i32..8,
    ) {
        let mut s = s;
        let copy = s[dup.index(s.len())];
        s.push(copy);
        let make = |vals: &[f64]| -> Vec<Candidate> {
            vals.iter().map(|&v| {
                let mut c = Candidate::new("c");
                c.breakdown = Some(ScoreBreakdown { per_answer: vec![v], mean: v, max: v, combined: v });
                c
            }).collect()
        };
        // Power-of-two factors scale exactly, so ties stay ties.
        let scaled: Vec<f64> = s.iter().map(|v| v * 2f64.powi(exp)).collect();
        prop_assert_eq!(best_index(&make(&s)), best_index(&make(&scaled)));
    }
}
