use proptest::prelude::*;

use super::*;

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn corpus<'a>(pairs: &[(&'a str, &[&'a str])]) -> (Vec<Vec<&'a str>>, Vec<Vec<Vec<&'a str>>>) {
    let hyps = pairs.iter().map(|(h, _)| toks(h)).collect();
    let refs = pairs
        .iter()
        .map(|(_, rs)| rs.iter().map(|r| toks(r)).collect())
        .collect();
    (hyps, refs)
}

fn bleu(pairs: &[(&str, &[&str])]) -> f64 {
    let (h, r) = corpus(pairs);
    corpus_bleu(&h, &r).unwrap()
}

#[test]
fn retrieval_worked_examples() {
    let r = retrieval_report(&[1, 1, 1]).unwrap();
    assert_eq!(
        (r.acc_at_1, r.median_rank, r.rank_std_forced, r.rank_std_real),
        (1.0, 1.0, 0.0, 0.0)
    );

    let r = retrieval_report(&[1, 101]).unwrap();
    assert_eq!(r.rank_std_forced, 499.5);
    assert_eq!(r.rank_std_real, 50.0);

    let r = retrieval_report(&[5, 50, 500]).unwrap();
    assert_eq!(r.acc_at_1, 0.0);
    assert_eq!(r.acc_at_10, 1.0 / 3.0);
    assert_eq!(r.acc_at_100, 2.0 / 3.0);
    assert_eq!(r.median_rank, 50.0);

    assert_eq!(retrieval_report(&[10, 1, 3, 2]).unwrap().median_rank, 2.5);
    assert!(retrieval_report(&[]).is_err());
    assert!(retrieval_report(&[0, 3]).is_err());
}

#[test]
fn bleu_identity_and_disjoint() {
    assert_eq!(bleu(&[("a b c d e", &["a b c d e"]), ("x y z w", &["x y z w"])]), 1.0);
    assert_eq!(bleu(&[("a b c d e", &["f g h i j"])]), 0.0);
}

#[test]
fn bleu_short_hypothesis_components() {
    let (h, r) = corpus(&[("the cat sat", &["the cat sat down"])]);
    let st = bleu_stats(&h, &r).unwrap();
    assert_eq!(st.precision(1), 1.0);
    assert_eq!(st.precision(2), 1.0);
    assert_eq!(st.precision(3), 1.0);
    assert_eq!(st.matches[3], 0);
    assert_eq!(st.brevity_penalty(), (1.0f64 - 4.0 / 3.0).exp());
    assert_eq!(st.bleu(), 0.0);
}

#[test]
fn bleu_hand_computed_fixtures() {
    // p = 5/6, 3/5, 2/4, 1/3; BP = 1.
    let got = bleu(&[("a b c d e f", &["a b c d x f"])]);
    assert!((got - (1.0f64 / 12.0).powf(0.25)).abs() < 1e-12);

    // Clipping against the per-reference maximum; closest reference length
    // is the exact match (5). p = 4/5, 3/4, 2/3, 1/2.
    let got = bleu(&[("a a a b c", &["a a b c d e f", "x a a b c"])]);
    assert!((got - 0.2f64.powf(0.25)).abs() < 1e-12);

    // Pooling with a brevity penalty: c = 10, r = 14.
    let got = bleu(&[("a b c d e f", &["a b c d x f"]), ("a b c d", &["a b c d e f g h"])]);
    let want = (-0.4f64).exp() * (0.9f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
    assert!((got - want).abs() < 1e-12);

    // A two-token instance adds 1 to the 3- and 4-gram denominators.
    let got = bleu(&[("a b c d e f", &["a b c d x f"]), ("a b", &["a b"])]);
    let want = (7.0f64 / 8.0 * (4.0 / 6.0) * (2.0 / 5.0) * (1.0 / 4.0)).powf(0.25);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn bleu_closest_reference_prefers_shorter_on_ties() {
    let (h, r) = corpus(&[("a b c d e", &["a b c d e f g", "a b c"])]);
    assert_eq!(bleu_stats(&h, &r).unwrap().ref_len, 3);
}

#[test]
fn bleu_rejects_bad_input() {
    let empty: Vec<Vec<&str>> = vec![];
    assert!(corpus_bleu(&empty, &[]).is_err());
    assert!(corpus_bleu(&[toks("a")], &[vec![]]).is_err());
}

#[test]
fn rouge_worked_examples() {
    assert_eq!(rouge_l_f1(&toks("a b c d"), &toks("a c d e")).unwrap(), 0.75);
    assert_eq!(rouge_l_f1(&toks("a b c"), &toks("a b c")).unwrap(), 1.0);
    assert_eq!(rouge_l_f1(&toks("a b"), &toks("c d")).unwrap(), 0.0);
    let f = rouge_l_f1(&toks("a b"), &toks("a x b y")).unwrap();
    assert!((f - 2.0 / 3.0).abs() < 1e-15);
    assert!(rouge_l_f1::<&str>(&[], &toks("a")).is_err());
    let (h, r) = corpus(&[("a b c d", &["x y", "a c d e"]), ("p q", &["p q"])]);
    assert_eq!(corpus_rouge_l(&h, &r).unwrap(), (0.75 + 1.0) / 2.0);
}

#[test]
fn report_tables_name_their_columns() {
    let t = retrieval_report(&[1, 2]).unwrap().to_table();
    assert!(t.contains("acc@10") && t.contains("std(forced)"));
    let g = GenerationReport {
        corpus_bleu: 0.5,
        rouge_l_f1: 0.25,
        n: 3,
    };
    assert!(g.to_table().contains("ROUGE-L"));
}

fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    // Longest subsequence of `a` (by bitmask) that is also one of `b`.
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

proptest! {
    #[test]
    fn acc_is_monotone_and_forced_std_matches_when_small(ranks in prop::collection::vec(1usize..300, 1..50)) {
        let r = retrieval_report(&ranks).unwrap();
        prop_assert!(0.0 <= r.acc_at_1 && r.acc_at_1 <= r.acc_at_10 && r.acc_at_10 <= r.acc_at_100 && r.acc_at_100 <= 1.0);
        let small: Vec<usize> = ranks.iter().map(|&x| x.min(100)).collect();
        let s = retrieval_report(&small).unwrap();
        prop_assert_eq!(s.rank_std_forced, s.rank_std_real);
    }

    #[test]
    fn bleu_is_order_invariant(seq in prop::collection::vec((prop::collection::vec(0u8..4, 0..9), prop::collection::vec(0u8..4, 1..9)), 1..6)) {
        let hyps: Vec<Vec<u8>> = seq.iter().map(|(h, _)| h.clone()).collect();
        let refs: Vec<Vec<Vec<u8>>> = seq.iter().map(|(_, r)| vec![r.clone()]).collect();
        let mut rh = hyps.clone();
        let mut rr = refs.clone();
        rh.reverse();
        rr.reverse();
        prop_assert_eq!(corpus_bleu(&hyps, &refs).unwrap(), corpus_bleu(&rh, &rr).unwrap());
    }

    #[test]
    fn rouge_matches_brute_force_and_is_symmetric(a in prop::collection::vec(0u8..3, 1..9), b in prop::collection::vec(0u8..3, 1..9)) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b));
        let f = rouge_l_f1(&a, &b).unwrap();
        let g = rouge_l_f1(&b, &a).unwrap();
        prop_assert!((f - g).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
