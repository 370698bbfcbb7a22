use std::collections::HashMap;

use crate::tokenize::{normalize_token, tokens};

fn bag(text: &str) -> (HashMap<String, usize>, usize) {
    let mut counts = HashMap::new();
    let mut total = 0;
    for tok in tokens(text).filter_map(normalize_token) {
        *counts.entry(tok).or_insert(0) += 1;
        total += 1;
    }
    (counts, total)
}

/// Harmonic mean of unigram precision and recall between a candidate reply
/// and the reference reply, over case-folded, punctuation-stripped tokens.
pub fn f1_unigram_overlap(candidate: &str, reference: &str) -> f64 {
    let (cand, n_cand) = bag(candidate);
    let (reference, n_ref) = bag(reference);
    if n_cand == 0 || n_ref == 0 {
        return 0.0;
    }
    let overlap: usize = cand
        .iter()
        .map(|(tok, &c)| c.min(reference.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = o/nc and R = o/nr reduces to 2o/(nc+nr).
    2.0 * overlap as f64 / (n_cand + n_ref) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(f1_unigram_overlap("the cat sat", "the cat sat"), 1.0);
        assert_eq!(f1_unigram_overlap("abc", "xyz"), 0.0);
        assert_eq!(f1_unigram_overlap("the cat", "the cat sat"), 0.8);
        assert_eq!(f1_unigram_overlap("", "the"), 0.0);
        assert_eq!(f1_unigram_overlap("The CAT!", "the cat"), 1.0);
    }

    #[test]
    fn multiset_intersection() {
        // candidate has "a" twice, reference once: overlap 1 of 2 and 1 of 1
        let f = f1_unigram_overlap("a a", "a");
        let (p, r) = (0.5, 1.0);
        assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in "[a-cA-C ,.!]{0,30}", b in "[a-cA-C ,.!]{0,30}") {
            let f = f1_unigram_overlap(&a, &b);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f, f1_unigram_overlap(&b, &a));
            let (ba, na) = bag(&a);
            let (bb, _) = bag(&b);
            prop_assert_eq!(f == 1.0, na > 0 && ba == bb);
        }
    }
}
