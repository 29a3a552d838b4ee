//! LCS-based ROUGE-L over lowercased whitespace tokens.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore<T> {
    pub precision: T,
    pub recall: T,
    /// Balanced F-measure (β = 1).
    pub f: T,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Length of the longest common subsequence, O(n·m) time and O(m) space.
pub fn lcs_len<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub fn rouge_l<T: Scalar>(candidate: &str, reference: &str) -> RougeScore<T> {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let lcs = lcs_len(&c, &r) as u64;
    let precision = T::ratio(lcs, c.len() as u64);
    let recall = T::ratio(lcs, r.len() as u64);
    let sum = precision + recall;
    let f = if sum > T::zero() {
        (T::from_count(2) * precision * recall) / sum
    } else {
        T::zero()
    };
    RougeScore {
        precision,
        recall,
        f,
    }
}

#[cfg(test)]
mod tests {
    use num_rational::Ratio;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(rouge_l::<f64>("Open the menu", "open the MENU").f, 1.0);
        assert_eq!(rouge_l::<f64>("alpha beta", "gamma delta").f, 0.0);
        let s = rouge_l::<Ratio<i64>>("the cat sat", "the cat ran fast");
        assert_eq!(s.precision, Ratio::new(2, 3));
        assert_eq!(s.recall, Ratio::new(1, 2));
        assert_eq!(s.f, Ratio::new(4, 7));
        assert!((rouge_l::<f64>("the cat sat", "the cat ran fast").f - 0.571).abs() < 1e-3);
        assert_eq!(rouge_l::<f64>("", "x").f, 0.0);
    }

    #[test]
    fn lcs_is_not_substring() {
        let a = tokenize("a b c d");
        let b = tokenize("a x c y d");
        assert_eq!(lcs_len(&a, &b), 3);
    }

    proptest! {
        #[test]
        fn swap_exchanges_precision_and_recall(a in "[a-c ]{0,30}", b in "[a-c ]{0,30}") {
            let ab = rouge_l::<Ratio<i64>>(&a, &b);
            let ba = rouge_l::<Ratio<i64>>(&b, &a);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            prop_assert_eq!(ab.f, ba.f);
            prop_assert!(ab.f >= Ratio::from_integer(0) && ab.f <= Ratio::from_integer(1));
        }
    }
}
