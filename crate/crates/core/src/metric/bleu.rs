//! Sentence-level BLEU and its keyword-weighted variant.
//!
//! Modified n-gram precision is clipped against the reference counts. An
//! order whose clipped match mass is zero is smoothed to `1 / (total + 1)`,
//! so a candidate with no n-grams of some order scores 1 for that order.
//! The brevity penalty is `exp(1 - r / c)` when the candidate is shorter.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexer::{TokenKind, TokenSequence};

pub const DEFAULT_MAX_N: usize = 4;
pub const DEFAULT_KEYWORD_WEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Zero-match orders become `1 / (total + 1)`.
    #[default]
    AddOne,
    /// No smoothing; a zero-match order zeroes the score.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuScore {
    pub value: f64,
    /// Set when both sequences were empty; `value` is then 0.
    pub empty_input: bool,
}

impl BleuScore {
    fn empty() -> Self {
        Self { value: 0.0, empty_input: true }
    }
}

pub fn ngram_match(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    max_n: usize,
    smoothing: Smoothing,
) -> BleuScore {
    weighted_bleu(candidate, reference, max_n, smoothing, |_| 1.0)
}

/// BLEU where any n-gram containing a C keyword counts `keyword_weight`
/// times as much as other n-grams, in both the matched and total mass.
pub fn weighted_ngram_match(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    keyword_weight: f64,
) -> BleuScore {
    weighted_bleu(candidate, reference, DEFAULT_MAX_N, Smoothing::AddOne, |kinds| {
        if kinds.contains(&TokenKind::Keyword) {
            keyword_weight
        } else {
            1.0
        }
    })
}

fn weighted_bleu(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    max_n: usize,
    smoothing: Smoothing,
    weight: impl Fn(&[TokenKind]) -> f64,
) -> BleuScore {
    assert!(max_n >= 1, "max_n must be at least 1");
    if candidate.is_empty() && reference.is_empty() {
        return BleuScore::empty();
    }
    if candidate.is_empty() {
        return BleuScore { value: 0.0, empty_input: false };
    }

    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand_counts = count_ngrams(candidate, n);
        let ref_counts = count_ngrams(reference, n);

        let mut matched = 0.0;
        let mut total = 0.0;
        for (gram, (count, kinds)) in &cand_counts {
            let w = weight(kinds);
            let clip = ref_counts.get(gram).map_or(0, |(c, _)| *c);
            matched += w * (*count).min(clip) as f64;
            total += w * *count as f64;
        }

        let precision = if matched > 0.0 {
            matched / total
        } else {
            match smoothing {
                Smoothing::AddOne => 1.0 / (total + 1.0),
                Smoothing::None => return BleuScore { value: 0.0, empty_input: false },
            }
        };
        log_sum += precision.ln();
    }

    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };

    let value = brevity * (log_sum / max_n as f64).exp();
    BleuScore { value: value.clamp(0.0, 1.0), empty_input: false }
}

type NgramCounts<'a> = HashMap<&'a [String], (usize, &'a [TokenKind])>;

fn count_ngrams(seq: &TokenSequence, n: usize) -> NgramCounts<'_> {
    let mut counts: NgramCounts<'_> = HashMap::new();
    if seq.len() < n {
        return counts;
    }
    for start in 0..=seq.len() - n {
        let gram = &seq.tokens()[start..start + n];
        let kinds = &seq.kinds()[start..start + n];
        counts.entry(gram).or_insert((0, kinds)).0 += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::lexer::tokenize_code;

    fn toks(s: &str) -> TokenSequence {
        tokenize_code(s)
    }

    #[test]
    fn exact_match_is_one() {
        let a = toks("int f(int a) { return a + 1; }");
        let s = ngram_match(&a, &a, 4, Smoothing::AddOne);
        assert!((s.value - 1.0).abs() < 1e-12);
        assert!(!s.empty_input);
    }

    #[test]
    fn short_exact_match_is_one() {
        let a = toks("x;");
        assert!((ngram_match(&a, &a, 4, Smoothing::AddOne).value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_small_but_positive() {
        let a = toks("alpha beta gamma delta");
        let b = toks("one two three four");
        // Every order is smoothed: 1/5, 1/4, 1/3, 1/2.
        let s = ngram_match(&a, &b, 4, Smoothing::AddOne).value;
        assert!((s - (1.0f64 / 120.0).powf(0.25)).abs() < 1e-12, "{s}");
        assert_eq!(ngram_match(&a, &b, 4, Smoothing::None).value, 0.0);
    }

    #[test]
    fn both_empty_flags() {
        let e = TokenSequence::new();
        let s = ngram_match(&e, &e, 4, Smoothing::AddOne);
        assert_eq!(s.value, 0.0);
        assert!(s.empty_input);
        let w = weighted_ngram_match(&e, &e, 5.0);
        assert!(w.empty_input);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        let s = ngram_match(&TokenSequence::new(), &toks("a b"), 4, Smoothing::AddOne);
        assert_eq!(s.value, 0.0);
        assert!(!s.empty_input);
    }

    #[test]
    fn hand_computed_unigram_bigram() {
        // cand: a b c d ; ref: a b x d
        // p1 = 3/4, p2 = 1/3 (only "a b"), BP = 1
        let s = ngram_match(&toks("a b c d"), &toks("a b x d"), 2, Smoothing::AddOne).value;
        let expected = (0.75f64 * (1.0 / 3.0)).sqrt();
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn clipping_limits_repeated_tokens() {
        // p1 = 1/4 ("a" clipped to one), p2 smoothed = 1/(3+1)
        let s = ngram_match(&toks("a a a a"), &toks("a b c d"), 2, Smoothing::AddOne).value;
        assert!((s - (0.25f64 * 0.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_applies() {
        let s = ngram_match(&toks("a b"), &toks("a b c d"), 1, Smoothing::AddOne).value;
        assert!((s - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn keyword_difference_costs_more_than_identifier_difference() {
        // Same position changed in both; only the token class differs.
        let by_ident = weighted_ngram_match(&toks("a b c x e f g"), &toks("a b c d e f g"), 5.0).value;
        let by_keyword = weighted_ngram_match(&toks("a b c while e f g"), &toks("a b c if e f g"), 5.0).value;
        let plain = ngram_match(&toks("a b c while e f g"), &toks("a b c if e f g"), 4, Smoothing::AddOne).value;
        assert!(by_keyword < by_ident, "{by_keyword} !< {by_ident}");
        assert!((plain - by_ident).abs() < 1e-12);
    }
}
