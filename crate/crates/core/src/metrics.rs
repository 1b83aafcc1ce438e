//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L, and CIDEr, as pure
//! functions over tokenized candidates and reference sets.
//!
//! The tokenizer is a fixed documented rule set (lowercase, whitespace
//! split, ASCII punctuation stripped at token edges), not the PTB pipeline
//! of the public evaluation servers, so scores here are internally
//! consistent rather than server-identical.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

pub type TokenSeq = Vec<String>;

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation
/// from each token, drop empties.
pub fn tokenize(s: &str) -> TokenSeq {
    s.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<Vec<String>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn check_aligned(candidates: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::Config(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    for (i, refs) in references.iter().enumerate() {
        if refs.is_empty() {
            return Err(Error::Config(format!("item {i} has no references")));
        }
        if refs.iter().any(|r| r.is_empty()) {
            return Err(Error::Config(format!("item {i} has an empty reference")));
        }
    }
    Ok(())
}

/// Clipped and total n-gram counts for one item: each candidate n-gram
/// counts at most as often as it appears in the most-generous reference.
fn item_clipped_counts(cand: &[String], refs: &[TokenSeq], n: usize) -> (usize, usize) {
    let cand_counts = ngram_counts(cand, n);
    let mut max_ref_counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            if cand_counts.contains_key(&g) {
                let e = max_ref_counts.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
    }
    let mut clipped = 0;
    let mut total = 0;
    for (g, &c) in &cand_counts {
        total += c;
        clipped += c.min(max_ref_counts.get(g).copied().unwrap_or(0));
    }
    (clipped, total)
}

/// Corpus-level BLEU-1..max_n: geometric mean of clipped modified n-gram
/// precisions times the brevity penalty min(1, e^(1 - r/c)), with the
/// closest-length rule for the effective reference length r (ties prefer
/// the shorter reference). No smoothing: any zero precision zeroes the
/// score, as in the classic corpus definition.
pub fn bleu(candidates: &[TokenSeq], references: &[Vec<TokenSeq>], max_n: usize) -> Result<Vec<f64>> {
    check_aligned(candidates, references)?;
    if candidates.is_empty() {
        return Ok(vec![0.0; max_n]);
    }

    let mut clipped = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| {
                let diff = (l as i64 - cand.len() as i64).abs();
                (diff, l)
            })
            .unwrap_or(0);
        for n in 1..=max_n {
            let (c, t) = item_clipped_counts(cand, refs, n);
            clipped[n - 1] += c;
            total[n - 1] += t;
        }
    }

    if cand_len == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };

    let mut scores = Vec::with_capacity(max_n);
    for k in 1..=max_n {
        let mut log_sum = 0.0;
        let mut degenerate = false;
        for n in 1..=k {
            if clipped[n - 1] == 0 || total[n - 1] == 0 {
                degenerate = true;
                break;
            }
            log_sum += (clipped[n - 1] as f64 / total[n - 1] as f64).ln();
        }
        scores.push(if degenerate {
            0.0
        } else {
            bp * (log_sum / k as f64).exp()
        });
    }
    Ok(scores)
}

/// Longest common subsequence length, by the textbook DP table.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// Single-item ROUGE-L: the LCS F-measure with beta = 1.2, maximized over
/// the item's references.
pub fn rouge_l_item(candidate: &[String], references: &[TokenSeq]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Config("rouge-l needs at least one reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut best: f64 = 0.0;
    for r in references {
        let lcs = lcs_len(candidate, r) as f64;
        let p = lcs / candidate.len() as f64;
        let rec = lcs / r.len() as f64;
        let f = if p + rec == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * rec * p / (rec + beta2 * p)
        };
        best = best.max(f);
    }
    Ok(best)
}

/// Corpus ROUGE-L: mean of per-item scores.
pub fn rouge_l(candidates: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<f64> {
    check_aligned(candidates, references)?;
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        sum += rouge_l_item(cand, refs)?;
    }
    Ok(sum / candidates.len() as f64)
}

const CIDER_MAX_N: usize = 4;

/// CIDEr with the conventional x10 scale: for n = 1..4, TF-IDF n-gram
/// vectors (IDF = ln(N / df) over items, df clamped at 1), cosine between
/// candidate and each reference averaged over references, then averaged
/// over n and items. Zero vectors have cosine 0.
pub fn cider(candidates: &[TokenSeq], references: &[Vec<TokenSeq>]) -> Result<f64> {
    check_aligned(candidates, references)?;
    let n_items = candidates.len();
    if n_items < 2 {
        return Err(Error::Config(
            "cider needs at least 2 items: IDF is degenerate on a single document".into(),
        ));
    }

    // Document frequency per n-gram: number of items whose reference set
    // contains it.
    let mut df: Vec<BTreeMap<Vec<String>, usize>> = vec![BTreeMap::new(); CIDER_MAX_N];
    for refs in references {
        for n in 1..=CIDER_MAX_N {
            let mut seen: BTreeMap<Vec<String>, ()> = BTreeMap::new();
            for r in refs {
                for g in ngram_counts(r, n).into_keys() {
                    seen.entry(g).or_insert(());
                }
            }
            for g in seen.into_keys() {
                *df[n - 1].entry(g).or_insert(0) += 1;
            }
        }
    }

    let idf = |n: usize, g: &Vec<String>| -> f64 {
        let d = df[n - 1].get(g).copied().unwrap_or(0).max(1) as f64;
        (n_items as f64 / d).ln()
    };

    let tfidf = |n: usize, tokens: &[String]| -> BTreeMap<Vec<String>, f64> {
        ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let w = c as f64 * idf(n, &g);
                (g, w)
            })
            .collect()
    };

    let cosine = |a: &BTreeMap<Vec<String>, f64>, b: &BTreeMap<Vec<String>, f64>| -> f64 {
        let dot: f64 = a
            .iter()
            .filter_map(|(g, &wa)| b.get(g).map(|&wb| wa * wb))
            .sum();
        let na: f64 = a.values().map(|w| w * w).sum::<f64>().sqrt();
        let nb: f64 = b.values().map(|w| w * w).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };

    let mut score = 0.0;
    for n in 1..=CIDER_MAX_N {
        let mut per_n = 0.0;
        for (cand, refs) in candidates.iter().zip(references) {
            let vc = tfidf(n, cand);
            let mut per_item = 0.0;
            for r in refs {
                per_item += cosine(&vc, &tfidf(n, r));
            }
            per_n += per_item / refs.len() as f64;
        }
        score += per_n / n_items as f64;
    }
    Ok(10.0 * score / CIDER_MAX_N as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> TokenSeq {
        tokenize(s)
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(toks("A man, riding."), vec!["a", "man", "riding"]);
        assert_eq!(toks(""), Vec::<String>::new());
        assert_eq!(toks("Hello HELLO"), vec!["hello", "hello"]);
        assert_eq!(toks("  ...  !? "), Vec::<String>::new());
        assert_eq!(toks("it's"), vec!["it's"]); // interior punctuation kept
    }

    #[test]
    fn bleu_perfect_match_is_one() {
        let cands = vec![toks("a red bird sits on the fence")];
        let refs = vec![vec![toks("a red bird sits on the fence")]];
        let scores = bleu(&cands, &refs, 4).unwrap();
        for s in scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bleu_clipping_the_the_the() {
        // Candidate [the, the, the] vs reference [the, cat]: clipped
        // unigram matches = min(3, 1) = 1 over 3 candidate unigrams.
        let cands = vec![toks("the the the")];
        let refs = vec![vec![toks("the cat")]];
        let scores = bleu(&cands, &refs, 1).unwrap();
        // BP: c=3, r=2, c>r so BP=1. BLEU-1 = 1/3.
        assert!((scores[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_short_perfect_candidate() {
        // Candidate of length 2 with perfect precision vs a reference of
        // length 4: BP = e^(1 - 4/2) = e^-1.
        let cands = vec![toks("a red")];
        let refs = vec![vec![toks("a red bird sings")]];
        let scores = bleu(&cands, &refs, 1).unwrap();
        assert!((scores[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_corpus_and_empty_candidates() {
        let scores = bleu(&[], &[], 4).unwrap();
        assert_eq!(scores, vec![0.0; 4]);
        let cands = vec![Vec::new()];
        let refs = vec![vec![toks("a cat")]];
        let scores = bleu(&cands, &refs, 4).unwrap();
        assert_eq!(scores, vec![0.0; 4]);
    }

    // Exhaustive-counting oracle: counts candidate n-gram matches by
    // scanning all windows, clipping per distinct gram against the max
    // window count over each reference.
    fn clipped_matches_oracle(cand: &[String], refs: &[TokenSeq], n: usize) -> usize {
        let windows = |s: &[String]| -> Vec<Vec<String>> {
            if s.len() < n {
                Vec::new()
            } else {
                s.windows(n).map(|w| w.to_vec()).collect()
            }
        };
        let cw = windows(cand);
        let mut seen: Vec<Vec<String>> = Vec::new();
        let mut total = 0usize;
        for g in &cw {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let cand_count = cw.iter().filter(|w| *w == g).count();
            let max_ref = refs
                .iter()
                .map(|r| windows(r).iter().filter(|w| *w == g).count())
                .max()
                .unwrap_or(0);
            total += cand_count.min(max_ref);
        }
        total
    }

    #[test]
    fn bleu_clipped_counts_match_exhaustive_oracle() {
        let corpora: Vec<(TokenSeq, Vec<TokenSeq>)> = vec![
            (toks("a a b a"), vec![toks("a b a"), toks("b b a")]),
            (toks("x y x y"), vec![toks("x y x y x y")]),
            (toks("p q r s t u"), vec![toks("q r s"), toks("p q r s t u")]),
            (toks("m m m m m"), vec![toks("m m")]),
            (toks("a b"), vec![toks("c d e f")]),
        ];
        for n in 1..=4 {
            for (cand, refs) in &corpora {
                let oracle = clipped_matches_oracle(cand, refs, n);
                let (clipped, total) = item_clipped_counts(cand, refs, n);
                assert_eq!(clipped, oracle, "clipped n={n} cand={cand:?}");
                let expect_total = cand.len().saturating_sub(n - 1);
                assert_eq!(total, expect_total, "total n={n} cand={cand:?}");
            }
        }
    }

    #[test]
    fn lcs_textbook_cases() {
        let a = toks("a b c d e");
        let b = toks("a c e");
        assert_eq!(lcs_len(&a, &b), 3);
        assert_eq!(lcs_len(&a, &a), 5);
        assert_eq!(lcs_len(&a, &[]), 0);
    }

    // Brute force: enumerate all subsequences of `a`, keep the longest that
    // is also a subsequence of `b`.
    fn lcs_brute(a: &[String], b: &[String]) -> usize {
        let is_subseq = |s: &[&String], t: &[String]| -> bool {
            let mut it = t.iter();
            s.iter().all(|w| it.any(|x| x == *w))
        };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&String> = a
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, w)| w)
                .collect();
            if sub.len() > best && is_subseq(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn lcs_matches_brute_force_up_to_length_ten() {
        let cases = [
            ("a b a c b d c a", "b a d c a b"),
            ("x x y y x", "y x y x y"),
            ("p q r s t u v w x y", "y x w v u t s r q p"),
            ("m n", "m n o p"),
            ("a a a a a a a a a a", "a a a"),
        ];
        for (sa, sb) in cases {
            let a = toks(sa);
            let b = toks(sb);
            assert!(a.len() <= 10);
            assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b), "{sa} / {sb}");
        }
    }

    #[test]
    fn rouge_identical_and_disjoint() {
        let c = toks("a b c d");
        assert!((rouge_l_item(&c, &[c.clone()]).unwrap() - 1.0).abs() < 1e-12);
        let d = toks("w x y z");
        assert_eq!(rouge_l_item(&c, &[d]).unwrap(), 0.0);
        assert_eq!(rouge_l_item(&[], &[c.clone()]).unwrap(), 0.0);
    }

    #[test]
    fn rouge_swapped_interior_pair() {
        // [a b c d] vs [a c b d]: LCS is 3 (a b d or a c d).
        let c = toks("a b c d");
        let r = toks("a c b d");
        assert_eq!(lcs_len(&c, &r), 3);
        let p = 3.0 / 4.0;
        let rec = 3.0 / 4.0;
        let beta2 = 1.2f64 * 1.2;
        let expect = (1.0 + beta2) * rec * p / (rec + beta2 * p);
        assert!((rouge_l_item(&c, &[r]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn cider_disjoint_perfect_corpus_scores_ten() {
        let cands = vec![toks("a red bird sits quietly"), toks("the blue cat sleeps now")];
        let refs = vec![vec![cands[0].clone()], vec![cands[1].clone()]];
        let score = cider(&cands, &refs).unwrap();
        assert!((score - 10.0).abs() < 1e-12, "{score}");
    }

    #[test]
    fn cider_no_overlap_contributes_zero() {
        let cands = vec![toks("w x y z q"), toks("the blue cat sleeps now")];
        let refs = vec![
            vec![toks("a red bird sits quietly")],
            vec![toks("the blue cat sleeps now")],
        ];
        let score = cider(&cands, &refs).unwrap();
        // Item 1 contributes 0 at every n; item 2 contributes 1. Mean = 0.5.
        assert!((score - 5.0).abs() < 1e-12, "{score}");
    }

    #[test]
    fn cider_idf_zero_for_universal_ngram() {
        // "on" appears in every item's references, so its IDF is ln(2/2)=0
        // and it contributes nothing to any vector.
        let cands = vec![toks("on"), toks("on")];
        let refs = vec![
            vec![toks("bird on wire sits high")],
            vec![toks("cat on mat sleeps low")],
        ];
        let score = cider(&cands, &refs).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn cider_single_item_is_configuration_error() {
        let cands = vec![toks("a b c d")];
        let refs = vec![vec![toks("a b c d")]];
        assert!(matches!(cider(&cands, &refs), Err(Error::Config(_))));
    }

    // Two-item hand corpus. Expected values computed independently from the
    // metric definitions (clipped counts, closest-length brevity penalty,
    // LCS F-measure with beta 1.2, TF-IDF cosines) and frozen here.
    fn hand_corpus() -> (Vec<TokenSeq>, Vec<Vec<TokenSeq>>) {
        let cands = vec![toks("a red bird sits on the fence"), toks("the cat sleeps")];
        let refs = vec![
            vec![
                toks("a red bird sits on a fence"),
                toks("a small red bird rests on the fence"),
            ],
            vec![toks("a cat sleeps on the mat")],
        ];
        (cands, refs)
    }

    #[test]
    fn hand_corpus_bleu_matches_frozen_oracle() {
        let (cands, refs) = hand_corpus();
        let scores = bleu(&cands, &refs, 4).unwrap();
        // Clipped/total counts: 10/10, 7/8, 4/6, 2/4; c=10, r=13,
        // BP = e^(1 - 13/10).
        let expect = [
            0.7408182206817179,
            0.6929719919176194,
            0.618990409321299,
            0.5444191021779056,
        ];
        for (s, e) in scores.iter().zip(expect) {
            assert!((s - e).abs() < 1e-9, "{s} vs {e}");
        }
    }

    #[test]
    fn hand_corpus_rouge_matches_frozen_oracle() {
        let (cands, refs) = hand_corpus();
        // Item 1: LCS 6 against both refs, best F = 6/7; item 2: LCS 2,
        // P = 2/3, R = 1/3.
        let score = rouge_l(&cands, &refs).unwrap();
        assert!((score - 0.6381934216985763).abs() < 1e-9, "{score}");
    }

    #[test]
    fn hand_corpus_cider_matches_frozen_oracle() {
        let (cands, refs) = hand_corpus();
        let score = cider(&cands, &refs).unwrap();
        assert!((score - 3.9930872732108273).abs() < 1e-9, "{score}");
    }

    #[test]
    fn permuting_items_leaves_scores_unchanged() {
        let cands = vec![
            toks("a red bird sits on the fence"),
            toks("the cat sleeps on a mat"),
            toks("dogs run fast in the park"),
        ];
        let refs = vec![
            vec![toks("a red bird sits on a fence"), toks("a bird on the fence")],
            vec![toks("a cat sleeps on the mat")],
            vec![toks("a dog runs in the park"), toks("dogs run in a big park")],
        ];
        let perm = [2usize, 0, 1];
        let cands_p: Vec<_> = perm.iter().map(|&i| cands[i].clone()).collect();
        let refs_p: Vec<_> = perm.iter().map(|&i| refs[i].clone()).collect();

        let b1 = bleu(&cands, &refs, 4).unwrap();
        let b2 = bleu(&cands_p, &refs_p, 4).unwrap();
        for (x, y) in b1.iter().zip(&b2) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((rouge_l(&cands, &refs).unwrap() - rouge_l(&cands_p, &refs_p).unwrap()).abs() < 1e-12);
        assert!((cider(&cands, &refs).unwrap() - cider(&cands_p, &refs_p).unwrap()).abs() < 1e-12);
    }
}
