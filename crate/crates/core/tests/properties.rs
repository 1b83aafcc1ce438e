//! Property tests over the numeric kernel, the clipper, and the metric
//! primitives.

use bnrhn::diagnostics::clip_by_global_norm;
use bnrhn::matrix::{global_norm, Matrix};
use bnrhn::metrics::{bleu, cider, lcs_len, rouge_l};
use proptest::prelude::*;

fn finite_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1e3f64..1e3, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #[test]
    fn activations_stay_in_closed_unit_ranges(m in finite_matrix(3, 4)) {
        for &v in m.sigmoid().data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for &v in m.tanh().data() {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn activations_strictly_interior_before_f64_saturation(
        data in prop::collection::vec(-18.0f64..18.0, 12),
    ) {
        // tanh rounds to exactly 1.0 past |x| ~ 19 and sigmoid past ~ 37;
        // inside that regime the mathematical open intervals hold.
        let m = Matrix::from_vec(3, 4, data).unwrap();
        for &v in m.sigmoid().data() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
        for &v in m.tanh().data() {
            prop_assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn sigmoid_symmetry_sums_to_one(m in finite_matrix(2, 6)) {
        let a = m.sigmoid();
        let b = m.scale(-1.0).sigmoid();
        let sum = a.add(&b).unwrap();
        for &v in sum.data() {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn population_variance_is_nonnegative(m in finite_matrix(5, 3)) {
        let (_, var) = m.col_stats();
        for &v in var.data() {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn matmul_identity_is_exact_for_any_matrix(m in finite_matrix(4, 4)) {
        let i = Matrix::identity(4);
        prop_assert_eq!(m.matmul(&i).unwrap(), m.clone());
        prop_assert_eq!(i.matmul(&m).unwrap(), m);
    }

    #[test]
    fn hadamard_product_commutes_exactly(
        a in finite_matrix(3, 5),
        b in finite_matrix(3, 5),
    ) {
        prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold(
        data in prop::collection::vec(-1e4f64..1e4, 12),
        threshold in 1e-3f64..1e3,
    ) {
        let mut grads = vec![Matrix::from_vec(3, 4, data).unwrap()];
        let pre = clip_by_global_norm(&mut grads, threshold).unwrap();
        let post = global_norm(&[&grads[0]]);
        prop_assert!(post <= threshold + 1e-9, "post {post} vs threshold {threshold}");
        prop_assert!(pre >= post - 1e-9);
    }
}

// Small-alphabet sentence strategy for metric properties.
fn sentence(max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..=max_len)
        .prop_map(|ws| ws.into_iter().map(|w| w.to_string()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lcs_matches_brute_force(a in sentence(8), b in sentence(8)) {
        let is_subseq = |s: &[&String], t: &[String]| -> bool {
            let mut it = t.iter();
            s.iter().all(|w| it.any(|x| x == *w))
        };
        let mut best = 0usize;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<&String> = a
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, w)| w)
                .collect();
            if sub.len() > best && is_subseq(&sub, &b) {
                best = sub.len();
            }
        }
        prop_assert_eq!(lcs_len(&a, &b), best);
    }

    #[test]
    fn exact_match_corpus_saturates_all_metrics(
        sents in prop::collection::vec(sentence(6), 2..5),
    ) {
        // Give every item a distinguishing token so CIDEr's IDF cannot
        // degenerate to zero on every n-gram.
        let cands: Vec<Vec<String>> = sents
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut c = vec![format!("id{i}")];
                c.extend(s.clone());
                c
            })
            .collect();
        let refs: Vec<Vec<Vec<String>>> = cands.iter().map(|c| vec![c.clone()]).collect();
        let b = bleu(&cands, &refs, 4).unwrap();
        for (n, score) in b.iter().enumerate() {
            if cands.iter().all(|c| c.len() > n) {
                prop_assert!((score - 1.0).abs() < 1e-12, "bleu-{} = {score}", n + 1);
            }
        }
        prop_assert!((rouge_l(&cands, &refs).unwrap() - 1.0).abs() < 1e-12);
        let cid = cider(&cands, &refs).unwrap();
        prop_assert!(cid <= 10.0 + 1e-9);
        // With every sentence >= 4 tokens (id token + body >= 1..6) the
        // 1..3-gram vectors are nonzero; 4-gram vectors may be empty for
        // the shortest, so 10.0 is only guaranteed when all are long.
        if cands.iter().all(|c| c.len() >= 4) {
            prop_assert!((cid - 10.0).abs() < 1e-9, "cider = {cid}");
        }
    }

    #[test]
    fn metric_ranges_hold_everywhere(
        cands in prop::collection::vec(sentence(6), 2..5),
        refs_body in prop::collection::vec(sentence(6), 2..5),
    ) {
        let n = cands.len().min(refs_body.len());
        let cands = &cands[..n];
        let refs: Vec<Vec<Vec<String>>> =
            refs_body[..n].iter().map(|r| vec![r.clone()]).collect();
        for score in bleu(cands, &refs, 4).unwrap() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&score));
        }
        let r = rouge_l(cands, &refs).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
        let c = cider(cands, &refs).unwrap();
        prop_assert!((0.0..=10.0 + 1e-9).contains(&c));
    }
}
