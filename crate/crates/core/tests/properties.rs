//! Property tests against brute-force references.

use analogylab::metrics::{cpr, parallelogram_alignment};
use analogylab::rules::{cd_query, nn_query, nn_targets_c, parallelogram_query, RuleScores};
use analogylab::{AnalogyStem, EmbeddingStore, LoadOptions, QueryVector, RuleKind, RuleOptions};
use proptest::prelude::*;

/// Rows built from a few base directions, each reused at power-of-two scales
/// so normalized rows coincide bit-for-bit and ties are common.
fn store_strategy() -> impl Strategy<Value = EmbeddingStore> {
    (1usize..=8, 2usize..=50).prop_flat_map(|(dim, n)| {
        let base = prop::collection::vec(prop::collection::vec(-4i8..=4, dim), 1..=n);
        (
            base,
            prop::collection::vec((any::<prop::sample::Index>(), 0u32..3), n),
        )
            .prop_map(move |(bases, picks)| {
                let rows = picks.into_iter().enumerate().filter_map(|(i, (idx, s))| {
                    let v: Vec<f64> = bases[idx.index(bases.len())]
                        .iter()
                        .map(|&x| x as f64 * f64::powi(2.0, s as i32))
                        .collect();
                    v.iter().any(|x| *x != 0.0).then(|| (format!("w{i}"), v))
                });
                EmbeddingStore::from_rows(rows.collect::<Vec<_>>(), LoadOptions::default())
            })
            .prop_filter_map("need a non-empty store", |s| s.ok())
    })
}

/// Reference order: full sort by (score desc, id asc) over non-excluded ids.
fn brute_order(scores: &[f32], excluded: &[usize]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len())
        .filter(|i| !excluded.contains(i))
        .collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids
}

fn query_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4i8..=4, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| *x != 0))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rank_and_top_k_match_brute_force(
        (store, q, excl) in store_strategy().prop_flat_map(|s| {
            let (d, n) = (s.dim(), s.len());
            (Just(s), query_strategy(d), prop::collection::vec(0..n, 0..=3))
        })
    ) {
        let q = QueryVector::unit_from_f64(&q).unwrap();
        let table = store.score_all(&q).unwrap();
        let scores = table.scores();
        // Scores are cosines.
        for (id, s) in scores.iter().enumerate() {
            let v = store.vector_f64(id);
            let exact: f64 = v.iter().zip(q.values()).map(|(a, b)| a * *b as f64).sum();
            prop_assert!((*s as f64 - exact).abs() < 1e-5);
        }
        let names: Vec<&str> = excl.iter().map(|&i| store.word(i)).collect();
        let order = brute_order(scores, &excl);
        for (pos, &id) in order.iter().enumerate() {
            prop_assert_eq!(store.rank_of(&q, store.word(id), &names).unwrap(), pos + 1);
        }
        for &e in &excl {
            prop_assert!(store.rank_of(&q, store.word(e), &names).is_err());
        }
        for k in [1, 3, order.len().max(1), order.len() + 5] {
            let top = store.top_k(&q, k, &names).unwrap();
            let want: Vec<&str> = order.iter().take(k).map(|&i| store.word(i)).collect();
            let got: Vec<&str> = top.iter().map(|(w, _)| w.as_str()).collect();
            prop_assert_eq!(got, want);
        }
        let mut distinct = excl.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(store.effective_size(&excl), store.len() - distinct.len());
    }
}

fn random_store(dim: usize, n: usize) -> impl Strategy<Value = EmbeddingStore> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n).prop_filter_map(
        "degenerate rows",
        move |rows| {
            let rows: Vec<(String, Vec<f64>)> = rows
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("w{i}"), v))
                .collect();
            EmbeddingStore::from_rows(rows, LoadOptions::default())
                .ok()
                .filter(|s| s.len() == n)
        },
    )
}

fn ordering(store: &EmbeddingStore, stem: &AnalogyStem, rule: RuleKind) -> Vec<usize> {
    let s = RuleScores::compute(store, stem, rule, RuleOptions::default()).unwrap();
    brute_order(s.table().scores(), &[])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// With A = B the offset collapses to v(C).
    #[test]
    fn parallelogram_reduces_to_cd_when_a_equals_b(store in random_store(6, 20), a in 0usize..20, c in 0usize..20) {
        prop_assume!(a != c);
        let stem = AnalogyStem::new("s", store.word(a), store.word(a), store.word(c));
        let p = parallelogram_query(&store, &stem, RuleOptions::default()).unwrap();
        let cd = cd_query(&store, &stem).unwrap();
        prop_assert_eq!(p.values(), cd.values());
        prop_assert_eq!(
            ordering(&store, &stem, RuleKind::Parallelogram),
            ordering(&store, &stem, RuleKind::CDSimilarity)
        );
    }

    #[test]
    fn nn_reduces_to_cd_when_a_is_closer_to_b(store in random_store(5, 20), a in 0usize..20, b in 0usize..20, c in 0usize..20) {
        prop_assume!(a != b && a != c && b != c);
        let stem = AnalogyStem::new("s", store.word(a), store.word(b), store.word(c));
        let (_, target) = nn_query(&store, &stem).unwrap();
        if nn_targets_c(&store, a, b, c) {
            prop_assert_eq!(target.as_str(), store.word(c));
            prop_assert_eq!(
                ordering(&store, &stem, RuleKind::NearestNeighbor),
                ordering(&store, &stem, RuleKind::CDSimilarity)
            );
        } else {
            prop_assert_eq!(target.as_str(), store.word(b));
        }
    }

    #[test]
    fn alignment_is_translation_invariant(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 4),
        shift in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        let moved: Vec<Vec<f64>> = vs
            .iter()
            .map(|v| v.iter().zip(&shift).map(|(x, s)| x + s).collect())
            .collect();
        let before = parallelogram_alignment(&vs[0], &vs[1], &vs[2], &vs[3]);
        let after = parallelogram_alignment(&moved[0], &moved[1], &moved[2], &moved[3]);
        match (before, after) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}"),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn cpr_is_monotone_and_complete(
        ranks in prop::collection::vec((1usize..=100, 1u32..10), 1..40),
        mut taus in prop::collection::vec(0.001f64..100.0, 1..8),
    ) {
        taus.push(100.0);
        let items: Vec<(usize, f64)> = ranks.iter().map(|(r, w)| (*r, *w as f64)).collect();
        let points = cpr(&items, 100, &taus).unwrap();
        for w in points.windows(2) {
            prop_assert!(w[0].tau <= w[1].tau);
            prop_assert!(w[0].proportion <= w[1].proportion);
        }
        prop_assert_eq!(points.last().unwrap().proportion, 1.0);
    }
}

#[test]
fn cpr_fixture_two_thirds() {
    let points = cpr(&[(1, 1.0), (5, 1.0), (50, 1.0)], 100, &[5.0]).unwrap();
    assert_eq!(points[0].proportion, 2.0 / 3.0);
}
