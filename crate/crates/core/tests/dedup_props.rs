use convsynth::dedup::{cosine_similarity, Decision, EmbeddingVector, QuestionIndex};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-10.0..10.0f64, dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| EmbeddingVector::new(v).unwrap())
}

fn vectors() -> impl Strategy<Value = (Vec<EmbeddingVector>, EmbeddingVector)> {
    (1..24usize).prop_flat_map(|dim| (prop::collection::vec(vector(dim), 0..40), vector(dim)))
}

fn filled(existing: &[EmbeddingVector]) -> QuestionIndex {
    let mut index = QuestionIndex::new(0.8).unwrap();
    for (i, v) in existing.iter().enumerate() {
        index.insert_unchecked(&format!("q{i}"), v.clone()).unwrap();
    }
    index
}

proptest! {
    #[test]
    fn scale_invariance(
        (a, b) in (1..32usize).prop_flat_map(|d| (vector(d), vector(d))),
        k in 1e-3..1e3f64,
    ) {
        let base = cosine_similarity(&a, &b).unwrap();
        let scaled = cosine_similarity(&a.scaled(k).unwrap(), &b).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base));
        prop_assert!((base - cosine_similarity(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn nearest_matches_brute_force((existing, candidate) in vectors()) {
        let index = filled(&existing);
        let brute = existing
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine_similarity(v, &candidate).unwrap()))
            .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            });
        let found = index.nearest(&candidate).unwrap();
        match (found, brute) {
            (None, None) => {}
            (Some((id, s)), Some((i, b))) => {
                prop_assert!((s - b).abs() < 1e-9);
                prop_assert_eq!(id, format!("q{i}"));
            }
            other => prop_assert!(false, "{:?}", other),
        }
        let decision = index.check(&candidate).unwrap();
        let expect_reject = brute.is_some_and(|(_, b)| b > 0.8);
        prop_assert_eq!(!decision.is_accepted(), expect_reject);
    }

    #[test]
    fn decision_ignores_insertion_order((existing, candidate) in vectors(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let forward = filled(&existing);
        let mut shuffled: Vec<(usize, EmbeddingVector)> =
            existing.iter().cloned().enumerate().collect();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut other = QuestionIndex::new(0.8).unwrap();
        for (i, v) in shuffled {
            other.insert_unchecked(&format!("q{i}"), v).unwrap();
        }
        let a = forward.check(&candidate).unwrap();
        let b = other.check(&candidate).unwrap();
        prop_assert_eq!(a.is_accepted(), b.is_accepted());
        if let (
            Decision::Rejected { similarity: s1, .. },
            Decision::Rejected { similarity: s2, .. },
        ) = (a, b)
        {
            prop_assert!((s1 - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn rejected_vectors_are_not_inserted((existing, candidate) in vectors()) {
        let mut index = filled(&existing);
        let before = index.len();
        let decision = index.check_and_insert("new", candidate).unwrap();
        prop_assert_eq!(index.len(), before + usize::from(decision.is_accepted()));
        prop_assert_eq!(index.contains("new"), decision.is_accepted());
    }
}
