//! Property tests for the cross-cutting invariants: algebraic tolerances of
//! the tensor core, partition laws of the splitter, ranking against a
//! brute-force sort, reward bounds, and order-theoretic metric behaviour.

use std::collections::HashSet;

use proptest::prelude::*;

use emorec::dataio::{split, DatasetManifest, MultimodalSample, SplitSpec};
use emorec::metrics::{average_precision, ndcg_at_k, RankingJudgment};
use emorec::ndcore::{Tape, Tensor};
use emorec::recommender::{rank_top_k, reward, Catalog, ContentItem, FeedbackEvent, RewardConfig};

fn matrix(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matmul_is_associative_at_tolerance(
        m in 1usize..=4,
        k in 1usize..=4,
        n in 1usize..=4,
        p in 1usize..=4,
        a_data in prop::collection::vec(-10.0f64..10.0, 16),
        b_data in prop::collection::vec(-10.0f64..10.0, 16),
        c_data in prop::collection::vec(-10.0f64..10.0, 16),
    ) {
        let mut tape = Tape::new();
        let a = matrix(m, k, &a_data);
        let b = matrix(k, n, &b_data);
        let c = matrix(n, p, &c_data);
        let ab = tape.matmul(&a, &b).unwrap();
        let left = tape.matmul(&ab, &c).unwrap();
        let bc = tape.matmul(&b, &c).unwrap();
        let right = tape.matmul(&a, &bc).unwrap();
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() <= 1e-9, "{l} vs {r}");
        }
    }

    #[test]
    fn softmax_rows_are_shift_invariant_distributions(
        row in prop::collection::vec(-50.0f64..50.0, 1..8),
        shift in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let x = Tensor::row_vector(row.clone()).unwrap();
        let shifted = Tensor::row_vector(row.iter().map(|v| v + shift).collect()).unwrap();
        let base = tape.softmax_rows(&x).unwrap();
        let moved = tape.softmax_rows(&shifted).unwrap();
        let sum: f64 = base.data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        for (a, b) in base.data().iter().zip(moved.data()) {
            prop_assert!((a - b).abs() <= 1e-12, "shift changed softmax: {a} vs {b}");
        }
    }

    #[test]
    fn rank_top_k_agrees_with_exhaustive_sort(
        n in 1usize..=100,
        k in 1usize..=110,
        flat in prop::collection::vec(-5.0f64..5.0, 300),
        state in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let items: Vec<ContentItem> = (0..n)
            .map(|i| ContentItem {
                id: format!("c{i:03}"),
                embedding: flat[i * 3..i * 3 + 3].to_vec(),
                metadata: serde_json::Map::new(),
            })
            .collect();
        let catalog = Catalog::new(items.clone()).unwrap();
        let ranked = rank_top_k(&state, &catalog, k).unwrap();

        // Brute force: score every item, full sort, truncate.
        let mut scored: Vec<(String, f64)> = items
            .iter()
            .map(|item| {
                let score: f64 = state.iter().zip(&item.embedding).map(|(a, b)| a * b).sum();
                (item.id.clone(), score)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);

        prop_assert_eq!(ranked.entries.len(), scored.len());
        for (entry, (id, score)) in ranked.entries.iter().zip(&scored) {
            prop_assert_eq!(&entry.id, id);
            prop_assert_eq!(entry.score, *score);
        }
    }

    #[test]
    fn reward_stays_in_unit_interval(
        dwell in 0.0f64..1e7,
        replays in 0u32..10_000,
        liked in any::<bool>(),
        dwell_weight in 0.0f64..2.0,
        replay_weight in 0.0f64..2.0,
        like_weight in 0.0f64..2.0,
    ) {
        let event = FeedbackEvent {
            user_state: vec![1.0],
            content_id: "c".into(),
            dwell_time: dwell,
            replays,
            liked,
        };
        let config = RewardConfig {
            dwell_weight,
            replay_weight,
            like_weight,
            ..RewardConfig::default()
        };
        let r = reward(&event, &config);
        prop_assert!((0.0..=1.0).contains(&r), "reward {r}");
    }

    #[test]
    fn average_precision_ignores_order_below_last_relevant(
        mask in prop::collection::vec(any::<bool>(), 1..10),
        rotation in 1usize..5,
    ) {
        let ranked: Vec<String> = (0..mask.len()).map(|i| format!("i{i}")).collect();
        let relevant: HashSet<String> = ranked
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(id, _)| id.clone())
            .collect();
        let last_relevant = ranked
            .iter()
            .rposition(|id| relevant.contains(id))
            .map_or(0, |p| p + 1);

        let base = average_precision(
            &RankingJudgment::new(ranked.clone(), relevant.clone()).unwrap(),
        );
        let tail_len = ranked.len() - last_relevant;
        if tail_len > 1 {
            let mut permuted = ranked.clone();
            permuted[last_relevant..].rotate_right(rotation % tail_len);
            let shuffled = average_precision(&RankingJudgment::new(permuted, relevant).unwrap());
            prop_assert_eq!(base, shuffled);
        }
    }

    #[test]
    fn ndcg_never_decreases_when_a_relevant_item_moves_up(
        mask in prop::collection::vec(any::<bool>(), 2..10),
        k in 1usize..=10,
    ) {
        let ranked: Vec<String> = (0..mask.len()).map(|i| format!("i{i}")).collect();
        let relevant: HashSet<String> = ranked
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(id, _)| id.clone())
            .collect();
        // Find an (irrelevant, relevant) adjacent-or-distant pair to swap up.
        let swap = (0..ranked.len()).find_map(|j| {
            if relevant.contains(&ranked[j]) {
                return None;
            }
            ((j + 1)..ranked.len())
                .find(|&i| relevant.contains(&ranked[i]))
                .map(|i| (j, i))
        });
        let before = ndcg_at_k(
            &RankingJudgment::new(ranked.clone(), relevant.clone()).unwrap(),
            k,
        );
        if let Some((j, i)) = swap {
            let mut improved = ranked.clone();
            improved.swap(j, i);
            let after = ndcg_at_k(&RankingJudgment::new(improved, relevant).unwrap(), k);
            prop_assert!(
                after >= before - 1e-15,
                "NDCG fell from {before} to {after} after promoting a relevant item"
            );
        }
    }

    #[test]
    fn splits_partition_the_input(
        class_sizes in prop::collection::vec(1usize..12, 2..5),
        seed in any::<u64>(),
    ) {
        let classes: Vec<String> = (0..class_sizes.len()).map(|c| format!("e{c}")).collect();
        let manifest = DatasetManifest {
            emotion_space: classes.clone(),
            intent_space: vec!["relaxing".into()],
            d_v: 2,
            d_a: 2,
            d_t: 2,
            sample_count: None,
        };
        let mut samples = Vec::new();
        for (c, &count) in class_sizes.iter().enumerate() {
            for i in 0..count {
                samples.push(MultimodalSample {
                    id: format!("s{c}-{i}"),
                    visual: vec![vec![0.0, 0.0]],
                    audio: vec![vec![0.0, 0.0]],
                    text: vec![vec![0.0, 0.0]],
                    emotion: classes[c].clone(),
                    intent: "relaxing".into(),
                    positives: vec![],
                });
            }
        }
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let (train, val, test) = split(&samples, &manifest, &spec).unwrap();

        let mut seen = HashSet::new();
        for part in [&train, &val, &test] {
            for sample in part {
                prop_assert!(seen.insert(sample.id.clone()), "duplicate {}", sample.id);
            }
        }
        prop_assert_eq!(seen.len(), samples.len());

        // Per-class counts stay within one sample of the fractional targets.
        for (c, &count) in class_sizes.iter().enumerate() {
            for (part, frac) in [(&train, 0.7), (&val, 0.15), (&test, 0.15)] {
                let got = part.iter().filter(|s| s.emotion == classes[c]).count() as f64;
                let target = count as f64 * frac;
                prop_assert!(
                    (got - target).abs() <= 1.0,
                    "class {c}: {got} vs target {target}"
                );
            }
        }
    }
}
