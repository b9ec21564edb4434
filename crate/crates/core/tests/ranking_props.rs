mod common;

use common::brute_force_ap;
use cqa_rank::corpus::Label;
use cqa_rank::ranking::{average_precision, map_score, rank_thread, subtask_c_score, EvalOptions, RankedItem, RankedList};
use proptest::prelude::*;

fn item(i: usize, score: f64, good: bool) -> RankedItem {
    RankedItem {
        thread_id: "T".into(),
        comment_id: format!("C{i}"),
        search_rank: 1,
        rank_in_thread: i as u32 + 1,
        prob: score,
        score,
        gold: Some(if good { Label::Good } else { Label::Bad }),
    }
}

proptest! {
    #[test]
    fn ap_matches_brute_force(rel in prop::collection::vec(any::<bool>(), 0..40)) {
        match (average_precision(&rel), brute_force_ap(&rel)) {
            (None, None) => {}
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn ap_is_a_probability_and_perfect_order_scores_one(rel in prop::collection::vec(any::<bool>(), 1..40)) {
        if let Some(ap) = average_precision(&rel) {
            prop_assert!((0.0..=1.0).contains(&ap));
            let mut sorted = rel.clone();
            sorted.sort_by(|a, b| b.cmp(a));
            prop_assert_eq!(average_precision(&sorted), Some(1.0));
        }
    }

    #[test]
    fn shuffling_below_last_relevant_is_invisible(rel in prop::collection::vec(any::<bool>(), 1..30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let Some(last) = rel.iter().rposition(|&r| r) else { return Ok(()) };
        let mut tail = rel[last + 1..].to_vec();
        tail.shuffle(&mut common::rng(seed));
        let mut moved = rel[..=last].to_vec();
        moved.extend(tail);
        prop_assert_eq!(average_precision(&rel), average_precision(&moved));
    }

    #[test]
    fn reversed_ranking_has_closed_form(n in 1usize..30, g in 1usize..30) {
        let g = g.min(n);
        let mut rel = vec![false; n - g];
        rel.extend(vec![true; g]);
        let expect: f64 = (1..=g).map(|i| i as f64 / (n - g + i) as f64).sum::<f64>() / g as f64;
        prop_assert!((average_precision(&rel).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn map_ignores_queries_without_good(a in prop::collection::vec(any::<bool>(), 1..10), n_bad in 1usize..6) {
        let list = |id: &str, rel: &[bool]| RankedList {
            query_id: id.into(),
            items: rel.iter().enumerate().map(|(i, &g)| item(i, 1.0 - i as f64 / 100.0, g)).collect(),
        };
        let with = vec![list("Q1", &a), list("Q2", &vec![false; n_bad])];
        let without = vec![list("Q1", &a)];
        let opts = EvalOptions::default();
        match (map_score(&with, opts), map_score(&without, opts)) {
            (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn rank_thread_sorts_descending(scores in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let items = scores.iter().enumerate().map(|(i, &s)| item(i, s, false)).collect();
        let list = rank_thread("Q", items);
        for w in list.items.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            if w[0].score == w[1].score {
                prop_assert!(w[0].rank_in_thread < w[1].rank_in_thread);
            }
        }
    }

    #[test]
    fn combined_score_is_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0, r in 1u32..10, s in 1u32..10) {
        if p >= q {
            prop_assert!(subtask_c_score(p, r) >= subtask_c_score(q, r));
        }
        if r <= s {
            prop_assert!(subtask_c_score(p, r) >= subtask_c_score(p, s));
        }
    }
}
