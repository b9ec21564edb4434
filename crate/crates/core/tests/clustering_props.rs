mod common;

use common::*;
use cqa_rank::clustering::kmeans_points;
use proptest::prelude::*;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum inertia over every split of the points into two non-empty sets.
fn best_two_partition(points: &[f64], dim: usize) -> f64 {
    let n = points.len() / dim;
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let mut total = 0.0;
        for side in [true, false] {
            let members: Vec<&[f64]> = (0..n)
                .filter(|&i| (mask >> i & 1 == 1) == side)
                .map(|i| &points[i * dim..(i + 1) * dim])
                .collect();
            let mut mean = vec![0.0; dim];
            for m in &members {
                for j in 0..dim {
                    mean[j] += m[j] / members.len() as f64;
                }
            }
            total += members.iter().map(|m| sq(m, &mean)).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inertia_never_increases_and_is_a_lloyd_fixed_point(
        pts in prop::collection::vec(-10.0f64..10.0, 4..60), k in 1usize..4, seed in any::<u64>()
    ) {
        let dim = 2;
        let n = pts.len() / dim;
        prop_assume!(n >= k);
        let pts = &pts[..n * dim];
        let res = kmeans_points(pts, dim, k, 100, seed).unwrap();
        for w in res.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        // every point sits with a nearest centroid
        for i in 0..n {
            let p = &pts[i * dim..(i + 1) * dim];
            let own = sq(p, &res.centroids[res.labels[i] * dim..(res.labels[i] + 1) * dim]);
            for c in 0..k {
                prop_assert!(own <= sq(p, &res.centroids[c * dim..(c + 1) * dim]) + 1e-9);
            }
        }
    }

    #[test]
    fn never_beats_the_exhaustive_optimum(pts in prop::collection::vec(-5.0f64..5.0, 6..18), seed in any::<u64>()) {
        let n = pts.len() / 2;
        let pts = &pts[..n * 2];
        let res = kmeans_points(pts, 2, 2, 100, seed).unwrap();
        prop_assert!(res.inertia() >= best_two_partition(pts, 2) - 1e-9);
    }
}

#[test]
fn separated_blobs_reach_the_exhaustive_optimum() {
    for seed in 0..20 {
        let (pts, blobs) = two_blobs(5, 10.0, seed);
        let res = kmeans_points(&pts, 2, 2, 100, seed).unwrap();
        assert!((res.inertia() - best_two_partition(&pts, 2)).abs() < 1e-9, "seed {seed}");
        for i in 0..blobs.len() {
            for j in 0..blobs.len() {
                assert_eq!(blobs[i] == blobs[j], res.labels[i] == res.labels[j]);
            }
        }
    }
}
