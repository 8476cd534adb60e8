mod common;

use common::*;
use divscope::clustering::{self, Dendrogram, FcmConfig};
use divscope::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn average_linkage_matches_oracle() {
    let mut rng = seeded_rng(2);
    for _ in 0..100 {
        let n = rng.random_range(3..=64);
        let dim = rng.random_range(2..=10);
        let rows = random_rows(&mut rng, n, dim);
        let emb = matrix(&rows);
        for k in [2usize, 5, 10] {
            if k > n {
                continue;
            }
            let ours = clustering::hac(&emb, k).unwrap();
            assert_eq!(ours.k(), k);
            assert!(same_partition(ours.labels(), &brute_force_average_linkage(&rows, k)));
        }
    }
}

#[test]
fn cuts_nest_and_match_oracle_on_fifty_points() {
    let mut rng = seeded_rng(3);
    let rows = random_rows(&mut rng, 50, 6);
    let ks: Vec<usize> = (2..=10).collect();
    let cuts = clustering::cut_consistency(&matrix(&rows), &ks).unwrap();
    for (cut, &k) in cuts.iter().zip(&ks) {
        assert!(same_partition(cut.labels(), &brute_force_average_linkage(&rows, k)));
    }
    for pair in cuts.windows(2) {
        assert!(refines(pair[1].labels(), pair[0].labels()));
    }
    assert!(clustering::cut_consistency(&matrix(&rows), &[5, 3]).is_err());
}

/// Every cluster of `fine` lies inside a single cluster of `coarse`.
fn refines(fine: &[usize], coarse: &[usize]) -> bool {
    let mut parent = std::collections::HashMap::new();
    fine.iter().zip(coarse).all(|(f, c)| parent.entry(*f).or_insert(*c) == c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dendrogram_cuts_are_nested(seed in any::<u64>(), n in 2usize..40, a in 1usize..40, b in 1usize..40) {
        let mut rng = seeded_rng(seed);
        let rows = random_rows(&mut rng, n, 4);
        let d = Dendrogram::build(&matrix(&rows)).unwrap();
        let (lo, hi) = (a.min(b).min(n), a.max(b).min(n));
        let coarse = d.cut(lo).unwrap();
        let fine = d.cut(hi).unwrap();
        prop_assert!(refines(fine.labels(), coarse.labels()));
        prop_assert_eq!(fine.sizes().iter().sum::<usize>(), n);
    }

    #[test]
    fn merge_heights_never_decrease(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = seeded_rng(seed);
        let d = Dendrogram::build(&matrix(&random_rows(&mut rng, n, 5))).unwrap();
        prop_assert_eq!(d.merges().len(), n - 1);
        for w in d.merges().windows(2) {
            prop_assert!(w[1].distance >= w[0].distance - 1e-12);
        }
    }
}

#[test]
fn fcm_rows_sum_to_one_and_objective_descends() {
    let mut rng = seeded_rng(21);
    for _ in 0..50 {
        let n = rng.random_range(10..=60);
        let k = rng.random_range(2..=5).min(n);
        let rows = random_rows(&mut rng, n, 4);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let m = rng.random_range(1.05..3.0);
        let config = FcmConfig { k, m, tol: 1e-10, max_iter: 100 };
        let result = clustering::fcm(&matrix(&rows), &config, &assignment(&labels, k)).unwrap();
        for row in result.membership.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|u| (0.0..=1.0).contains(u)));
        }
        for w in result.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "{:?}", result.objective_history);
        }
        let recomputed =
            clustering::fcm_objective(&matrix(&rows).normalized().unwrap(), &result.membership, &result.centroids, m);
        assert!((recomputed - result.objective_history.last().unwrap()).abs() <= 1e-9 * recomputed.max(1.0));
    }
}

#[test]
fn fcm_separates_two_blobs() {
    let mut rng = seeded_rng(22);
    let mut rows = Vec::new();
    for centre in [[1.0, 0.1, 0.0, 0.0], [0.0, 0.0, 1.0, 0.2]] {
        for _ in 0..40 {
            rows.push(centre.iter().map(|c| c + rng.random_range(-0.05..0.05)).collect::<Vec<f64>>());
        }
    }
    let emb = matrix(&rows);
    let init = clustering::hac(&emb, 2).unwrap();
    let result = clustering::fcm(&emb, &FcmConfig { k: 2, m: 1.15, ..Default::default() }, &init).unwrap();
    assert!(result.converged);
    for (i, row) in result.membership.rows().enumerate() {
        let top = row.iter().copied().fold(0.0, f64::max);
        assert!(top > 0.99, "point {i}: {row:?}");
    }
    let first = result.membership.row(0);
    let last = result.membership.row(79);
    let argmax = |r: &[f64]| if r[0] > r[1] { 0 } else { 1 };
    assert_ne!(argmax(first), argmax(last));
}

#[test]
fn fcm_midpoint_is_ambiguous() {
    let mut rows = vec![vec![1.0, 0.0]; 10];
    rows.extend(vec![vec![0.0, 1.0]; 10]);
    rows.push(vec![1.0, 1.0]);
    let labels: Vec<usize> = (0..21).map(|i| usize::from(i >= 10)).collect();
    let result =
        clustering::fcm(&matrix(&rows), &FcmConfig { k: 2, m: 2.0, tol: 1e-13, max_iter: 500 }, &assignment(&labels, 2))
            .unwrap();
    let mid = result.membership.row(20);
    assert!((mid[0] - 0.5).abs() < 1e-6 && (mid[1] - 0.5).abs() < 1e-6, "{mid:?}");
}
