//! Exact transport against an independent brute-force oracle.

use proptest::prelude::*;
use seqfinal::rng::SplitMix64;
use seqfinal::shiftmetrics::{conditional_wasserstein2, euclidean, wasserstein2};

/// Minimum over all permutations of the mean matched distance (Heap's algorithm).
fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| euclidean(&a[i], &b[j])).sum::<f64>() / n as f64;
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn cloud(rng: &mut SplitMix64, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect()
}

#[test]
fn matches_permutation_oracle() {
    let mut rng = SplitMix64::new(2024);
    for _ in 0..200 {
        let n = 2 + rng.below(5) as usize;
        let d = 1 + rng.below(5) as usize;
        let a = cloud(&mut rng, n, d);
        let b = cloud(&mut rng, n, d);
        let (w, plan) = wasserstein2(&a, &b).unwrap();
        let oracle = brute_force(&a, &b);
        assert!((plan.cost - oracle).abs() < 1e-9, "cost {} oracle {oracle}", plan.cost);
        assert!((w - oracle.sqrt()).abs() < 1e-9);
        for r in plan.row_sums() {
            assert!((r - 1.0 / n as f64).abs() < 1e-9);
        }
        for c in plan.col_sums() {
            assert!((c - 1.0 / n as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn conditional_matches_per_class_oracle() {
    let mut rng = SplitMix64::new(7);
    for _ in 0..20 {
        let a = cloud(&mut rng, 8, 3);
        let b = cloud(&mut rng, 8, 3);
        let la = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let lb = vec![1, 1, 0, 0, 0, 1, 1, 0];
        let pick = |pts: &[Vec<f64>], ls: &[usize], c| pts.iter().zip(ls).filter(|(_, &l)| l == c).map(|(p, _)| p.clone()).collect::<Vec<_>>();
        let oracle: f64 = (0..2).map(|c| 0.5 * brute_force(&pick(&a, &la, c), &pick(&b, &lb, c)).sqrt()).sum();
        let got = conditional_wasserstein2(&a, &la, &b, &lb, 2).unwrap();
        assert!((got - oracle).abs() < 1e-9);
    }
}

#[test]
fn single_class_reduces_to_plain_distance() {
    let mut rng = SplitMix64::new(8);
    let a = cloud(&mut rng, 12, 4);
    let b = cloud(&mut rng, 9, 4);
    let (w, _) = wasserstein2(&a, &b).unwrap();
    let c = conditional_wasserstein2(&a, &[0; 12], &b, &[0; 9], 1).unwrap();
    assert!((w - c).abs() < 1e-12);
}

#[test]
fn large_instance_has_a_dual_certificate() {
    let mut rng = SplitMix64::new(99);
    let a = cloud(&mut rng, 300, 10);
    let b = cloud(&mut rng, 250, 10);
    let (_, plan) = wasserstein2(&a, &b).unwrap();
    assert!((plan.cost - plan.dual_bound).abs() < 1e-9, "gap {}", plan.cost - plan.dual_bound);
    assert!(plan.min_reduced_cost > -1e-9);
    assert!(plan.entries.len() < 300 + 250);
}

fn pts(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=3).prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 2..=max_n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_and_duality(a in pts(9), seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let d = a[0].len();
        let m = 2 + rng.below(8) as usize;
        let b = (0..m).map(|_| (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (_, plan) = wasserstein2(&a, &b).unwrap();
        for r in plan.row_sums() { prop_assert!((r - 1.0 / a.len() as f64).abs() < 1e-9); }
        for c in plan.col_sums() { prop_assert!((c - 1.0 / m as f64).abs() < 1e-9); }
        prop_assert!(plan.entries.iter().all(|e| e.2 >= 0.0));
        prop_assert!((plan.cost - plan.dual_bound).abs() < 1e-9);
        let recomputed: f64 = plan.entries.iter().map(|&(i, j, t)| t * euclidean(&a[i], &b[j])).sum();
        prop_assert!((recomputed - plan.cost).abs() < 1e-9);
    }

    #[test]
    fn symmetric(a in pts(8), seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        let d = a[0].len();
        let b = (0..5).map(|_| (0..d).map(|_| rng.uniform(-5.0, 5.0)).collect()).collect::<Vec<Vec<f64>>>();
        let (ab, _) = wasserstein2(&a, &b).unwrap();
        let (ba, _) = wasserstein2(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn triangle_on_equal_sizes(seed in any::<u64>(), n in 2usize..8, d in 1usize..4) {
        let mut rng = SplitMix64::new(seed);
        let a = cloud(&mut rng, n, d);
        let b = cloud(&mut rng, n, d);
        let c = cloud(&mut rng, n, d);
        let cost = |x: &[Vec<f64>], y: &[Vec<f64>]| wasserstein2(x, y).unwrap().1.cost;
        prop_assert!(cost(&a, &c) <= cost(&a, &b) + cost(&b, &c) + 1e-6);
    }
}
