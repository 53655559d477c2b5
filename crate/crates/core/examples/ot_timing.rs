use seqfinal::rng::SplitMix64;
use seqfinal::shiftmetrics::wasserstein2;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let d: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let mut rng = SplitMix64::new(1);
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.normal() + 0.1).collect()).collect();
    let t = Instant::now();
    let (w, plan) = wasserstein2(&a, &b).unwrap();
    println!("n={n} d={d} W={w:.6} pivots={} gap={:e} minrc={:e} time={:?}", plan.pivots, plan.cost - plan.dual_bound, plan.min_reduced_cost, t.elapsed());
}
