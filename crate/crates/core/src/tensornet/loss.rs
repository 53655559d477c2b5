use super::real::Real;
use super::tensor::Act;

/// Mean softmax cross-entropy over a batch of `(classes, N)` logits.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// Per-sample losses.
    pub per_sample: Vec<T>,
    /// Row-major `N x classes` probabilities.
    pub probs: Vec<T>,
    /// Gradient of the mean loss with respect to the logits.
    pub dlogits: Act<T>,
}

pub fn softmax_rows<T: Real>(logits: &Act<T>) -> Vec<T> {
    let (l, n) = (logits.c, logits.n);
    let mut p = vec![T::zero(); n * l];
    for b in 0..n {
        let mx = (0..l).map(|c| logits.data[c * n + b]).fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for c in 0..l {
            let e = (logits.data[c * n + b] - mx).exp();
            p[b * l + c] = e;
            z += e;
        }
        p[b * l..(b + 1) * l].iter_mut().for_each(|v| *v /= z);
    }
    p
}

pub fn cross_entropy<T: Real>(logits: &Act<T>, labels: &[usize]) -> LossOutput<T> {
    let (l, n) = (logits.c, logits.n);
    assert_eq!(labels.len(), n, "one label per sample");
    let probs = softmax_rows(logits);
    let mut per_sample = Vec::with_capacity(n);
    let mut d = Act::zeros(l, n, 1, 1);
    let inv_n = T::one() / T::of(n as f64);
    for (b, &y) in labels.iter().enumerate() {
        assert!(y < l, "label {y} out of range");
        let mx = (0..l).map(|c| logits.data[c * n + b]).fold(T::neg_infinity(), T::max);
        let lse = mx + (0..l).map(|c| (logits.data[c * n + b] - mx).exp()).sum::<T>().ln();
        per_sample.push(lse - logits.data[y * n + b]);
        for c in 0..l {
            let t = if c == y { T::one() } else { T::zero() };
            d.data[c * n + b] = (probs[b * l + c] - t) * inv_n;
        }
    }
    let loss = per_sample.iter().copied().sum::<T>() * inv_n;
    LossOutput { loss, per_sample, probs, dlogits: d }
}

/// Arg-max class per sample (lowest index on ties).
pub fn predictions<T: Real>(logits: &Act<T>) -> Vec<usize> {
    let (l, n) = (logits.c, logits.n);
    (0..n)
        .map(|b| {
            let mut best = 0;
            for c in 1..l {
                if logits.data[c * n + b] > logits.data[best * n + b] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
