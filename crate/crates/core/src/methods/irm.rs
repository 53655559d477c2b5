use super::engine::{run_phase, source, Cycler, Model, Phase};
use super::{MethodError, StepLog, TrainConfig};
use crate::corpus::LabeledImageSet;
use crate::rng::derive_seed;
use crate::tensornet::{cross_entropy, Act, Batch, Ctx, Real, Sgd, WeightVector};

/// The minimal IRM penalty on one environment batch and its logit gradient.
#[derive(Debug, Clone)]
pub struct IrmPenalty<T> {
    pub value: T,
    /// Dummy-scale gradients of the two halves.
    pub g: (T, T),
    pub dlogits: Act<T>,
}

/// `g1 * g2`, where `g_h` is the derivative at `s = 1` of the mean
/// cross-entropy of `s * logits` over half `h` of the batch (first and
/// second half by position).
pub fn irm_penalty<T: Real>(logits: &Act<T>, labels: &[usize]) -> Result<IrmPenalty<T>, MethodError> {
    let (l, n) = (logits.c, logits.n);
    if n < 2 {
        return Err(MethodError::Data("IRM penalty needs at least two samples to split".into()));
    }
    let halves = [(0, n / 2), (n / 2, n)];
    let probs = crate::tensornet::loss::softmax_rows(logits);
    let z = |c: usize, b: usize| logits.data[c * n + b];
    let mut g = [T::zero(); 2];
    for (h, &(lo, hi)) in halves.iter().enumerate() {
        let inv = T::one() / T::of((hi - lo) as f64);
        for b in lo..hi {
            for c in 0..l {
                let t = if c == labels[b] { T::one() } else { T::zero() };
                g[h] += (probs[b * l + c] - t) * z(c, b) * inv;
            }
        }
    }
    let mut d = Act::zeros(l, n, 1, 1);
    for (h, &(lo, hi)) in halves.iter().enumerate() {
        let other = g[1 - h];
        let inv = T::one() / T::of((hi - lo) as f64);
        for b in lo..hi {
            let zbar = (0..l).map(|c| probs[b * l + c] * z(c, b)).sum::<T>();
            for c in 0..l {
                let p = probs[b * l + c];
                let t = if c == labels[b] { T::one() } else { T::zero() };
                d.data[c * n + b] = other * inv * (p - t + p * (z(c, b) - zbar));
            }
        }
    }
    Ok(IrmPenalty { value: g[0] * g[1], g: (g[0], g[1]), dlogits: d })
}

/// Mean environment cross-entropy plus `lambda` times the mean penalty, and
/// its gradient; each environment batch runs through the network on its own.
pub fn irm_objective<T: Real>(model: &mut Model<T>, batches: &[Batch<T>], lambda: f64, mask: &[bool]) -> Result<(f64, WeightVector<T>), MethodError> {
    let ctx = Ctx::train(mask);
    let mut g = model.w.zeros_like();
    let inv_e = T::one() / T::of(batches.len() as f64);
    let lam = T::of(lambda);
    let mut total = 0.0;
    for b in batches {
        let logits = model.net.forward(b.x.clone(), &mut model.w, &ctx);
        let ce = cross_entropy(&logits, &b.labels);
        let mut d = ce.dlogits;
        let mut value = ce.loss;
        if lambda > 0.0 {
            let pen = irm_penalty(&logits, &b.labels)?;
            value += lam * pen.value;
            for (a, p) in d.data.iter_mut().zip(&pen.dlogits.data) {
                *a += lam * *p;
            }
        }
        d.data.iter_mut().for_each(|v| *v *= inv_e);
        model.net.backward(d, &model.w, &mut g, &ctx);
        total += value.f64();
    }
    Ok((total / batches.len() as f64, g))
}

/// IRM over environments (one batch from each per iteration). An epoch is
/// one pass over the largest environment.
pub fn train_irm<T: Real>(
    model: &mut Model<T>,
    tc: &TrainConfig,
    envs: &[&LabeledImageSet],
    val: &LabeledImageSet,
    lambda: f64,
    phase: &str,
) -> Result<StepLog, MethodError> {
    if envs.len() < 2 {
        return Err(MethodError::Config("IRM needs at least two environments".into()));
    }
    let mut cyclers = envs
        .iter()
        .enumerate()
        .map(|(e, s)| source(s, tc, derive_seed(tc.seed, e as u64, &format!("{phase}/batches"))).map(Cycler::new))
        .collect::<Result<Vec<_>, _>>()?;
    let iters = cyclers.iter().map(|c| c.src.batches_per_epoch()).max().unwrap_or(1);
    let mask = crate::tensornet::Network::mask_all(&model.w);
    let mut opt = Sgd::new(tc.sgd(), &model.w);
    let p = Phase { name: phase.to_string(), step: envs.len() - 1, epochs: tc.epochs, lr: tc.lr, val, patience: None };
    run_phase(model, tc, p, |m, _epoch, lr| {
        let mut total = 0.0;
        for _ in 0..iters {
            let batches: Vec<Batch<T>> = cyclers.iter_mut().map(|c| c.next()).collect();
            let (loss, g) = irm_objective(m, &batches, lambda, &mask)?;
            opt.step(&mut m.w, &g, &mask, lr)?;
            total += loss;
        }
        Ok(total / iters as f64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(n: usize) -> Act<f64> {
        Act { c: 3, n, h: 1, w: 1, data: (0..3 * n).map(|i| ((i * 5) as f64 * 0.7).sin() * 2.0).collect() }
    }

    #[test]
    fn penalty_gradient_matches_finite_difference() {
        let z = logits(6);
        let y = [0, 2, 1, 1, 0, 2];
        let pen = irm_penalty(&z, &y).unwrap();
        for i in 0..z.len() {
            let mut up = z.clone();
            up.data[i] += 1e-6;
            let mut dn = z.clone();
            dn.data[i] -= 1e-6;
            let fd = (irm_penalty(&up, &y).unwrap().value - irm_penalty(&dn, &y).unwrap().value) / 2e-6;
            assert!((fd - pen.dlogits.data[i]).abs() < 1e-7, "{i}: {fd} vs {}", pen.dlogits.data[i]);
        }
    }

    #[test]
    fn dummy_gradient_matches_finite_difference_in_scale() {
        let z = logits(4);
        let y = [1, 0, 2, 2];
        let pen = irm_penalty(&z, &y).unwrap();
        let half_loss = |s: f64, lo: usize, hi: usize| {
            let mut scaled = Act::zeros(3, hi - lo, 1, 1);
            for c in 0..3 {
                for b in lo..hi {
                    scaled.data[c * (hi - lo) + b - lo] = s * z.data[c * 4 + b];
                }
            }
            cross_entropy(&scaled, &y[lo..hi]).loss
        };
        let g1 = (half_loss(1.0 + 1e-6, 0, 2) - half_loss(1.0 - 1e-6, 0, 2)) / 2e-6;
        let g2 = (half_loss(1.0 + 1e-6, 2, 4) - half_loss(1.0 - 1e-6, 2, 4)) / 2e-6;
        assert!((g1 - pen.g.0).abs() < 1e-6 && (g2 - pen.g.1).abs() < 1e-6);
        assert!((pen.value - g1 * g2).abs() < 1e-6);
    }

    #[test]
    fn identical_halves_give_square_and_perfect_fit_gives_zero() {
        let mut z = logits(2);
        // copy sample 0 into sample 1
        for c in 0..3 {
            z.data[c * 2 + 1] = z.data[c * 2];
        }
        let pen = irm_penalty(&z, &[1, 1]).unwrap();
        assert!((pen.value - pen.g.0 * pen.g.0).abs() < 1e-15 && pen.value >= 0.0);
        let confident: Act<f64> = Act { c: 2, n: 2, h: 1, w: 1, data: vec![200.0, -200.0, -200.0, 200.0] };
        assert!(irm_penalty(&confident, &[0, 1]).unwrap().value.abs() < 1e-12);
        assert!(irm_penalty(&logits(1), &[0]).is_err());
    }
}
