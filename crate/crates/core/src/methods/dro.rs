use super::engine::{batch_grad, run_phase, source, Cycler, Model, Phase};
use super::{MethodError, StepLog, TrainConfig};
use crate::corpus::LabeledImageSet;
use crate::rng::derive_seed;
use crate::tensornet::{Batch, Network, Real, Sgd, WeightVector};

/// Gradient of the environment batch with the largest loss (lowest index
/// on ties), with that environment's index and every environment's loss.
pub fn dro_step<T: Real>(model: &mut Model<T>, batches: &[Batch<T>], mask: &[bool]) -> (usize, Vec<f64>, WeightVector<T>) {
    let mut losses = Vec::with_capacity(batches.len());
    let mut best: Option<(usize, WeightVector<T>)> = None;
    for (e, b) in batches.iter().enumerate() {
        let (loss, g) = batch_grad(model, b, mask);
        if losses.iter().all(|&l: &f64| loss > l) {
            best = Some((e, g));
        }
        losses.push(loss);
    }
    let (e, g) = best.expect("at least one environment");
    (e, losses, g)
}

/// Worst-environment training: one batch per environment per iteration,
/// back-propagating only the batch with the largest loss.
pub fn train_dro<T: Real>(
    model: &mut Model<T>,
    tc: &TrainConfig,
    envs: &[&LabeledImageSet],
    val: &LabeledImageSet,
    phase: &str,
) -> Result<StepLog, MethodError> {
    if envs.is_empty() {
        return Err(MethodError::Config("DRO needs at least one environment".into()));
    }
    let mut cyclers = envs
        .iter()
        .enumerate()
        .map(|(e, s)| source(s, tc, derive_seed(tc.seed, e as u64, &format!("{phase}/batches"))).map(Cycler::new))
        .collect::<Result<Vec<_>, _>>()?;
    let iters = cyclers.iter().map(|c| c.src.batches_per_epoch()).max().unwrap_or(1);
    let mask = Network::mask_all(&model.w);
    let mut opt = Sgd::new(tc.sgd(), &model.w);
    let p = Phase { name: phase.to_string(), step: envs.len() - 1, epochs: tc.epochs, lr: tc.lr, val, patience: None };
    run_phase(model, tc, p, |m, _epoch, lr| {
        let mut total = 0.0;
        for _ in 0..iters {
            let batches: Vec<Batch<T>> = cyclers.iter_mut().map(|c| c.next()).collect();
            let (e, losses, g) = dro_step(m, &batches, &mask);
            opt.step(&mut m.w, &g, &mask, lr)?;
            total += losses[e];
        }
        Ok(total / iters as f64)
    })
}
