use super::real::Real;
use super::tensor::Act;
use super::weights::WeightVector;
use super::TensorError;
use crate::corpus::{augment, AugmentConfig, LabeledImageSet};
use crate::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = mu * v + (g + wd * w)`, `w -= lr * v`, on entries selected by the mask.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig, w: &WeightVector<T>) -> Self {
        Self { config, velocity: w.entries().iter().map(|e| vec![T::zero(); e.data.len()]).collect() }
    }

    /// Grow the state after entries were appended to the weights.
    pub fn extend_to(&mut self, w: &WeightVector<T>) {
        for e in &w.entries()[self.velocity.len()..] {
            self.velocity.push(vec![T::zero(); e.data.len()]);
        }
    }

    pub fn step(&mut self, w: &mut WeightVector<T>, g: &WeightVector<T>, mask: &[bool], lr: f64) -> Result<(), TensorError> {
        w.check_schema(g)?;
        self.extend_to(w);
        let (mu, wd, lr) = (T::of(self.config.momentum), T::of(self.config.weight_decay), T::of(lr));
        for (i, v) in self.velocity.iter_mut().enumerate() {
            if !mask.get(i).copied().unwrap_or(false) || !w.is_param(i) {
                continue;
            }
            let gd = g.data(i);
            let wd_ = w.data_mut(i);
            for ((x, &gv), vel) in wd_.iter_mut().zip(gd).zip(v.iter_mut()) {
                *vel = mu * *vel + gv + wd * *x;
                *x -= lr * *vel;
            }
        }
        Ok(())
    }
}

/// A packed mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Act<T>,
    pub labels: Vec<usize>,
    /// Positions in the source set.
    pub indices: Vec<usize>,
}

/// Seeded mini-batch producer over one image set.
#[derive(Debug, Clone)]
pub struct BatchSource<'a> {
    pub set: &'a LabeledImageSet,
    pub batch_size: usize,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl<'a> BatchSource<'a> {
    pub fn new(set: &'a LabeledImageSet, batch_size: usize, augment: Option<AugmentConfig>, seed: u64) -> Self {
        Self { set, batch_size: batch_size.max(1), augment, seed }
    }

    /// Shuffled index chunks for `epoch`; the last batch may be short.
    pub fn epoch_order(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.set.len()).collect();
        SplitMix64::stream(self.seed, epoch as u64, "batch/order").shuffle(&mut idx);
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.set.len().div_ceil(self.batch_size)
    }

    /// Pack the given samples, augmenting each with a per-(epoch, sample) draw.
    pub fn make<T: Real>(&self, indices: &[usize], epoch: usize) -> Batch<T> {
        pack(self.set, indices, self.augment.as_ref(), derive_seed(self.seed, epoch as u64, "batch/augment"))
    }
}

/// Pack samples of `set` into a batch scaled to `[0, 1]`.
pub fn pack<T: Real>(set: &LabeledImageSet, indices: &[usize], aug: Option<&AugmentConfig>, seed: u64) -> Batch<T> {
    let first = &set.images[indices[0]];
    let (c, h, w) = (first.channels, first.height, first.width);
    let scale = T::of(1.0 / 255.0);
    let imgs: Vec<Vec<T>> = indices
        .iter()
        .map(|&i| {
            let img = &set.images[i];
            let data = match aug {
                Some(cfg) => augment(img, &cfg.for_side(w), derive_seed(seed, i as u64, "sample")).data,
                None => img.data.clone(),
            };
            data.iter().map(|&v| T::of(f64::from(v)) * scale).collect()
        })
        .collect();
    let refs: Vec<&[T]> = imgs.iter().map(|v| v.as_slice()).collect();
    Batch { x: Act::from_images(&refs, c, h, w), labels: indices.iter().map(|&i| set.labels[i]).collect(), indices: indices.to_vec() }
}
