use super::{MethodError, StepLog, TrainConfig};
use crate::corpus::{AugmentConfig, LabeledImageSet};
use crate::rng::derive_seed;
use crate::tensornet::train::pack;
use crate::tensornet::{cross_entropy, predictions, ArchSpec, Batch, BatchSource, Ctx, Network, Real, Sgd, SideKind, SideRecord, TensorError, WeightVector};

/// A network together with its weights.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub net: Network<T>,
    pub w: WeightVector<T>,
}

/// A saved model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub label: String,
    pub arch: ArchSpec,
    pub sides: Vec<SideRecord>,
    pub side_limit: Option<usize>,
    pub weights: WeightVector<T>,
}

impl<T: Real> Model<T> {
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self, MethodError> {
        let (net, w) = Network::new(arch, seed)?;
        Ok(Self { net, w })
    }

    pub fn checkpoint(&self, label: impl Into<String>) -> Checkpoint<T> {
        Checkpoint {
            label: label.into(),
            arch: self.net.arch,
            sides: self.net.sides.clone(),
            side_limit: self.net.side_limit,
            weights: self.w.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self, MethodError> {
        let mut net = Network::with_sides(ck.arch, &ck.sides, &ck.weights)?;
        net.side_limit = ck.side_limit;
        Ok(Self { net, w: ck.weights.clone() })
    }

    pub fn attach_sides(&mut self, step: usize, kind: SideKind, include_io: bool, seed: u64) -> Result<(), MethodError> {
        self.net.attach_sides(&mut self.w, step, kind, include_io, seed)?;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Result<Model<U>, MethodError> {
        let w = self.w.cast::<U>();
        let mut net = Network::with_sides(self.net.arch, &self.net.sides, &w)?;
        net.side_limit = self.net.side_limit;
        Ok(Model { net, w })
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

const EVAL_BATCH: usize = 256;

/// Eval-mode accuracy on `set`.
pub fn accuracy<T: Real>(model: &mut Model<T>, set: &LabeledImageSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let batch: Batch<T> = pack(set, chunk, None, 0);
        let logits = model.net.forward(batch.x, &mut model.w, &Ctx::eval());
        correct += predictions(&logits).iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    }
    correct as f64 / set.len() as f64
}

/// Mean cross-entropy and its gradient on one batch (training mode).
pub fn batch_grad<T: Real>(model: &mut Model<T>, batch: &Batch<T>, mask: &[bool]) -> (f64, WeightVector<T>) {
    let ctx = Ctx::train(mask);
    let mut g = model.w.zeros_like();
    let logits = model.net.forward(batch.x.clone(), &mut model.w, &ctx);
    let out = cross_entropy(&logits, &batch.labels);
    model.net.backward(out.dlogits, &model.w, &mut g, &ctx);
    (out.loss.f64(), g)
}

pub(crate) fn augment_cfg(tc: &TrainConfig) -> Option<AugmentConfig> {
    tc.augment.then(AugmentConfig::default)
}

pub(crate) fn source<'a>(set: &'a LabeledImageSet, tc: &TrainConfig, seed: u64) -> Result<BatchSource<'a>, MethodError> {
    if set.len() < 2 {
        return Err(MethodError::Data(format!("training set of {} samples is too small", set.len())));
    }
    Ok(BatchSource::new(set, tc.batch_size.min(set.len()), augment_cfg(tc), seed))
}

/// Shuffled batches for `epoch`, folding a trailing single sample into the
/// previous batch (batch statistics need at least two samples).
pub(crate) fn epoch_batches(src: &BatchSource, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = src.epoch_order(epoch);
    if order.len() > 1 && order.last().is_some_and(|b| b.len() < 2) {
        let tail = order.pop().unwrap_or_default();
        if let Some(prev) = order.last_mut() {
            prev.extend(tail);
        }
    }
    order
}

/// Endless batch stream over one set, reshuffled on every pass.
pub(crate) struct Cycler<'a> {
    pub src: BatchSource<'a>,
    pass: usize,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl<'a> Cycler<'a> {
    pub fn new(src: BatchSource<'a>) -> Self {
        Self { src, pass: 0, queue: Default::default() }
    }

    pub fn next<T: Real>(&mut self) -> Batch<T> {
        if self.queue.is_empty() {
            self.queue = epoch_batches(&self.src, self.pass).into();
            self.pass += 1;
        }
        let idx = self.queue.pop_front().expect("nonempty epoch");
        self.src.make(&idx, self.pass - 1)
    }
}

/// How a training phase is run and selected.
pub(crate) struct Phase<'a> {
    pub name: String,
    pub step: usize,
    pub epochs: usize,
    pub lr: f64,
    pub val: &'a LabeledImageSet,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

/// Run `epochs` epochs of `epoch_fn` and keep the weights of the epoch with
/// the best validation accuracy (earliest on ties).
pub(crate) fn run_phase<T: Real>(
    model: &mut Model<T>,
    tc: &TrainConfig,
    phase: Phase,
    mut epoch_fn: impl FnMut(&mut Model<T>, usize, f64) -> Result<f64, MethodError>,
) -> Result<StepLog, MethodError> {
    let mut best: Option<(f64, usize, WeightVector<T>)> = None;
    let mut last_loss = f64::NAN;
    let mut since_best = 0;
    let mut ran = 0;
    for epoch in 0..phase.epochs {
        let lr = tc.lr_at(phase.lr, epoch, phase.epochs);
        last_loss = epoch_fn(model, epoch, lr)?;
        ran += 1;
        if !last_loss.is_finite() || !model.w.all_finite() {
            return Err(TensorError::NonFinite(format!("{} epoch {}", phase.name, epoch + 1)).into());
        }
        let acc = accuracy(model, phase.val);
        if best.as_ref().is_none_or(|b| acc > b.0) {
            best = Some((acc, epoch + 1, model.w.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::debug!("{} step {} epoch {}: loss {last_loss:.4} val {acc:.4}", phase.name, phase.step, epoch + 1);
        if phase.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    let (val_acc, best_epoch) = match best {
        Some((acc, e, w)) => {
            model.w = w;
            (acc, e)
        }
        None => (accuracy(model, phase.val), 0),
    };
    Ok(StepLog { phase: phase.name, step: phase.step, lr: phase.lr, epochs_run: ran, best_epoch, train_loss: last_loss, val_acc })
}

/// Batch-order seed for a named data stream. Every method that trains on
/// the same set with the same key sees the same batches.
pub fn stream_seed(tc: &TrainConfig, key: Stream) -> u64 {
    match key {
        Stream::Final => derive_seed(tc.seed, 0, "stream/final"),
        Stream::Step(t) => derive_seed(tc.seed, t as u64, "stream/step"),
        Stream::History => derive_seed(tc.seed, 0, "stream/history"),
        Stream::All => derive_seed(tc.seed, 0, "stream/all"),
        Stream::Oracle => derive_seed(tc.seed, 0, "stream/oracle"),
    }
}

/// Named training sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// The final step's training split.
    Final,
    /// An earlier step's training split.
    Step(usize),
    /// All earlier steps pooled.
    History,
    /// All steps pooled.
    All,
    Oracle,
}

/// Seed of the side modules added for `step`.
pub fn side_seed(tc: &TrainConfig, step: usize) -> u64 {
    derive_seed(tc.seed, step as u64, "side")
}

/// Initial weights seed shared by every method.
pub fn init_seed(tc: &TrainConfig) -> u64 {
    derive_seed(tc.seed, 0, "init")
}

/// Arguments of one plain training phase.
#[derive(Debug, Clone, Copy)]
pub struct FitArgs<'a> {
    pub data: &'a LabeledImageSet,
    pub val: &'a LabeledImageSet,
    pub epochs: usize,
    pub lr: f64,
    pub stream: Stream,
    pub phase: &'a str,
    pub step: usize,
    pub patience: Option<usize>,
}

/// Plain SGD on one set with the given trainable mask.
pub fn fit_erm<T: Real>(model: &mut Model<T>, tc: &TrainConfig, args: FitArgs, mask: &[bool]) -> Result<StepLog, MethodError> {
    fit_with(model, tc, args, mask, |_, _| Ok(()))
}

/// [`fit_erm`] with a hook run after every optimizer step (proximal terms).
pub(crate) fn fit_with<T: Real>(
    model: &mut Model<T>,
    tc: &TrainConfig,
    args: FitArgs,
    mask: &[bool],
    mut after_step: impl FnMut(&mut Model<T>, f64) -> Result<(), MethodError>,
) -> Result<StepLog, MethodError> {
    let src = source(args.data, tc, stream_seed(tc, args.stream))?;
    let mut opt = Sgd::new(tc.sgd(), &model.w);
    let p = Phase { name: args.phase.to_string(), step: args.step, epochs: args.epochs, lr: args.lr, val: args.val, patience: args.patience };
    run_phase(model, tc, p, |m, epoch, lr| {
        let mut total = 0.0;
        let batches = epoch_batches(&src, epoch);
        for idx in &batches {
            let batch: Batch<T> = src.make(idx, epoch);
            let (loss, g) = batch_grad(m, &batch, mask);
            opt.step(&mut m.w, &g, mask, lr)?;
            after_step(m, lr)?;
            total += loss;
        }
        Ok(total / batches.len() as f64)
    })
}
