use super::engine::{batch_grad, fit_erm, fit_with, FitArgs, Model, Stream};
use super::finetune::side_tune;
use super::{Checkpoint, LrSchedule, MethodConfig, MethodError, StepLog};
use crate::corpus::LabeledImageSet;
use crate::rng::SplitMix64;
use crate::tensornet::train::pack;
use crate::tensornet::{Batch, Ctx, Network, Real, SideKind, WeightVector};

/// Training split, validation split used for selection, and data stream of one step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub train: &'a LabeledImageSet,
    pub val: &'a LabeledImageSet,
    pub stream: Stream,
}

/// Rate at step `t` (> 0) of a sequential run, or the candidates to choose from.
fn step_rates(cfg: &MethodConfig, t: usize) -> Vec<f64> {
    match &cfg.schedule {
        LrSchedule::None { grid } if !grid.is_empty() => grid.clone(),
        s => vec![s.rate(cfg.train.lr, t)],
    }
}

/// Train `model` on step `t` with every candidate rate and keep the best by
/// validation accuracy (first on ties).
fn fit_best_rate<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    input: StepInput,
    t: usize,
    mut fit: impl FnMut(&mut Model<T>, FitArgs) -> Result<StepLog, MethodError>,
) -> Result<StepLog, MethodError> {
    let epochs = if t == 0 { cfg.train.epochs } else { cfg.adapt_epochs() };
    let rates = step_rates(cfg, t);
    let start = model.clone();
    let mut best: Option<(StepLog, Model<T>)> = None;
    for lr in rates {
        let mut m = start.clone();
        let args = FitArgs { data: input.train, val: input.val, epochs, lr, stream: input.stream, phase: "sequential", step: t, patience: None };
        let log = fit(&mut m, args)?;
        if best.as_ref().is_none_or(|b| log.val_acc > b.0.val_acc) {
            best = Some((log, m));
        }
    }
    let (log, m) = best.expect("at least one rate");
    *model = m;
    Ok(log)
}

/// Fit step 0 from the current weights, then fine-tune each later step from
/// the previous step's result. Returns a checkpoint after every step.
pub fn sequential_finetune<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    steps: &[StepInput],
) -> Result<(Vec<StepLog>, Vec<Checkpoint<T>>), MethodError> {
    cfg.schedule.validate(cfg.train.lr, steps.len())?;
    let mut logs = Vec::new();
    let mut cks = Vec::new();
    for (t, input) in steps.iter().enumerate() {
        let log = fit_best_rate(model, cfg, *input, t, |m, args| {
            let mask = Network::mask_all(&m.w);
            fit_erm(m, &cfg.train, args, &mask)
        })?;
        logs.push(log);
        cks.push(model.checkpoint(format!("step{t}")));
    }
    Ok((logs, cks))
}

/// Diagonal empirical Fisher: mean over up to `max_samples` samples of the
/// squared per-sample gradient of `-log p(y | x)`, with batch norm on its
/// running statistics. Buffers get zeros.
pub fn fisher_diagonal<T: Real>(model: &mut Model<T>, set: &LabeledImageSet, max_samples: usize, seed: u64) -> WeightVector<T> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    SplitMix64::stream(seed, 0, "fisher").shuffle(&mut idx);
    idx.truncate(max_samples.max(1).min(set.len()));
    let mask = Network::mask_all(&model.w);
    let ctx = Ctx { bn_running: true, ..Ctx::train(&mask) };
    let mut f = model.w.zeros_like();
    for &i in &idx {
        let b: Batch<T> = pack(set, &[i], None, 0);
        let mut g = model.w.zeros_like();
        let logits = model.net.forward(b.x, &mut model.w, &ctx);
        let out = crate::tensornet::cross_entropy(&logits, &b.labels);
        model.net.backward(out.dlogits, &model.w, &mut g, &ctx);
        for e in 0..f.len() {
            if f.is_param(e) {
                for (a, &v) in f.data_mut(e).iter_mut().zip(g.data(e)) {
                    *a += v * v;
                }
            }
        }
    }
    f.scale(T::one() / T::of(idx.len() as f64));
    f
}

/// `(lambda / 2) * sum_j F_j (w - w_j)^2` and its gradient.
pub fn ewc_penalty<T: Real>(w: &WeightVector<T>, anchors: &[(WeightVector<T>, WeightVector<T>)], lambda: f64) -> (f64, WeightVector<T>) {
    let mut g = w.zeros_like();
    let mut value = 0.0;
    let lam = T::of(lambda);
    for (fisher, snap) in anchors {
        for e in 0..w.len() {
            if !w.is_param(e) {
                continue;
            }
            let (wd, fd, sd) = (w.data(e), fisher.data(e), snap.data(e));
            let gd = g.data_mut(e);
            for k in 0..wd.len() {
                let diff = wd[k] - sd[k];
                value += 0.5 * lambda * (fd[k] * diff * diff).f64();
                gd[k] += lam * fd[k] * diff;
            }
        }
    }
    (value, g)
}

/// Accumulated `(sum_j F_j, sum_j F_j w_j)` for the proximal step.
struct EwcAnchor<T> {
    f_sum: WeightVector<T>,
    fw_sum: WeightVector<T>,
}

impl<T: Real> EwcAnchor<T> {
    fn new(w: &WeightVector<T>) -> Self {
        Self { f_sum: w.zeros_like(), fw_sum: w.zeros_like() }
    }

    fn add(&mut self, fisher: &WeightVector<T>, snap: &WeightVector<T>) {
        self.f_sum.add_scaled(fisher, T::one());
        for e in 0..snap.len() {
            if snap.is_param(e) {
                let (fd, sd) = (fisher.data(e).to_vec(), snap.data(e));
                for (a, (&f, &s)) in self.fw_sum.data_mut(e).iter_mut().zip(fd.iter().zip(sd)) {
                    *a += f * s;
                }
            }
        }
    }

    /// Exact minimizer of `|w - v|^2 / (2 lr) + (lambda / 2) sum_j F_j (w - w_j)^2`.
    fn prox(&self, w: &mut WeightVector<T>, lambda: f64, lr: f64) {
        let c = T::of(lambda * lr);
        for e in 0..w.len() {
            if !w.is_param(e) {
                continue;
            }
            let (fs, fws) = (self.f_sum.data(e), self.fw_sum.data(e));
            for (k, v) in w.data_mut(e).iter_mut().enumerate() {
                *v = (*v + c * fws[k]) / (T::one() + c * fs[k]);
            }
        }
    }
}

/// Sequential fine-tuning where step `t` also pulls each weight toward every
/// earlier step's solution in proportion to its Fisher information. The
/// penalty enters through an exact proximal step after each SGD update, so
/// very large `lambda` stays stable; `lambda = 0` is plain sequential fine-tuning.
pub fn ewc_train<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    steps: &[StepInput],
) -> Result<(Vec<StepLog>, Vec<Checkpoint<T>>), MethodError> {
    cfg.schedule.validate(cfg.train.lr, steps.len())?;
    let lambda = cfg.lambda_ewc;
    let mut anchor = EwcAnchor::new(&model.w);
    let mut logs = Vec::new();
    let mut cks = Vec::new();
    for (t, input) in steps.iter().enumerate() {
        let log = fit_best_rate(model, cfg, *input, t, |m, args| {
            let mask = Network::mask_all(&m.w);
            if t == 0 || lambda == 0.0 {
                fit_erm(m, &cfg.train, args, &mask)
            } else {
                fit_with(m, &cfg.train, args, &mask, |m, lr| {
                    anchor.prox(&mut m.w, lambda, lr);
                    Ok(())
                })
            }
        })?;
        logs.push(log);
        cks.push(model.checkpoint(format!("step{t}")));
        if t + 1 < steps.len() && lambda > 0.0 {
            let fisher = fisher_diagonal(model, input.train, cfg.fisher_samples, cfg.train.seed ^ t as u64);
            anchor.add(&fisher, &model.w);
        }
    }
    Ok((logs, cks))
}

/// Fit step 0, then for each later step add fresh side modules and fit only them.
pub fn sequential_side_tune<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    kind: SideKind,
    steps: &[StepInput],
) -> Result<(Vec<StepLog>, Vec<Checkpoint<T>>), MethodError> {
    let mut logs = Vec::new();
    let mut cks = Vec::new();
    for (t, input) in steps.iter().enumerate() {
        let log = if t == 0 {
            let args = FitArgs {
                data: input.train,
                val: input.val,
                epochs: cfg.train.epochs,
                lr: cfg.train.lr,
                stream: input.stream,
                phase: "sequential",
                step: 0,
                patience: None,
            };
            let mask = Network::mask_all(&model.w);
            fit_erm(model, &cfg.train, args, &mask)?
        } else {
            side_tune(model, cfg, kind, t, input.train, input.val, input.stream, cfg.adapt_lr())?
        };
        logs.push(log);
        cks.push(model.checkpoint(format!("step{t}")));
    }
    Ok((logs, cks))
}

/// Gradient of the data loss at one batch plus the EWC penalty (used by checks).
pub fn ewc_objective_grad<T: Real>(
    model: &mut Model<T>,
    batch: &Batch<T>,
    anchors: &[(WeightVector<T>, WeightVector<T>)],
    lambda: f64,
) -> (f64, WeightVector<T>) {
    let mask = Network::mask_all(&model.w);
    let (loss, mut g) = batch_grad(model, batch, &mask);
    let (pen, pg) = ewc_penalty(&model.w, anchors, lambda);
    g.add_scaled(&pg, T::one());
    (loss + pen, g)
}
