use super::engine::{accuracy, batch_grad, side_seed, epoch_batches, run_phase, source, stream_seed, Cycler, Model, Phase};
use super::sequential::StepInput;
use super::{MethodError, StepLog, TrainConfig};
use crate::tensornet::{Batch, Network, Real, Sgd, SideKind, WeightVector};

/// How the per-step models of a joint model are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointVariant {
    /// One full weight set per step, coupled by `lambda_adj * |w_t - w_{t-1}|^2`.
    Separate,
    /// A shared base plus side modules; step `t` uses the base and sides `1..=t`,
    /// and the coupling term is `lambda_adj * |S_t|^2`.
    Side(SideKind),
}

/// Everything a joint fit needs besides the starting weights.
#[derive(Debug, Clone)]
pub struct JointSpec<'a> {
    pub variant: JointVariant,
    /// One entry per step; the last is the final step.
    pub steps: Vec<StepInput<'a>>,
    /// Loss weight per step.
    pub weights: Vec<f64>,
    pub lambda_adj: f64,
    /// Layers whose weights every step shares (separate variant only).
    pub shared_layers: Vec<String>,
    /// Steps kept at their starting weights.
    pub frozen: Vec<usize>,
    /// Start each trainable step from the previous step's starting weights.
    pub prev_init: bool,
    pub epochs: usize,
    pub lr: f64,
    pub include_io: bool,
}

/// Fitted joint model.
#[derive(Debug, Clone)]
pub struct JointModel<T> {
    /// Separate: one model per step. Side: a single model with every side attached.
    pub models: Vec<Model<T>>,
    pub variant: JointVariant,
    pub log: StepLog,
    /// Starting weights of the final step's model.
    pub start: Model<T>,
}

impl<T: Real> JointModel<T> {
    /// The model of step `t`.
    pub fn step_model(&self, t: usize) -> Model<T> {
        match self.variant {
            JointVariant::Separate => self.models[t].clone(),
            JointVariant::Side(_) => {
                let mut m = self.models[0].clone();
                m.net.side_limit = Some(t);
                m
            }
        }
    }
}

impl<'a> JointSpec<'a> {
    fn validate(&self) -> Result<(), MethodError> {
        let n = self.steps.len();
        if n == 0 || self.weights.len() != n {
            return Err(MethodError::Config(format!("{} steps but {} loss weights", n, self.weights.len())));
        }
        if self.weights.iter().any(|&c| !(c >= 0.0)) || !(self.weights[n - 1] > 0.0) {
            return Err(MethodError::Config("loss weights must be nonnegative with a positive final weight".into()));
        }
        if let Some(&t) = self.frozen.iter().find(|&&t| t >= n) {
            return Err(MethodError::Config(format!("frozen step {t} out of range")));
        }
        if self.frozen.contains(&(n - 1)) {
            return Err(MethodError::Config("the final step cannot be frozen".into()));
        }
        if !self.shared_layers.is_empty() {
            if matches!(self.variant, JointVariant::Side(_)) {
                return Err(MethodError::Config("layer sharing applies to the separate variant only".into()));
            }
            if !self.frozen.is_empty() {
                return Err(MethodError::Config("shared layers cannot be combined with frozen steps".into()));
            }
        }
        Ok(())
    }

    fn is_frozen(&self, t: usize) -> bool {
        self.frozen.contains(&t)
    }
}

/// Scale of step `t`'s gradient: the objective is divided by the final weight.
fn step_scale(spec: &JointSpec, t: usize) -> f64 {
    spec.weights[t] / spec.weights[spec.steps.len() - 1]
}

/// Per-step batch streams: the final step walks the epoch order of its own
/// stream, earlier steps cycle endlessly.
struct Streams<'a> {
    final_src: crate::tensornet::BatchSource<'a>,
    others: Vec<Cycler<'a>>,
}

impl<'a> Streams<'a> {
    fn new(spec: &JointSpec<'a>, tc: &TrainConfig) -> Result<Self, MethodError> {
        let n = spec.steps.len();
        let last = &spec.steps[n - 1];
        let final_src = source(last.train, tc, stream_seed(tc, last.stream))?;
        let others = spec.steps[..n - 1]
            .iter()
            .map(|s| source(s.train, tc, stream_seed(tc, s.stream)).map(Cycler::new))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { final_src, others })
    }
}

/// Fit every step's model at once, all starting from `init` (frozen steps
/// and `prev_init` chains start from `anchor` when given). The kept epoch is
/// the one whose final-step model scores best on the final validation split.
pub fn joint_train<T: Real>(
    init: &Model<T>,
    anchor: Option<&Model<T>>,
    tc: &TrainConfig,
    spec: &JointSpec,
) -> Result<JointModel<T>, MethodError> {
    spec.validate()?;
    match spec.variant {
        JointVariant::Separate => joint_separate(init, anchor, tc, spec),
        JointVariant::Side(kind) => {
            let base = if spec.is_frozen(0) { anchor.unwrap_or(init) } else { init };
            joint_side(base, tc, spec, kind)
        }
    }
}

fn joint_separate<T: Real>(init: &Model<T>, anchor: Option<&Model<T>>, tc: &TrainConfig, spec: &JointSpec) -> Result<JointModel<T>, MethodError> {
    let n = spec.steps.len();
    let mut starts: Vec<Model<T>> = Vec::with_capacity(n);
    for t in 0..n {
        let m = if spec.is_frozen(t) {
            anchor.unwrap_or(init).clone()
        } else if spec.prev_init && t > 0 {
            starts[t - 1].clone()
        } else {
            init.clone()
        };
        starts.push(m);
    }
    let masks: Vec<Vec<bool>> = (0..n)
        .map(|t| if spec.is_frozen(t) { vec![false; starts[t].w.len()] } else { Network::mask_all(&starts[t].w) })
        .collect();
    let shared_refs: Vec<&str> = spec.shared_layers.iter().map(String::as_str).collect();
    let shared = Network::mask_layers(&init.w, &shared_refs);
    let mut opts: Vec<Sgd<T>> = starts.iter().map(|m| Sgd::new(tc.sgd(), &m.w)).collect();
    let mut streams = Streams::new(spec, tc)?;
    let kappa_per_lr = 2.0 * spec.lambda_adj / spec.weights[n - 1];

    // The phase runs on the final-step model; the other steps ride along.
    let start = starts[n - 1].clone();
    let mut models = starts;
    let mut fin = models.pop().expect("nonempty");
    let mut rest = models;
    let val = spec.steps[n - 1].val;
    let mut kept_rest: Option<Vec<Model<T>>> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let phase = Phase { name: "joint".into(), step: n - 1, epochs: spec.epochs, lr: spec.lr, val, patience: None };
    let log = run_phase(&mut fin, tc, phase, |fin, epoch, lr| {
        let batches = epoch_batches(&streams.final_src, epoch);
        let mut total = 0.0;
        for idx in &batches {
            let mut grads: Vec<Option<WeightVector<T>>> = Vec::with_capacity(n);
            for t in 0..n - 1 {
                if spec.is_frozen(t) || spec.weights[t] == 0.0 {
                    grads.push(None);
                    continue;
                }
                let b: Batch<T> = streams.others[t].next();
                let (_, mut g) = batch_grad(&mut rest[t], &b, &masks[t]);
                g.scale(T::of(step_scale(spec, t)));
                grads.push(Some(g));
            }
            let b: Batch<T> = streams.final_src.make(idx, epoch);
            let (loss, g) = batch_grad(fin, &b, &masks[n - 1]);
            total += loss;
            grads.push(Some(g));
            if shared.iter().any(|&s| s) {
                share_gradients(&mut grads, &shared);
            }
            for t in 0..n {
                if let Some(g) = &grads[t] {
                    let m = if t == n - 1 { &mut *fin } else { &mut rest[t] };
                    opts[t].step(&mut m.w, g, &masks[t], lr)?;
                }
            }
            if spec.lambda_adj > 0.0 {
                let mut ws: Vec<&mut WeightVector<T>> = rest.iter_mut().map(|m| &mut m.w).collect();
                ws.push(&mut fin.w);
                let frozen: Vec<bool> = (0..n).map(|t| spec.is_frozen(t)).collect();
                chain_prox(&mut ws, &frozen, kappa_per_lr * lr);
            }
        }
        // Mirror the phase's selection rule so the other steps are kept at the same epoch.
        let acc = accuracy(fin, val);
        if acc > best_acc {
            best_acc = acc;
            kept_rest = Some(rest.clone());
        }
        Ok(total / batches.len() as f64)
    })?;
    let mut models = kept_rest.unwrap_or(rest);
    models.push(fin);
    Ok(JointModel { models, variant: JointVariant::Separate, log, start })
}

/// Replace the shared entries of every trainable step's gradient by their sum.
fn share_gradients<T: Real>(grads: &mut [Option<WeightVector<T>>], shared: &[bool]) {
    let Some(first) = grads.iter().flatten().next() else { return };
    let mut sum = first.zeros_like();
    for g in grads.iter().flatten() {
        for (e, &s) in shared.iter().enumerate() {
            if s {
                for (a, &v) in sum.data_mut(e).iter_mut().zip(g.data(e)) {
                    *a += v;
                }
            }
        }
    }
    for g in grads.iter_mut().flatten() {
        for (e, &s) in shared.iter().enumerate() {
            if s {
                g.data_mut(e).copy_from_slice(sum.data(e));
            }
        }
    }
}

/// Exact proximal step of `(kappa / 2) * sum_t |w_t - w_{t-1}|^2` for every
/// parameter coordinate: solve `(I + kappa L) w = v` with `L` the path-graph
/// Laplacian, frozen steps held fixed.
pub fn chain_prox<T: Real>(ws: &mut [&mut WeightVector<T>], frozen: &[bool], kappa: f64) {
    let n = ws.len();
    if n < 2 || kappa == 0.0 {
        return;
    }
    let (mut sub, mut diag, mut sup) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for t in 0..n {
        if frozen[t] {
            diag[t] = 1.0;
            continue;
        }
        let deg = (t > 0) as usize + (t + 1 < n) as usize;
        diag[t] = 1.0 + kappa * deg as f64;
        if t > 0 {
            sub[t] = -kappa;
        }
        if t + 1 < n {
            sup[t] = -kappa;
        }
    }
    // Thomas algorithm factors, shared by every coordinate.
    let mut c = vec![0.0; n];
    let mut denom = vec![0.0; n];
    for t in 0..n {
        let d = diag[t] - if t > 0 { sub[t] * c[t - 1] } else { 0.0 };
        denom[t] = d;
        c[t] = sup[t] / d;
    }
    let mut rhs = vec![0.0; n];
    for e in 0..ws[0].len() {
        if !ws[0].is_param(e) {
            continue;
        }
        for k in 0..ws[0].data(e).len() {
            for t in 0..n {
                let v = ws[t].data(e)[k].f64();
                rhs[t] = (v - if t > 0 { sub[t] * rhs[t - 1] } else { 0.0 }) / denom[t];
            }
            for t in (0..n - 1).rev() {
                rhs[t] -= c[t] * rhs[t + 1];
            }
            for t in 0..n {
                if !frozen[t] {
                    ws[t].data_mut(e)[k] = T::of(rhs[t]);
                }
            }
        }
    }
}

fn joint_side<T: Real>(init: &Model<T>, tc: &TrainConfig, spec: &JointSpec, kind: SideKind) -> Result<JointModel<T>, MethodError> {
    let n = spec.steps.len();
    let mut model = init.clone();
    for t in 1..n {
        model.attach_sides(t, kind, spec.include_io, side_seed(tc, t))?;
    }
    let start = model.clone();
    // Step t trains the base (t = 0 unfrozen) and sides 1..=t that are not frozen.
    let trainable = |name: &str| {
        let owner = crate::tensornet::side_step_of(name).unwrap_or(0);
        !spec.is_frozen(owner)
    };
    let masks: Vec<Vec<bool>> = (0..n)
        .map(|t| {
            Network::mask_where(&model.w, |name| {
                let owner = crate::tensornet::side_step_of(name).unwrap_or(0);
                owner <= t && trainable(name)
            })
        })
        .collect();
    let union: Vec<bool> = (0..model.w.len()).map(|e| masks.iter().any(|m| m[e])).collect();
    let side_masks: Vec<Vec<bool>> = (1..n).map(|t| Network::mask_side(&model.w, t)).collect();
    let mut opt = Sgd::new(tc.sgd(), &model.w);
    let mut streams = Streams::new(spec, tc)?;
    let kappa_per_lr = 2.0 * spec.lambda_adj / spec.weights[n - 1];
    let val = spec.steps[n - 1].val;
    model.net.side_limit = Some(n - 1);
    let phase = Phase { name: "joint".into(), step: n - 1, epochs: spec.epochs, lr: spec.lr, val, patience: None };
    let log = run_phase(&mut model, tc, phase, |m, epoch, lr| {
        let batches = epoch_batches(&streams.final_src, epoch);
        let mut total = 0.0;
        for idx in &batches {
            let mut g = m.w.zeros_like();
            for t in 0..n {
                if spec.weights[t] == 0.0 || !masks[t].iter().any(|&b| b) {
                    continue;
                }
                let b: Batch<T> = if t == n - 1 { streams.final_src.make(idx, epoch) } else { streams.others[t].next() };
                m.net.side_limit = Some(t);
                let (loss, gt) = batch_grad(m, &b, &masks[t]);
                if t == n - 1 {
                    total += loss;
                }
                g.add_scaled(&gt, T::of(step_scale(spec, t)));
            }
            m.net.side_limit = Some(n - 1);
            opt.step(&mut m.w, &g, &union, lr)?;
            if spec.lambda_adj > 0.0 {
                let shrink = T::of(1.0 / (1.0 + kappa_per_lr * lr));
                for (i, sm) in side_masks.iter().enumerate() {
                    if spec.is_frozen(i + 1) {
                        continue;
                    }
                    for e in 0..sm.len() {
                        if sm[e] {
                            m.w.data_mut(e).iter_mut().for_each(|v| *v *= shrink);
                        }
                    }
                }
            }
        }
        Ok(total / batches.len() as f64)
    })?;
    model.net.side_limit = None;
    Ok(JointModel { models: vec![model], variant: JointVariant::Side(kind), log, start })
}
