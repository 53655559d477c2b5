use super::dro::train_dro;
use super::engine::{accuracy, fit_erm, init_seed, FitArgs, Model, Stream};
use super::finetune::{finetune, side_tune};
use super::irm::train_irm;
use super::joint::{joint_train, JointSpec, JointVariant};
use super::sequential::{ewc_train, sequential_finetune, sequential_side_tune, StepInput};
use super::{Checkpoint, FreezePlan, MethodConfig, MethodError, MethodId, StepLog};
use crate::corpus::LabeledImageSet;
use crate::shiftgen::MaterializedSequence;
use crate::tensornet::{ArchSpec, Network, Real};

/// Result of one method run on one sequence.
#[derive(Debug, Clone)]
pub struct MethodOutcome<T> {
    pub method: MethodId,
    pub arch: ArchSpec,
    pub logs: Vec<StepLog>,
    /// Accuracy on the validation split used for selection.
    pub final_val_acc: f64,
    pub test_acc: f64,
    /// Accuracy of the final model on every step's validation split.
    pub per_step_val: Vec<f64>,
    /// Intermediate states (per step for sequential and joint methods).
    pub checkpoints: Vec<Checkpoint<T>>,
    pub final_model: Checkpoint<T>,
    /// State right before the last training run on the final step.
    pub init_model: Option<Checkpoint<T>>,
    /// The final model differs from `init_model` only by added side modules.
    pub side_mode: bool,
}

/// Train `cfg.method` on `seq` and evaluate it.
pub fn run_method<T: Real>(seq: &MaterializedSequence, arch: ArchSpec, cfg: &MethodConfig) -> Result<MethodOutcome<T>, MethodError> {
    cfg.validate()?;
    let n = seq.steps.len();
    if n == 0 {
        return Err(MethodError::Data("sequence has no steps".into()));
    }
    if arch.num_classes != seq.num_classes {
        return Err(MethodError::Config(format!("network predicts {} classes, sequence has {}", arch.num_classes, seq.num_classes)));
    }
    let tc = &cfg.train;
    let last = &seq.steps[n - 1];
    let history_train: Vec<&LabeledImageSet> = seq.steps[..n - 1].iter().map(|s| &s.train).collect();
    let all_train: Vec<&LabeledImageSet> = seq.steps.iter().map(|s| &s.train).collect();
    let pooled_val = LabeledImageSet::concat(&seq.steps.iter().map(|s| &s.val).collect::<Vec<_>>());
    let needs_history = || {
        if n < 2 {
            Err(MethodError::Data(format!("{} needs at least one historical step", cfg.method)))
        } else {
            Ok(())
        }
    };
    let mut model = Model::<T>::new(arch, init_seed(tc))?;
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut init_model = None;
    let mut side_mode = false;
    let mut selection_val = &last.val;
    let plain = |data, val, stream, phase| FitArgs { data, val, epochs: tc.epochs, lr: tc.lr, stream, phase, step: n - 1, patience: None };

    match cfg.method {
        MethodId::Oracle => {
            let (train, val) = seq.oracle.as_ref().ok_or_else(|| MethodError::Data("sequence has no oracle split".into()))?;
            let mask = Network::mask_all(&model.w);
            logs.push(fit_erm(&mut model, tc, plain(train, val, Stream::Oracle, "oracle"), &mask)?);
            selection_val = val;
        }
        MethodId::Baseline => {
            let mask = Network::mask_all(&model.w);
            logs.push(fit_erm(&mut model, tc, plain(&last.train, &last.val, Stream::Final, "baseline"), &mask)?);
        }
        MethodId::Erm => {
            let pooled = LabeledImageSet::concat(&all_train);
            let mask = Network::mask_all(&model.w);
            logs.push(fit_erm(&mut model, tc, plain(&pooled, &pooled_val, Stream::All, "erm"), &mask)?);
            selection_val = &pooled_val;
        }
        MethodId::Irm => {
            logs.push(train_irm(&mut model, tc, &all_train, &pooled_val, cfg.lambda_irm, "irm")?);
            selection_val = &pooled_val;
        }
        MethodId::Dro => {
            logs.push(train_dro(&mut model, tc, &all_train, &pooled_val, "dro")?);
            selection_val = &pooled_val;
        }
        MethodId::Ft | MethodId::LpFt | MethodId::IFt | MethodId::DFt | MethodId::St1 | MethodId::StB => {
            needs_history()?;
            logs.push(match cfg.method {
                MethodId::IFt => train_irm(&mut model, tc, &history_train, &last.val, cfg.lambda_irm, "history_irm")?,
                MethodId::DFt => train_dro(&mut model, tc, &history_train, &last.val, "history_dro")?,
                _ => pretrain_history(&mut model, cfg, &history_train, &last.val)?,
            });
            let ck = model.checkpoint("history");
            checkpoints.push(ck.clone());
            init_model = Some(ck);
            if let Some(kind) = cfg.side_kind() {
                side_mode = true;
                logs.push(side_tune(&mut model, cfg, kind, 1, &last.train, &last.val, Stream::Final, cfg.adapt_lr())?);
            } else {
                let plan_cfg;
                let ft_cfg = if cfg.method == MethodId::LpFt {
                    plan_cfg = MethodConfig { freeze: FreezePlan::LpThenFt, ..cfg.clone() };
                    &plan_cfg
                } else {
                    cfg
                };
                logs.extend(finetune(&mut model, ft_cfg, &last.train, &last.val, Stream::Final, n - 1)?);
            }
        }
        MethodId::Sft | MethodId::Ewc | MethodId::Sst1 | MethodId::SstB => {
            let steps = step_inputs(seq);
            let (l, cks) = match cfg.method {
                MethodId::Sft => sequential_finetune(&mut model, cfg, &steps)?,
                MethodId::Ewc => ewc_train(&mut model, cfg, &steps)?,
                _ => {
                    side_mode = true;
                    sequential_side_tune(&mut model, cfg, cfg.side_kind().expect("side method"), &steps)?
                }
            };
            logs.extend(l);
            init_model = (n > 1).then(|| cks[n - 2].clone());
            checkpoints.extend(cks);
        }
        MethodId::Jm | MethodId::Jst1 | MethodId::JstB => {
            let variant = cfg.side_kind().map_or(JointVariant::Separate, JointVariant::Side);
            let anchored = !cfg.frozen_steps.is_empty();
            let anchor = if anchored {
                needs_history()?;
                let mut a = Model::<T>::new(arch, init_seed(tc))?;
                logs.push(pretrain_history(&mut a, cfg, &history_train, &last.val)?);
                Some(a)
            } else {
                None
            };
            let mut weights = vec![1.0; n];
            weights[n - 1] = cfg.final_weight;
            // Starting from a fitted anchor makes the trainable steps an adaptation.
            let (epochs, lr) = if anchored { (cfg.adapt_epochs(), cfg.adapt_lr()) } else { (tc.epochs, tc.lr) };
            let spec = JointSpec {
                variant,
                steps: step_inputs(seq),
                weights,
                lambda_adj: cfg.lambda_adj,
                shared_layers: cfg.shared_layers.clone(),
                frozen: cfg.frozen_steps.clone(),
                prev_init: cfg.prev_init,
                epochs,
                lr,
                include_io: cfg.side_io,
            };
            let jm = joint_train(&model, anchor.as_ref(), tc, &spec)?;
            init_model = Some(jm.start.checkpoint("init"));
            logs.push(jm.log.clone());
            for t in 0..n {
                checkpoints.push(jm.step_model(t).checkpoint(format!("step{t}")));
            }
            model = jm.step_model(n - 1);
        }
    }

    let final_val_acc = accuracy(&mut model, selection_val);
    let test_acc = accuracy(&mut model, &seq.test);
    let per_step_val = seq.steps.iter().map(|s| accuracy(&mut model, &s.val)).collect();
    Ok(MethodOutcome {
        method: cfg.method,
        arch,
        logs,
        final_val_acc,
        test_acc,
        per_step_val,
        checkpoints,
        final_model: model.checkpoint("final"),
        init_model,
        side_mode,
    })
}

/// ERM on the pooled historical steps, selected on the final validation split.
pub fn pretrain_history<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    history: &[&LabeledImageSet],
    val: &LabeledImageSet,
) -> Result<StepLog, MethodError> {
    let pooled = LabeledImageSet::concat(history);
    let tc = &cfg.train;
    let args = FitArgs { data: &pooled, val, epochs: tc.epochs, lr: tc.lr, stream: Stream::History, phase: "history", step: 0, patience: None };
    let mask = Network::mask_all(&model.w);
    fit_erm(model, tc, args, &mask)
}

/// Per-step inputs: each step selects on its own validation split and the
/// final step uses the shared final-data stream.
pub fn step_inputs(seq: &MaterializedSequence) -> Vec<StepInput<'_>> {
    let n = seq.steps.len();
    seq.steps
        .iter()
        .enumerate()
        .map(|(t, s)| StepInput { train: &s.train, val: &s.val, stream: if t + 1 == n { Stream::Final } else { Stream::Step(t) } })
        .collect()
}
