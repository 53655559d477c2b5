use super::engine::{fit_erm, side_seed, FitArgs, Model, Stream};
use super::{FreezePlan, MethodConfig, MethodError, StepLog};
use crate::corpus::LabeledImageSet;
use crate::tensornet::{Network, Real, SideKind};

/// Adapt `model` to `data` under a freeze plan.
pub fn finetune<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    data: &LabeledImageSet,
    val: &LabeledImageSet,
    stream: Stream,
    step: usize,
) -> Result<Vec<StepLog>, MethodError> {
    let tc = &cfg.train;
    let args = FitArgs { data, val, epochs: cfg.adapt_epochs(), lr: cfg.adapt_lr(), stream, phase: "finetune", step, patience: None };
    match &cfg.freeze {
        FreezePlan::Full => Ok(vec![fit_erm(model, tc, args, &Network::mask_all(&model.w))?]),
        FreezePlan::Layers { layers } => {
            let names = model.net.unit_names();
            if let Some(bad) = layers.iter().find(|l| !names.contains(l)) {
                return Err(MethodError::Config(format!("unknown layer {bad:?}; layers are {names:?}")));
            }
            let refs: Vec<&str> = layers.iter().map(String::as_str).collect();
            Ok(vec![fit_erm(model, tc, args, &Network::mask_layers(&model.w, &refs))?])
        }
        FreezePlan::LpThenFt => {
            let probe = FitArgs { epochs: cfg.lp_max_epochs, phase: "linear_probe", patience: Some(cfg.lp_patience), ..args };
            let lp = fit_erm(model, tc, probe, &Network::mask_layers(&model.w, &["output"]))?;
            let ft = fit_erm(model, tc, args, &Network::mask_all(&model.w))?;
            Ok(vec![lp, ft])
        }
    }
}

/// Freeze everything already in `model`, add zero-output side modules for
/// `side_step` and fit only those.
#[allow(clippy::too_many_arguments)]
pub fn side_tune<T: Real>(
    model: &mut Model<T>,
    cfg: &MethodConfig,
    kind: SideKind,
    side_step: usize,
    data: &LabeledImageSet,
    val: &LabeledImageSet,
    stream: Stream,
    lr: f64,
) -> Result<StepLog, MethodError> {
    model.attach_sides(side_step, kind, cfg.side_io, side_seed(&cfg.train, side_step))?;
    let mask = Network::mask_side(&model.w, side_step);
    let args = FitArgs { data, val, epochs: cfg.adapt_epochs(), lr, stream, phase: "side_tune", step: side_step, patience: None };
    fit_erm(model, &cfg.train, args, &mask)
}
