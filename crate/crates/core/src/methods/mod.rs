//! Training methods that use historical steps to do well on the final step.
//!
//! Methods fall in three groups: pooled training on every step (ERM, IRM,
//! DRO), pre-training on history and adapting to the final step (FT, LP-FT,
//! I-FT, D-FT, ST-1, ST-B), and sequential or joint use of the steps (SFT,
//! EWC, SST-1, SST-B, JM, JST-1, JST-B). Oracle and Baseline bound them.

pub mod dro;
pub mod engine;
pub mod finetune;
pub mod irm;
pub mod joint;
pub mod runner;
pub mod sequential;

pub use dro::train_dro;
pub use engine::{accuracy, batch_grad, fit_erm, init_seed, stream_seed, Checkpoint, FitArgs, Model, Stream};
pub use finetune::{finetune, side_tune};
pub use irm::{irm_objective, irm_penalty, train_irm, IrmPenalty};
pub use dro::dro_step;
pub use joint::{chain_prox, joint_train, JointModel, JointSpec, JointVariant};
pub use runner::{pretrain_history, run_method, step_inputs, MethodOutcome};
pub use sequential::{ewc_objective_grad, ewc_penalty, ewc_train, fisher_diagonal, sequential_finetune, sequential_side_tune, StepInput};

use crate::tensornet::{Precision, SgdConfig, SideKind, TensorError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum MethodError {
    #[error("invalid method configuration: {0}")]
    Config(String),
    #[error("data problem: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    Oracle,
    Baseline,
    Erm,
    Irm,
    Dro,
    Ft,
    LpFt,
    IFt,
    DFt,
    St1,
    StB,
    Sft,
    Ewc,
    Sst1,
    SstB,
    Jm,
    Jst1,
    JstB,
}

impl MethodId {
    pub const ALL: [MethodId; 18] = [
        MethodId::Oracle,
        MethodId::Baseline,
        MethodId::Erm,
        MethodId::Irm,
        MethodId::Dro,
        MethodId::Ft,
        MethodId::LpFt,
        MethodId::IFt,
        MethodId::DFt,
        MethodId::St1,
        MethodId::StB,
        MethodId::Sft,
        MethodId::Ewc,
        MethodId::Sst1,
        MethodId::SstB,
        MethodId::Jm,
        MethodId::Jst1,
        MethodId::JstB,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MethodId::Oracle => "Oracle",
            MethodId::Baseline => "Baseline",
            MethodId::Erm => "ERM",
            MethodId::Irm => "IRM",
            MethodId::Dro => "DRO",
            MethodId::Ft => "FT",
            MethodId::LpFt => "LP-FT",
            MethodId::IFt => "I-FT",
            MethodId::DFt => "D-FT",
            MethodId::St1 => "ST-1",
            MethodId::StB => "ST-B",
            MethodId::Sft => "SFT",
            MethodId::Ewc => "EWC",
            MethodId::Sst1 => "SST-1",
            MethodId::SstB => "SST-B",
            MethodId::Jm => "JM",
            MethodId::Jst1 => "JST-1",
            MethodId::JstB => "JST-B",
        }
    }

    /// 0 for Oracle and Baseline, otherwise the method class 1 to 3.
    pub fn class(self) -> usize {
        match self {
            MethodId::Oracle | MethodId::Baseline => 0,
            MethodId::Erm | MethodId::Irm | MethodId::Dro => 1,
            MethodId::Ft | MethodId::LpFt | MethodId::IFt | MethodId::DFt | MethodId::St1 | MethodId::StB => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodId {
    type Err = MethodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = |x: &str| x.to_ascii_lowercase().replace(['-', '_'], "");
        MethodId::ALL
            .into_iter()
            .find(|m| norm(m.label()) == norm(s))
            .ok_or_else(|| MethodError::Config(format!("unknown method {s:?}")))
    }
}

/// Per-run optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Random flip, pad-crop and small rotation per sample per epoch.
    pub augment: bool,
    /// Cosine decay of the rate within each training run.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            precision: Precision::Single,
            augment: false,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { momentum: self.momentum, weight_decay: self.weight_decay }
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(MethodError::Config("batch size and learning rate must be positive, momentum and decay nonnegative".into()));
        }
        Ok(())
    }

    /// Rate for `epoch` of `epochs` starting from `base`.
    pub fn lr_at(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        if self.cosine && epochs > 1 {
            base * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
        } else {
            base
        }
    }
}

/// Learning-rate schedule across the steps of sequential fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrSchedule {
    /// Each step picks the best rate from `grid` on its validation split.
    None { grid: Vec<f64> },
    /// `lr0 - t * delta`.
    Linear { delta: f64 },
    /// `lr0 * gamma^t`.
    Exponential { gamma: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Exponential { gamma: 0.5 }
    }
}

impl LrSchedule {
    pub fn rate(&self, lr0: f64, step: usize) -> f64 {
        match self {
            LrSchedule::None { .. } => lr0,
            LrSchedule::Linear { delta } => lr0 - step as f64 * delta,
            LrSchedule::Exponential { gamma } => lr0 * gamma.powi(step as i32),
        }
    }

    pub fn validate(&self, lr0: f64, steps: usize) -> Result<(), MethodError> {
        match self {
            LrSchedule::None { grid } if grid.iter().any(|&r| !(r > 0.0)) => {
                Err(MethodError::Config("rate grid entries must be positive".into()))
            }
            LrSchedule::Exponential { gamma } if !(*gamma > 0.0 && *gamma <= 1.0) => {
                Err(MethodError::Config(format!("exponential factor {gamma} outside (0, 1]")))
            }
            _ if (0..steps).any(|t| !(self.rate(lr0, t) > 0.0)) => {
                Err(MethodError::Config(format!("schedule {self:?} reaches a nonpositive rate within {steps} steps")))
            }
            _ => Ok(()),
        }
    }
}

/// Which layers fine-tuning updates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FreezePlan {
    #[default]
    Full,
    /// Output layer until validation stalls, then every layer.
    LpThenFt,
    /// Only the named layers (`input`, `block1`, ..., `output`).
    Layers { layers: Vec<String> },
}

/// Method identity plus every hyperparameter a method may read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub method: MethodId,
    pub train: TrainConfig,
    /// Epochs of the adaptation phase (final step, later sequential steps);
    /// defaults to `train.epochs`.
    pub adapt_epochs: Option<usize>,
    /// Rate of the adaptation phase; defaults to `train.lr`.
    pub adapt_lr: Option<f64>,
    pub lambda_irm: f64,
    pub lambda_ewc: f64,
    pub lambda_adj: f64,
    /// Loss weight of the final step in joint models (others weigh 1).
    pub final_weight: f64,
    pub schedule: LrSchedule,
    /// Side modules also next to the input and output layers.
    pub side_io: bool,
    pub freeze: FreezePlan,
    pub lp_patience: usize,
    pub lp_max_epochs: usize,
    /// Samples used to estimate each Fisher diagonal.
    pub fisher_samples: usize,
    /// Layers shared by every step in the separate-module joint model.
    pub shared_layers: Vec<String>,
    /// Joint-model steps kept fixed at their initial weights.
    pub frozen_steps: Vec<usize>,
    /// Initialize each joint step from the previous step's weights.
    pub prev_init: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: MethodId::Erm,
            train: TrainConfig::default(),
            adapt_epochs: None,
            adapt_lr: None,
            lambda_irm: 1.0,
            lambda_ewc: 100.0,
            lambda_adj: 1.0,
            final_weight: 3.0,
            schedule: LrSchedule::default(),
            side_io: true,
            freeze: FreezePlan::Full,
            lp_patience: 5,
            lp_max_epochs: 50,
            fisher_samples: 256,
            shared_layers: Vec::new(),
            frozen_steps: Vec::new(),
            prev_init: false,
        }
    }
}

impl MethodConfig {
    pub fn new(method: MethodId, train: TrainConfig) -> Self {
        Self { method, train, ..Self::default() }
    }

    pub fn adapt_epochs(&self) -> usize {
        self.adapt_epochs.unwrap_or(self.train.epochs)
    }

    pub fn adapt_lr(&self) -> f64 {
        self.adapt_lr.unwrap_or(self.train.lr)
    }

    pub fn side_kind(&self) -> Option<SideKind> {
        match self.method {
            MethodId::St1 | MethodId::Sst1 | MethodId::Jst1 => Some(SideKind::OneLayer),
            MethodId::StB | MethodId::SstB | MethodId::JstB => Some(SideKind::Block),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        self.train.validate()?;
        for (name, v) in [("lambda_irm", self.lambda_irm), ("lambda_ewc", self.lambda_ewc), ("lambda_adj", self.lambda_adj)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(MethodError::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.final_weight > 0.0) {
            return Err(MethodError::Config("final-step loss weight must be positive".into()));
        }
        if matches!(self.adapt_lr, Some(r) if !(r > 0.0)) {
            return Err(MethodError::Config("adaptation rate must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest of the configuration (hex sha256 of its JSON form).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// One training phase of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: String,
    pub step: usize,
    pub lr: f64,
    pub epochs_run: usize,
    /// Epoch whose weights were kept (0 means the initial weights).
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}
