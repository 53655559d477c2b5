use super::blocks::{apply_corruption_with, direction_for, flip_label, ShiftBlock, SubPopSchedule};
use super::ShiftError;
use crate::corpus::{draw_samples, split_train_val, BaseCorpus, Interpolation, LabeledImageSet, Split};
use crate::rng::{derive_seed, SplitMix64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    /// Cumulative shifts in effect at this step.
    pub shifts: Vec<ShiftBlock>,
    /// Samples drawn at this step, before the validation split.
    pub train_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: String,
    /// `cifar10` or `cifar100`.
    pub base_corpus: String,
    pub steps: Vec<StepSpec>,
    pub test_count_final: usize,
    pub master_seed: u64,
    pub val_fraction: f64,
    pub balanced: bool,
    /// Abundant final-step samples for the oracle (0 = none).
    pub oracle_count: usize,
    pub interpolation: Interpolation,
    /// Sub-population order per coarse class; default is fine-label order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subpop_schedule: Option<SubPopSchedule>,
}

impl SequenceSpec {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn final_shifts(&self) -> &[ShiftBlock] {
        self.steps.last().map(|s| s.shifts.as_slice()).unwrap_or(&[])
    }

    pub fn uses_subpopulations(&self) -> bool {
        self.steps.iter().any(|s| s.shifts.iter().any(|b| matches!(b, ShiftBlock::SubPopulation { .. })))
    }

    /// Compact description such as `- | C | C L | C L R`.
    pub fn describe(&self) -> String {
        self.steps
            .iter()
            .map(|s| if s.shifts.is_empty() { "-".to_string() } else { s.shifts.iter().map(|b| b.code().to_string()).collect::<Vec<_>>().join(" ") })
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn validate(&self) -> Result<(), ShiftError> {
        let err = |m: String| Err(ShiftError::Spec(m));
        if self.steps.is_empty() {
            return err("sequence has no steps".into());
        }
        if self.test_count_final == 0 {
            return err("final step needs a positive test count".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return err(format!("validation fraction {} outside [0, 1)", self.val_fraction));
        }
        let classes = match self.base_corpus.as_str() {
            "cifar10" => 10,
            "cifar100" => 20,
            other => return err(format!("unknown base corpus {other:?} (expected cifar10 or cifar100)")),
        };
        for (t, step) in self.steps.iter().enumerate() {
            if t > 0 {
                let prev = &self.steps[t - 1].shifts;
                if step.shifts.len() < prev.len() || step.shifts[..prev.len()] != prev[..] {
                    return err(format!("shifts at step {t} do not extend those of step {}", t - 1));
                }
            }
            let (mut flips, mut stages) = (0, 0);
            for b in &step.shifts {
                b.validate(classes).map_err(|m| ShiftError::Spec(format!("step {t}: {m}")))?;
                match b {
                    ShiftBlock::LabelFlip { index } => {
                        flips += 1;
                        if *index != flips {
                            return err(format!("step {t}: label flip {flips} carries index {index}"));
                        }
                    }
                    ShiftBlock::SubPopulation { stage } => {
                        stages += 1;
                        if *stage != stages {
                            return err(format!("step {t}: sub-population shift {stages} carries stage {stage}"));
                        }
                        if classes != 20 {
                            return err("sub-population shifts need the cifar100 base corpus".into());
                        }
                    }
                    _ => {}
                }
            }
        }
        if let Some(s) = &self.subpop_schedule {
            s.validate().map_err(ShiftError::Spec)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    pub index: usize,
    pub shifts: Vec<ShiftBlock>,
    pub train: LabeledImageSet,
    pub val: LabeledImageSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedSequence {
    pub spec: SequenceSpec,
    pub spec_hash: String,
    pub steps: Vec<StepData>,
    pub test: LabeledImageSet,
    /// Abundant final-step data for the oracle: (train, val).
    pub oracle: Option<(LabeledImageSet, LabeledImageSet)>,
    pub num_classes: usize,
}

impl MaterializedSequence {
    pub fn final_step(&self) -> &StepData {
        self.steps.last().expect("nonempty sequence")
    }

    /// Downscale every image by an integer factor.
    pub fn downscaled(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        Self {
            spec: self.spec.clone(),
            spec_hash: self.spec_hash.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| StepData { index: s.index, shifts: s.shifts.clone(), train: s.train.downscaled(factor), val: s.val.downscaled(factor) })
                .collect(),
            test: self.test.downscaled(factor),
            oracle: self.oracle.as_ref().map(|(a, b)| (a.downscaled(factor), b.downscaled(factor))),
            num_classes: self.num_classes,
        }
    }
}

/// Apply cumulative `shifts` to a freshly drawn set. Labels used for
/// conditional rotations are the original (unflipped) classes.
///
/// All rotations are fused into one resampling by their summed signed
/// angle; pixel-value shifts follow in declared order, then label flips.
pub fn apply_shifts(
    set: &mut LabeledImageSet,
    shifts: &[ShiftBlock],
    interp: Interpolation,
    master: u64,
    step: usize,
    tag: &str,
) {
    let original = set.labels.clone();
    let classes = set.num_classes;
    for (i, img) in set.images.iter_mut().enumerate() {
        let mut angle = 0.0;
        for b in shifts {
            match b {
                ShiftBlock::Rotation { degrees, direction } => angle += direction.sign() * degrees,
                ShiftBlock::ConditionalRotation { degrees, directions } => {
                    angle += direction_for(directions.as_deref(), original[i]).sign() * degrees;
                }
                _ => {}
            }
        }
        if angle.rem_euclid(360.0) != 0.0 {
            *img = img.rotate(angle, interp);
        }
    }
    for (k, b) in shifts.iter().enumerate() {
        match b {
            ShiftBlock::Corruption { low, high } => {
                let mut rng = SplitMix64::stream(master, step as u64, &format!("{tag}/corruption{k}"));
                for img in set.images.iter_mut() {
                    *img = apply_corruption_with(img, *low, *high, &mut rng);
                }
            }
            ShiftBlock::RedTint { amount } => {
                for img in set.images.iter_mut() {
                    for v in img.channel_mut(0) {
                        *v = v.saturating_add(*amount);
                    }
                }
            }
            _ => {}
        }
    }
    for b in shifts {
        if let ShiftBlock::LabelFlip { index } = b {
            for y in set.labels.iter_mut() {
                *y = flip_label(*y, *index, classes);
            }
        }
    }
}

fn subpop_stage(shifts: &[ShiftBlock]) -> usize {
    shifts.iter().filter(|b| matches!(b, ShiftBlock::SubPopulation { .. })).count()
}

fn draw_shifted(
    spec: &SequenceSpec,
    corpus: &BaseCorpus,
    schedule: Option<&SubPopSchedule>,
    split: Split,
    n: usize,
    step: usize,
    shifts: &[ShiftBlock],
    tag: &str,
) -> Result<LabeledImageSet, ShiftError> {
    let mut rng = SplitMix64::stream(spec.master_seed, step as u64, &format!("{tag}/draw"));
    let mut set = match schedule {
        Some(s) => {
            let mask = s.active_mask(subpop_stage(shifts), corpus.num_fine.unwrap_or(0));
            draw_samples(corpus, split, n, spec.balanced, &mut rng, step, |r| r.fine_label.is_some_and(|f| mask[f as usize]))?
        }
        None => draw_samples(corpus, split, n, spec.balanced, &mut rng, step, |_| true)?,
    };
    apply_shifts(&mut set, shifts, spec.interpolation, spec.master_seed, step, tag);
    Ok(set)
}

/// Build every step's train/validation sets, the final test set and the
/// optional oracle set. Pure function of `(spec, corpus)`.
pub fn materialize_sequence(spec: &SequenceSpec, corpus: &BaseCorpus) -> Result<MaterializedSequence, ShiftError> {
    spec.validate()?;
    let expected = if spec.base_corpus == "cifar100" { 20 } else { 10 };
    if corpus.num_classes != expected {
        return Err(ShiftError::Spec(format!(
            "spec expects {} ({expected} classes) but corpus {} has {} classes",
            spec.base_corpus, corpus.name, corpus.num_classes
        )));
    }
    let schedule = if spec.uses_subpopulations() {
        Some(match &spec.subpop_schedule {
            Some(s) => s.clone(),
            None => SubPopSchedule::default_for(corpus).map_err(ShiftError::Spec)?,
        })
    } else {
        None
    };
    let schedule = schedule.as_ref();

    let steps = std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .steps
            .iter()
            .enumerate()
            .map(|(t, step)| {
                scope.spawn(move || -> Result<StepData, ShiftError> {
                    let drawn = draw_shifted(spec, corpus, schedule, Split::Train, step.train_count, t, &step.shifts, "train")?;
                    let (train, val) = split_train_val(&drawn, spec.val_fraction, derive_seed(spec.master_seed, t as u64, "split"))?;
                    Ok(StepData { index: t, shifts: step.shifts.clone(), train, val })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("step worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;

    let last = spec.steps.len() - 1;
    let final_shifts = spec.final_shifts();
    let test = draw_shifted(spec, corpus, schedule, Split::Test, spec.test_count_final, last, final_shifts, "test")?;
    let oracle = if spec.oracle_count > 0 {
        let drawn = draw_shifted(spec, corpus, schedule, Split::Train, spec.oracle_count, last, final_shifts, "oracle")?;
        Some(split_train_val(&drawn, spec.val_fraction, derive_seed(spec.master_seed, last as u64, "oracle/split"))?)
    } else {
        None
    };
    Ok(MaterializedSequence { spec: spec.clone(), spec_hash: spec.hash(), steps, test, oracle, num_classes: corpus.num_classes })
}
