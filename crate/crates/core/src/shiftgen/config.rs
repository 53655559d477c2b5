//! Text form of a [`SequenceSpec`].
//!
//! ```toml
//! [sequence]
//! name = "CLR-small"
//! base_corpus = "cifar10"
//! test_count_final = 500
//! master_seed = 7
//!
//! [steps.0]
//! train_count = 600
//! [steps.1]
//! train_count = 400
//!
//! [shift.1]
//! blocks = [{ kind = "corruption" }]
//! ```
//!
//! `[shift.N]` lists the blocks introduced at step `N`; each step inherits
//! all earlier blocks. Label-flip indices and sub-population stages may be
//! omitted and are numbered automatically.

use super::blocks::{ShiftBlock, SubPopSchedule};
use super::sequence::{SequenceSpec, StepSpec};
use super::ShiftError;
use crate::corpus::Interpolation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Serialize, Deserialize)]
struct SequenceSection {
    name: String,
    base_corpus: String,
    test_count_final: usize,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_val_fraction")]
    val_fraction: f64,
    #[serde(default = "default_true")]
    balanced: bool,
    #[serde(default)]
    oracle_count: usize,
    #[serde(default)]
    interpolation: Interpolation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subpop_schedule: Option<SubPopSchedule>,
}

fn default_val_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct StepSection {
    train_count: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ShiftSection {
    #[serde(default)]
    blocks: Vec<ShiftBlock>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecFile {
    sequence: SequenceSection,
    steps: BTreeMap<String, StepSection>,
    #[serde(default)]
    shift: BTreeMap<String, ShiftSection>,
}

fn step_key(key: &str, section: &str) -> Result<usize, ShiftError> {
    key.parse().map_err(|_| ShiftError::Spec(format!("[{section}.{key}]: step keys must be integers")))
}

pub fn spec_from_toml(text: &str) -> Result<SequenceSpec, ShiftError> {
    let file: SpecFile = toml::from_str(text).map_err(|e| ShiftError::Config(e.to_string()))?;
    let mut sizes = BTreeMap::new();
    for (k, v) in &file.steps {
        sizes.insert(step_key(k, "steps")?, v.train_count);
    }
    let n = sizes.len();
    if sizes.keys().copied().ne(0..n) {
        return Err(ShiftError::Spec(format!("steps must be numbered 0..{n} without gaps")));
    }
    let mut additions: Vec<Vec<ShiftBlock>> = vec![Vec::new(); n];
    for (k, v) in file.shift {
        let t = step_key(&k, "shift")?;
        if t >= n {
            return Err(ShiftError::Spec(format!("[shift.{t}] refers to a step beyond the last ({})", n.saturating_sub(1))));
        }
        additions[t] = v.blocks;
    }
    let (mut flips, mut stages) = (0, 0);
    let mut acc = Vec::new();
    let mut steps = Vec::with_capacity(n);
    for (t, adds) in additions.into_iter().enumerate() {
        for mut b in adds {
            match &mut b {
                ShiftBlock::LabelFlip { index } => {
                    flips += 1;
                    if *index == 0 {
                        *index = flips;
                    }
                }
                ShiftBlock::SubPopulation { stage } => {
                    stages += 1;
                    if *stage == 0 {
                        *stage = stages;
                    }
                }
                _ => {}
            }
            acc.push(b);
        }
        steps.push(StepSpec { shifts: acc.clone(), train_count: sizes[&t] });
    }
    let s = file.sequence;
    let spec = SequenceSpec {
        name: s.name,
        base_corpus: s.base_corpus,
        steps,
        test_count_final: s.test_count_final,
        master_seed: s.master_seed,
        val_fraction: s.val_fraction,
        balanced: s.balanced,
        oracle_count: s.oracle_count,
        interpolation: s.interpolation,
        subpop_schedule: s.subpop_schedule,
    };
    spec.validate()?;
    Ok(spec)
}

/// Inverse of [`spec_from_toml`] for specs whose steps extend each other.
pub fn spec_to_toml(spec: &SequenceSpec) -> Result<String, ShiftError> {
    let mut steps = BTreeMap::new();
    let mut shift = BTreeMap::new();
    let mut prev = 0;
    for (t, s) in spec.steps.iter().enumerate() {
        steps.insert(t.to_string(), StepSection { train_count: s.train_count });
        if s.shifts.len() > prev {
            shift.insert(t.to_string(), ShiftSection { blocks: s.shifts[prev..].to_vec() });
        }
        prev = s.shifts.len();
    }
    let file = SpecFile {
        sequence: SequenceSection {
            name: spec.name.clone(),
            base_corpus: spec.base_corpus.clone(),
            test_count_final: spec.test_count_final,
            master_seed: spec.master_seed,
            val_fraction: spec.val_fraction,
            balanced: spec.balanced,
            oracle_count: spec.oracle_count,
            interpolation: spec.interpolation,
            subpop_schedule: spec.subpop_schedule.clone(),
        },
        steps,
        shift,
    };
    toml::to_string(&file).map_err(|e| ShiftError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shiftgen::presets::{preset, PRESET_NAMES};

    #[test]
    fn parses_the_documented_example() {
        let text = r#"
[sequence]
name = "CLR-small"
base_corpus = "cifar10"
test_count_final = 500
master_seed = 7

[steps.0]
train_count = 600
[steps.1]
train_count = 400
[steps.2]
train_count = 600

[shift.1]
blocks = [{ kind = "corruption" }]
[shift.2]
blocks = [{ kind = "label_flip" }, { kind = "rotation", degrees = 45.0, direction = "cw" }]
"#;
        let spec = spec_from_toml(text).unwrap();
        assert_eq!(spec.describe(), "- | C | C L R");
        assert_eq!(spec.steps[2].shifts[1], ShiftBlock::label_flip(1));
        assert_eq!(spec.val_fraction, 0.2);
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name, 3, 2).unwrap();
            assert_eq!(spec_from_toml(&spec_to_toml(&spec).unwrap()).unwrap(), spec, "{name}");
        }
    }

    #[test]
    fn gaps_are_rejected() {
        let text = "[sequence]\nname='x'\nbase_corpus='cifar10'\ntest_count_final=10\n[steps.0]\ntrain_count=10\n[steps.2]\ntrain_count=10\n";
        assert!(spec_from_toml(text).is_err());
    }
}
