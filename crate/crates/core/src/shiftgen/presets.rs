use super::blocks::ShiftBlock;
use super::sequence::{SequenceSpec, StepSpec};
use crate::corpus::Interpolation;

pub const PRESET_NAMES: [&str; 12] =
    ["CLR", "RCL", "rrr", "TTT", "sss", "rot2", "rot3", "rot4", "rot5", "rot6", "rot7", "rot8"];

/// Sample sizes (thousands) of the rotation chains, indexed by length.
pub fn rotation_sizes(len: usize) -> Option<&'static [usize]> {
    Some(match len {
        2 => &[16, 4],
        3 => &[10, 6, 4],
        4 => &[6, 4, 6, 4],
        5 => &[4, 4, 4, 4, 4],
        6 => &[4, 3, 3, 3, 3, 4],
        7 => &[4, 2, 3, 2, 3, 2, 4],
        8 => &[4, 2, 2, 2, 2, 2, 2, 4],
        _ => return None,
    })
}

fn cumulative(additions: &[Option<ShiftBlock>], sizes: &[usize]) -> Vec<StepSpec> {
    let mut acc: Vec<ShiftBlock> = Vec::new();
    additions
        .iter()
        .zip(sizes)
        .map(|(add, &n)| {
            if let Some(b) = add {
                acc.push(b.clone());
            }
            StepSpec { shifts: acc.clone(), train_count: n }
        })
        .collect()
}

/// Divide a count by `divisor`, keeping it a positive multiple of `classes`.
fn scaled(n: usize, divisor: usize, classes: usize) -> usize {
    let v = (n as f64 / divisor as f64 / classes as f64).round().max(1.0) as usize;
    v * classes
}

/// A shipped sequence. `divisor` shrinks every sample count (1 = full size).
pub fn preset(name: &str, master_seed: u64, divisor: usize) -> Option<SequenceSpec> {
    let divisor = divisor.max(1);
    let four = [6000, 4000, 6000, 4000];
    let (base, adds, sizes): (&str, Vec<Option<ShiftBlock>>, Vec<usize>) = match name {
        "CLR" => (
            "cifar10",
            vec![None, Some(ShiftBlock::corruption()), Some(ShiftBlock::label_flip(1)), Some(ShiftBlock::rotation())],
            four.to_vec(),
        ),
        "RCL" => (
            "cifar10",
            vec![None, Some(ShiftBlock::rotation()), Some(ShiftBlock::corruption()), Some(ShiftBlock::label_flip(1))],
            four.to_vec(),
        ),
        "rrr" => ("cifar10", vec![None, Some(ShiftBlock::conditional_rotation()), Some(ShiftBlock::conditional_rotation()), Some(ShiftBlock::conditional_rotation())], four.to_vec()),
        "TTT" => ("cifar10", vec![None, Some(ShiftBlock::red_tint()), Some(ShiftBlock::red_tint()), Some(ShiftBlock::red_tint())], four.to_vec()),
        "sss" => (
            "cifar100",
            vec![None, Some(ShiftBlock::sub_population(1)), Some(ShiftBlock::sub_population(2)), Some(ShiftBlock::sub_population(3))],
            four.to_vec(),
        ),
        _ => {
            let len: usize = name.strip_prefix("rot")?.parse().ok()?;
            let sizes: Vec<usize> = rotation_sizes(len)?.iter().map(|k| k * 1000).collect();
            let adds = (0..len).map(|t| (t > 0).then(ShiftBlock::rotation)).collect();
            ("cifar10", adds, sizes)
        }
    };
    let classes = if base == "cifar100" { 20 } else { 10 };
    let sizes: Vec<usize> = sizes.iter().map(|&n| scaled(n, divisor, classes)).collect();
    Some(SequenceSpec {
        name: name.to_string(),
        base_corpus: base.to_string(),
        steps: cumulative(&adds, &sizes),
        test_count_final: scaled(5000, divisor, classes),
        master_seed,
        val_fraction: 0.2,
        balanced: true,
        oracle_count: scaled(20000, divisor, classes),
        interpolation: Interpolation::Bilinear,
        subpop_schedule: None,
    })
}
