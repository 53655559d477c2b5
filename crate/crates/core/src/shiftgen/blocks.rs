//! The six shift building blocks.

use crate::corpus::{draw_samples, BaseCorpus, CorpusError, ImageTensor, Interpolation, LabeledImageSet, Split};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Ccw,
}

impl Direction {
    /// Sign of the angle in the counterclockwise-positive convention.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ccw => 1.0,
            Direction::Cw => -1.0,
        }
    }
}

/// Default conditional-rotation direction: even classes counterclockwise, odd clockwise.
pub fn default_direction(class: usize) -> Direction {
    if class.is_multiple_of(2) {
        Direction::Ccw
    } else {
        Direction::Cw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftBlock {
    /// Independent uniform integer noise in `[low, high]` per pixel and channel.
    Corruption {
        #[serde(default = "default_low")]
        low: i16,
        #[serde(default = "default_high")]
        high: i16,
    },
    Rotation {
        #[serde(default = "default_angle")]
        degrees: f64,
        #[serde(default = "default_ccw")]
        direction: Direction,
    },
    RedTint {
        #[serde(default = "default_tint")]
        amount: u8,
    },
    /// `index` counts label flips so far (1-based); odd reverses, even shifts by 2.
    LabelFlip {
        #[serde(default)]
        index: usize,
    },
    ConditionalRotation {
        #[serde(default = "default_angle")]
        degrees: f64,
        /// Direction per class; `None` uses [`default_direction`].
        #[serde(default, skip_serializing_if = "Option::is_none")]
        directions: Option<Vec<Direction>>,
    },
    /// `stage` counts sub-population shifts so far (1-based, at most 3).
    SubPopulation {
        #[serde(default)]
        stage: usize,
    },
}

fn default_low() -> i16 {
    -3
}
fn default_high() -> i16 {
    2
}
fn default_angle() -> f64 {
    30.0
}
fn default_ccw() -> Direction {
    Direction::Ccw
}
fn default_tint() -> u8 {
    30
}

impl ShiftBlock {
    pub fn corruption() -> Self {
        ShiftBlock::Corruption { low: -3, high: 2 }
    }
    pub fn rotation() -> Self {
        ShiftBlock::Rotation { degrees: 30.0, direction: Direction::Ccw }
    }
    pub fn red_tint() -> Self {
        ShiftBlock::RedTint { amount: 30 }
    }
    pub fn label_flip(index: usize) -> Self {
        ShiftBlock::LabelFlip { index }
    }
    pub fn conditional_rotation() -> Self {
        ShiftBlock::ConditionalRotation { degrees: 30.0, directions: None }
    }
    pub fn sub_population(stage: usize) -> Self {
        ShiftBlock::SubPopulation { stage }
    }

    /// One-letter code: C, R, T, L, r, s.
    pub fn code(&self) -> char {
        match self {
            ShiftBlock::Corruption { .. } => 'C',
            ShiftBlock::Rotation { .. } => 'R',
            ShiftBlock::RedTint { .. } => 'T',
            ShiftBlock::LabelFlip { .. } => 'L',
            ShiftBlock::ConditionalRotation { .. } => 'r',
            ShiftBlock::SubPopulation { .. } => 's',
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), String> {
        let angle_ok = |d: f64| d.is_finite() && d > 0.0 && d < 360.0;
        match self {
            ShiftBlock::Corruption { low, high } if low > high => Err(format!("corruption range [{low}, {high}] is empty")),
            ShiftBlock::Rotation { degrees, .. } if !angle_ok(*degrees) => Err(format!("rotation angle {degrees} outside (0, 360)")),
            ShiftBlock::ConditionalRotation { degrees, .. } if !angle_ok(*degrees) => {
                Err(format!("conditional rotation angle {degrees} outside (0, 360)"))
            }
            ShiftBlock::ConditionalRotation { directions: Some(d), .. } if d.len() < num_classes => {
                Err(format!("direction map covers {} of {num_classes} classes", d.len()))
            }
            ShiftBlock::LabelFlip { index: 0 } => Err("label flip index must be at least 1".into()),
            ShiftBlock::SubPopulation { stage } if !(1..=3).contains(stage) => {
                Err(format!("sub-population stage {stage} outside 1..=3"))
            }
            _ => Ok(()),
        }
    }
}

/// Add uniform noise from `{low..=high}` to every value and clamp.
pub fn apply_corruption_with(image: &ImageTensor, low: i16, high: i16, rng: &mut SplitMix64) -> ImageTensor {
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        let noise = rng.range_i64(i64::from(low), i64::from(high));
        *v = (i64::from(*v) + noise).clamp(0, 255) as u8;
    }
    out
}

/// Corruption with the default range `{-3..=2}`.
pub fn apply_corruption(image: &ImageTensor, seed: u64) -> ImageTensor {
    apply_corruption_with(image, -3, 2, &mut SplitMix64::new(seed))
}

pub fn apply_rotation(image: &ImageTensor, degrees: f64, direction: Direction, interp: Interpolation) -> ImageTensor {
    image.rotate(direction.sign() * degrees, interp)
}

/// Add `amount` to the red channel, clamping at 255.
pub fn apply_red_tint(image: &ImageTensor, amount: u8) -> ImageTensor {
    let mut out = image.clone();
    for v in out.channel_mut(0) {
        *v = v.saturating_add(amount);
    }
    out
}

pub fn flip_label(y: usize, index: usize, num_classes: usize) -> usize {
    if index % 2 == 1 {
        num_classes - 1 - y
    } else {
        (y + 2) % num_classes
    }
}

pub fn apply_label_flip(labels: &[usize], index: usize, num_classes: usize) -> Vec<usize> {
    labels.iter().map(|&y| flip_label(y, index, num_classes)).collect()
}

pub fn direction_for(directions: Option<&[Direction]>, label: usize) -> Direction {
    directions.map_or_else(|| default_direction(label), |d| d[label])
}

pub fn apply_conditional_rotation(
    image: &ImageTensor,
    label: usize,
    degrees: f64,
    directions: Option<&[Direction]>,
    interp: Interpolation,
) -> ImageTensor {
    apply_rotation(image, degrees, direction_for(directions, label), interp)
}

/// Per coarse class, the ordered list of its 5 fine classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubPopSchedule {
    pub order: Vec<Vec<usize>>,
}

impl SubPopSchedule {
    /// Schedule positions active after `stage` sub-population shifts.
    pub fn active_positions(stage: usize) -> &'static [usize] {
        match stage {
            0 => &[0, 1],
            1 => &[0, 1, 2],
            2 => &[1, 2, 3],
            _ => &[2, 3, 4],
        }
    }

    /// Fine classes of each coarse class in increasing fine-label order.
    pub fn default_for(corpus: &BaseCorpus) -> Result<Self, String> {
        let map = corpus.fine_to_coarse();
        if map.is_empty() {
            return Err(format!("corpus {} has no fine labels", corpus.name));
        }
        let mut order = vec![Vec::new(); corpus.num_classes];
        for (fine, coarse) in map.iter().enumerate() {
            if let Some(c) = coarse {
                order[*c as usize].push(fine);
            }
        }
        let s = Self { order };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (c, fines) in self.order.iter().enumerate() {
            if fines.len() != 5 {
                return Err(format!("coarse class {c} lists {} fine classes, expected 5", fines.len()));
            }
        }
        Ok(())
    }

    /// Membership mask over fine labels for a stage.
    pub fn active_mask(&self, stage: usize, num_fine: usize) -> Vec<bool> {
        let mut mask = vec![false; num_fine];
        for fines in &self.order {
            for &p in Self::active_positions(stage) {
                mask[fines[p]] = true;
            }
        }
        mask
    }
}

/// Balanced draw from the fine classes active at `stage`; labels are coarse.
pub fn build_subpop_step(
    corpus: &BaseCorpus,
    schedule: &SubPopSchedule,
    stage: usize,
    n: usize,
    seed: u64,
) -> Result<LabeledImageSet, CorpusError> {
    let mask = schedule.active_mask(stage, corpus.num_fine.unwrap_or(0));
    draw_samples(corpus, Split::Train, n, true, &mut SplitMix64::new(seed), stage, |r| {
        r.fine_label.is_some_and(|f| mask[f as usize])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_range_and_clamp() {
        let img = ImageTensor::from_planar(3, 32, 32, vec![128; 3072]);
        let out = apply_corruption(&img, 5);
        assert!(out.data.iter().all(|&v| (125..=130).contains(&v)));
        let black = ImageTensor::zeros(3, 32, 32);
        let out = apply_corruption(&black, 5);
        assert!(out.data.iter().all(|&v| v <= 2));
    }

    #[test]
    fn corruption_mean_is_minus_half() {
        let img = ImageTensor::from_planar(1, 1000, 1000, vec![128; 1_000_000]);
        let out = apply_corruption(&img, 99);
        let mean: f64 = out.data.iter().map(|&v| f64::from(v) - 128.0).sum::<f64>() / 1e6;
        // Oracle: uniform on {-3,...,2} has mean (-3 + 2) / 2.
        assert!((mean - (-0.5)).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn tint_touches_red_only() {
        let mut img = ImageTensor::zeros(3, 2, 2);
        img.set(0, 0, 0, 200);
        img.set(0, 0, 1, 240);
        img.set(1, 0, 0, 17);
        let out = apply_red_tint(&img, 30);
        assert_eq!(out.get(0, 0, 0), 230);
        assert_eq!(out.get(0, 0, 1), 255);
        assert_eq!(out.channel(1), img.channel(1));
        assert_eq!(out.channel(2), img.channel(2));
    }

    #[test]
    fn label_flips() {
        assert_eq!(flip_label(3, 1, 10), 6);
        assert_eq!(flip_label(8, 2, 10), 0);
        assert_eq!(flip_label(9, 2, 10), 1);
        // Two consecutive flips never restore any label (exhaustive over 10 classes).
        for index in 1..6 {
            for y in 0..10 {
                let twice = flip_label(flip_label(y, index, 10), index + 1, 10);
                assert_ne!(twice, y, "index {index}, y {y}");
            }
        }
    }

    #[test]
    fn conditional_rotation_delegates() {
        let img = ImageTensor::from_planar(3, 32, 32, (0..3072).map(|i| (i % 200) as u8).collect());
        let even = apply_conditional_rotation(&img, 4, 30.0, None, Interpolation::Bilinear);
        assert_eq!(even, apply_rotation(&img, 30.0, Direction::Ccw, Interpolation::Bilinear));
        let odd = apply_conditional_rotation(&img, 5, 30.0, None, Interpolation::Bilinear);
        assert_ne!(even, odd);
    }

    #[test]
    fn subpop_positions() {
        let first: Vec<usize> = SubPopSchedule::active_positions(0).to_vec();
        let last = SubPopSchedule::active_positions(3);
        assert!(first.iter().all(|p| !last.contains(p)));
    }

    #[test]
    fn block_validation() {
        assert!(ShiftBlock::Rotation { degrees: 0.0, direction: Direction::Cw }.validate(10).is_err());
        assert!(ShiftBlock::label_flip(0).validate(10).is_err());
        assert!(ShiftBlock::sub_population(4).validate(20).is_err());
        assert!(ShiftBlock::corruption().validate(10).is_ok());
    }
}
