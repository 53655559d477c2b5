use super::{ImageTensor, Interpolation};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    None,
    Center,
    #[default]
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub crop: CropMode,
    pub pad: usize,
    pub max_rotation_deg: f64,
    pub interpolation: Interpolation,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, crop: CropMode::Random, pad: 4, max_rotation_deg: 10.0, interpolation: Interpolation::Bilinear }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { flip_prob: 0.0, crop: CropMode::None, pad: 0, max_rotation_deg: 0.0, interpolation: Interpolation::Bilinear }
    }

    /// Same transform family with the pad scaled to an image side (4 px at 32 px).
    pub fn for_side(&self, side: usize) -> Self {
        let mut c = self.clone();
        c.pad = ((self.pad * side) as f64 / 32.0).round() as usize;
        c
    }
}

/// One concrete draw of the augmentation transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub crop_top: usize,
    pub crop_left: usize,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub fn sample(config: &AugmentConfig, rng: &mut SplitMix64) -> Self {
        let flip = rng.bernoulli(config.flip_prob);
        let (crop_top, crop_left) = match config.crop {
            CropMode::Random if config.pad > 0 => {
                let span = 2 * config.pad as u64 + 1;
                (rng.below(span) as usize, rng.below(span) as usize)
            }
            _ => (config.pad, config.pad),
        };
        let angle_deg = if config.max_rotation_deg > 0.0 {
            rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
        } else {
            0.0
        };
        Self { flip, crop_top, crop_left, angle_deg }
    }
}

/// Flip, then pad-and-crop, then rotate.
pub fn augment_with(image: &ImageTensor, params: &AugmentParams, config: &AugmentConfig) -> ImageTensor {
    let mut out = if params.flip { image.flip_horizontal() } else { image.clone() };
    if config.crop != CropMode::None && config.pad > 0 && (params.crop_top, params.crop_left) != (config.pad, config.pad) {
        out = out.pad_crop(config.pad, params.crop_top, params.crop_left);
    }
    if params.angle_deg != 0.0 {
        out = out.rotate(params.angle_deg, config.interpolation);
    }
    out
}

/// Draw a transform from `seed` and apply it.
pub fn augment(image: &ImageTensor, config: &AugmentConfig, seed: u64) -> ImageTensor {
    let params = AugmentParams::sample(config, &mut SplitMix64::new(seed));
    augment_with(image, &params, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageTensor {
        ImageTensor::from_planar(3, 32, 32, (0..3072).map(|i| (i * 13 % 256) as u8).collect())
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let cfg = AugmentConfig { crop: CropMode::None, max_rotation_deg: 0.0, ..AugmentConfig::default() };
        let p = AugmentParams { flip: true, crop_top: 4, crop_left: 4, angle_deg: 0.0 };
        let im = img();
        assert_eq!(augment_with(&augment_with(&im, &p, &cfg), &p, &cfg), im);
    }

    #[test]
    fn null_transform_is_identity() {
        let cfg = AugmentConfig::default();
        let p = AugmentParams { flip: false, crop_top: 4, crop_left: 4, angle_deg: 0.0 };
        assert_eq!(augment_with(&img(), &p, &cfg), img());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&img(), &cfg, 77), augment(&img(), &cfg, 77));
        let p = AugmentParams::sample(&cfg, &mut SplitMix64::new(5));
        assert!(p.crop_top <= 8 && p.angle_deg.abs() <= 10.0);
    }

    #[test]
    fn pad_scales_with_side() {
        assert_eq!(AugmentConfig::default().for_side(8).pad, 1);
        assert_eq!(AugmentConfig::default().for_side(16).pad, 2);
    }
}
