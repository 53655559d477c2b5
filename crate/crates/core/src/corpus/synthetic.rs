//! Procedural stand-ins for CIFAR-10 and CIFAR-100.
//!
//! Each class is a distribution over images built from three cues: an
//! oriented low-frequency grating, a colored blob at a class-specific
//! location, and a background color. Per-sample jitter on every cue plus
//! pixel noise and a random distractor blob make classes overlap, so small
//! training sets generalize measurably worse than large ones. For the
//! 100-class variant, fine classes of one coarse class share the background
//! and blob colors and differ in grating orientation and blob placement.

use super::{BaseCorpus, ImageTensor, Record, CIFAR_CHANNELS, CIFAR_SIDE};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Scales every jitter and noise level.
    pub difficulty: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 2024, train_per_class: 500, test_per_class: 100, difficulty: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct ClassStyle {
    orientation: f64,
    blob: (f64, f64),
    background: [f64; 3],
    blob_color: [f64; 3],
    grating_color: [f64; 3],
}

fn palette(i: usize, n: usize, lift: f64) -> [f64; 3] {
    let h = i as f64 / n as f64 * 2.0 * PI;
    let c = |shift: f64| (0.5 + 0.4 * (h + shift).cos()) * (1.0 - lift) + lift * 0.5;
    [c(0.0), c(2.0 * PI / 3.0), c(4.0 * PI / 3.0)]
}

fn ring(i: usize, n: usize, radius: f64) -> (f64, f64) {
    let a = i as f64 / n as f64 * 2.0 * PI + 0.3;
    (radius * a.cos(), radius * a.sin())
}

fn cifar10_styles() -> Vec<ClassStyle> {
    (0..10)
        .map(|c| ClassStyle {
            orientation: c as f64 * PI / 10.0 * 3.0,
            blob: ring(c * 3 % 10, 10, 0.45),
            background: palette(c * 7 % 10, 10, 0.45),
            blob_color: palette(c, 10, 0.0),
            grating_color: palette((c + 5) % 10, 10, 0.2),
        })
        .collect()
}

fn cifar100_styles() -> Vec<ClassStyle> {
    (0..100)
        .map(|f| {
            let (coarse, j) = (f / 5, f % 5);
            let family = coarse % 5;
            let site = coarse / 5;
            let base = ring(site, 4, 0.45);
            let nudge = ring(j, 5, 0.12);
            ClassStyle {
                orientation: j as f64 * PI / 5.0 + site as f64 * 0.2,
                blob: (base.0 + nudge.0, base.1 + nudge.1),
                background: palette(family * 2, 10, 0.45),
                blob_color: palette(family * 2 + 1, 10, 0.0),
                grating_color: palette((family * 2 + 5 + j) % 10, 10, 0.3),
            }
        })
        .collect()
}

fn jitter(c: [f64; 3], sigma: f64, rng: &mut SplitMix64) -> [f64; 3] {
    let shared = sigma * rng.normal();
    [0, 1, 2].map(|i| c[i] + shared + 0.5 * sigma * rng.normal())
}

fn render(style: &ClassStyle, d: f64, rng: &mut SplitMix64) -> ImageTensor {
    let side = CIFAR_SIDE;
    let theta = style.orientation + 0.35 * d * rng.normal();
    let phase = rng.uniform(0.0, 2.0 * PI);
    let freq = PI * rng.uniform(0.8, 1.3);
    let bx = style.blob.0 + 0.2 * d * rng.normal();
    let by = style.blob.1 + 0.2 * d * rng.normal();
    let br = 0.3 * rng.uniform(0.8, 1.25);
    let bg = jitter(style.background, 0.1 * d, rng);
    let blob_c = jitter(style.blob_color, 0.1 * d, rng);
    let grat_c = jitter(style.grating_color, 0.1 * d, rng);
    let grat_amp = rng.uniform(0.15, 0.35);
    // Distractor: a random-colored blob anywhere.
    let dx = rng.uniform(-0.8, 0.8);
    let dy = rng.uniform(-0.8, 0.8);
    let dc = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
    let d_amp = 0.6 * d.min(1.5) * rng.next_f64();
    let noise = 0.06 * d;

    let (ct, st) = (theta.cos(), theta.sin());
    let mut img = ImageTensor::zeros(CIFAR_CHANNELS, side, side);
    for y in 0..side {
        let v = 1.0 - 2.0 * (y as f64 + 0.5) / side as f64;
        for x in 0..side {
            let u = 2.0 * (x as f64 + 0.5) / side as f64 - 1.0;
            let g = (freq * (u * ct + v * st) + phase).sin();
            let b = (-((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * br * br)).exp();
            let e = (-((u - dx).powi(2) + (v - dy).powi(2)) / (2.0 * 0.2 * 0.2)).exp() * d_amp;
            for c in 0..CIFAR_CHANNELS {
                let mut p = bg[c] * (1.0 - 0.8 * b - e) + grat_amp * g * (grat_c[c] - 0.3);
                p += 0.8 * b * blob_c[c] + e * dc[c];
                p += noise * rng.normal();
                img.set(c, y, x, (p * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    img
}

fn build(name: &str, styles: &[ClassStyle], coarse_of: impl Fn(usize) -> usize, fine: bool, cfg: &SyntheticConfig) -> BaseCorpus {
    let make = |split: &str, per: usize| -> Vec<Record> {
        let mut rng = SplitMix64::stream(cfg.seed, 0, split);
        let mut out = Vec::with_capacity(per * styles.len());
        // Interleave classes so every prefix is roughly balanced.
        for _ in 0..per {
            for (k, style) in styles.iter().enumerate() {
                out.push(Record {
                    image: render(style, cfg.difficulty, &mut rng),
                    label: coarse_of(k) as u8,
                    fine_label: fine.then_some(k as u8),
                });
            }
        }
        out
    };
    let classes = (0..styles.len()).map(&coarse_of).max().map_or(0, |m| m + 1);
    BaseCorpus {
        name: name.into(),
        num_classes: classes,
        num_fine: fine.then_some(styles.len()),
        train_records: make("train", cfg.train_per_class),
        test_records: make("test", cfg.test_per_class),
    }
}

/// 10-class corpus in CIFAR-10 format.
pub fn synthetic_cifar10(cfg: &SyntheticConfig) -> BaseCorpus {
    build("synthetic-cifar10", &cifar10_styles(), |k| k, false, cfg)
}

/// 20 coarse x 5 fine corpus in CIFAR-100 format; `*_per_class` counts fine classes.
/// Fine class `f` belongs to coarse class `f / 5`.
pub fn synthetic_cifar100(cfg: &SyntheticConfig) -> BaseCorpus {
    build("synthetic-cifar100", &cifar100_styles(), |k| k / 5, true, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticConfig { train_per_class: 3, test_per_class: 1, ..SyntheticConfig::default() };
        assert_eq!(synthetic_cifar10(&cfg), synthetic_cifar10(&cfg));
    }

    #[test]
    fn shapes_and_histograms() {
        let cfg = SyntheticConfig { train_per_class: 2, test_per_class: 1, ..SyntheticConfig::default() };
        let c10 = synthetic_cifar10(&cfg);
        assert_eq!(c10.class_histogram(crate::corpus::Split::Train), vec![2; 10]);
        let c100 = synthetic_cifar100(&cfg);
        assert_eq!(c100.num_classes, 20);
        assert_eq!(c100.train_records.len(), 200);
        assert_eq!(c100.fine_to_coarse()[37], Some(7));
    }
}
