//! Base image corpora, per-step sampling, splits and train-time augmentation.

mod augment;
mod cifar;
mod image;
mod sampling;
pub mod synthetic;

pub use augment::{augment, augment_with, AugmentConfig, AugmentParams, CropMode};
pub use cifar::{
    load_cifar100_dir, load_cifar10_dir, parse_cifar10, parse_cifar100, parse_cifar100_records, parse_cifar10_records, save_corpus_dir, write_cifar10, write_cifar100,
    CIFAR100_RECORD, CIFAR10_RECORD, PIXELS,
};
pub use image::{exact_sin_cos, ImageTensor, Interpolation};
pub use sampling::{draw_samples, draw_step_samples, split_train_val};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("truncated record at byte offset {offset} (stream length {len}, record size {record})")]
    Truncated { offset: usize, len: usize, record: usize },
    #[error("corrupt record at byte offset {offset}: {field} label {value} is not below {bound}")]
    LabelOutOfRange { offset: usize, field: &'static str, value: u8, bound: usize },
    #[error("corpus file not found: {path} (expected {hint})")]
    MissingFile { path: PathBuf, hint: String },
    #[error("requested {requested} samples but only {available} are available")]
    TooLarge { requested: usize, available: usize },
    #[error("balanced draw of {n} samples is not divisible by {classes} classes")]
    Unbalanced { n: usize, classes: usize },
    #[error("class {class} has {available} records, {requested} requested")]
    ClassTooSmall { class: usize, requested: usize, available: usize },
    #[error("validation fraction {0} outside [0, 1)")]
    BadFraction(f64),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One record of a base corpus. `label` is the coarse label for CIFAR-100.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub image: ImageTensor,
    pub label: u8,
    pub fine_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseCorpus {
    pub name: String,
    pub num_classes: usize,
    /// Number of fine classes (CIFAR-100 only).
    pub num_fine: Option<usize>,
    pub train_records: Vec<Record>,
    pub test_records: Vec<Record>,
}

impl BaseCorpus {
    pub fn records(&self, split: Split) -> &[Record] {
        match split {
            Split::Test => &self.test_records,
            Split::Train | Split::Val => &self.train_records,
        }
    }

    pub fn has_fine_labels(&self) -> bool {
        self.num_fine.is_some()
    }

    /// Fine-to-coarse map observed in the corpus (`None` for unseen fine classes).
    pub fn fine_to_coarse(&self) -> Vec<Option<u8>> {
        let mut map = vec![None; self.num_fine.unwrap_or(0)];
        for r in self.train_records.iter().chain(&self.test_records) {
            if let Some(f) = r.fine_label {
                map[f as usize] = Some(r.label);
            }
        }
        map
    }

    pub fn class_histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for r in self.records(split) {
            h[r.label as usize] += 1;
        }
        h
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.train_records
            .first()
            .or(self.test_records.first())
            .map(|r| (r.image.channels, r.image.height, r.image.width))
            .unwrap_or((CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE))
    }
}

/// Samples of one time step and split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub fine_labels: Option<Vec<usize>>,
    pub source_ids: Vec<usize>,
    pub step_index: usize,
    pub split: Split,
    pub num_classes: usize,
}

impl LabeledImageSet {
    pub fn empty(step_index: usize, split: Split, num_classes: usize) -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            fine_labels: None,
            source_ids: Vec::new(),
            step_index,
            split,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Subset in the given index order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            fine_labels: self.fine_labels.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
            source_ids: idx.iter().map(|&i| self.source_ids[i]).collect(),
            step_index: self.step_index,
            split: self.split,
            num_classes: self.num_classes,
        }
    }

    /// Concatenation of several sets; step index and split are taken from the first.
    pub fn concat(sets: &[&LabeledImageSet]) -> Self {
        let first = sets.first().expect("concat of nothing");
        let mut out = Self::empty(first.step_index, first.split, first.num_classes);
        let all_fine = sets.iter().all(|s| s.fine_labels.is_some());
        let mut fine = Vec::new();
        for s in sets {
            out.images.extend(s.images.iter().cloned());
            out.labels.extend(&s.labels);
            out.source_ids.extend(&s.source_ids);
            if let Some(f) = &s.fine_labels {
                fine.extend(f);
            }
        }
        if all_fine {
            out.fine_labels = Some(fine);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Images downscaled by an integer factor (labels and ids unchanged).
    pub fn downscaled(&self, factor: usize) -> Self {
        let mut out = self.clone();
        out.images = self.images.iter().map(|im| im.downscale(factor)).collect();
        out
    }

    /// Flattened intensities in `[0, 1]`, one row per image.
    pub fn unit_rows(&self) -> Vec<Vec<f64>> {
        self.images.iter().map(ImageTensor::to_unit).collect()
    }

    pub fn check_invariants(&self) -> bool {
        let n = self.images.len();
        self.labels.len() == n
            && self.source_ids.len() == n
            && self.fine_labels.as_ref().is_none_or(|f| f.len() == n)
            && self.labels.iter().all(|&l| l < self.num_classes)
    }
}
