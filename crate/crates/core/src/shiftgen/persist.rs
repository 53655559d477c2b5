//! On-disk form of a materialized sequence: CIFAR-layout binaries plus a
//! JSON manifest carrying the spec, its hash, the derived seeds, per-file
//! digests and the source ids of every sample.

use super::sequence::{MaterializedSequence, SequenceSpec, StepData};
use super::ShiftError;
use crate::corpus::{parse_cifar100_records, parse_cifar10_records, write_cifar10, write_cifar100, LabeledImageSet, Split};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    /// Step index, or `None` for the oracle set.
    pub step: Option<usize>,
    pub split: Split,
    pub oracle: bool,
    pub count: usize,
    pub sha256: String,
    pub source_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub format: u32,
    pub spec_hash: String,
    pub spec: SequenceSpec,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
}

fn encode(set: &LabeledImageSet, cifar100: bool) -> Vec<u8> {
    if cifar100 {
        let fine = set.fine_labels.clone().unwrap_or_else(|| vec![0; set.len()]);
        write_cifar100(set.images.iter().zip(&set.labels).zip(&fine).map(|((im, &y), &f)| (im, y as u8, f as u8)))
    } else {
        write_cifar10(set.images.iter().zip(&set.labels).map(|(im, &y)| (im, y as u8)))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ShiftError + '_ {
    move |source| ShiftError::Io { path: path.to_path_buf(), source }
}

fn seeds_of(spec: &SequenceSpec) -> BTreeMap<String, u64> {
    let mut seeds = BTreeMap::new();
    let last = spec.steps.len().saturating_sub(1) as u64;
    for t in 0..spec.steps.len() as u64 {
        seeds.insert(format!("step{t}/train/draw"), derive_seed(spec.master_seed, t, "train/draw"));
        seeds.insert(format!("step{t}/split"), derive_seed(spec.master_seed, t, "split"));
    }
    seeds.insert("test/draw".into(), derive_seed(spec.master_seed, last, "test/draw"));
    if spec.oracle_count > 0 {
        seeds.insert("oracle/draw".into(), derive_seed(spec.master_seed, last, "oracle/draw"));
    }
    seeds
}

/// Write `seq` into `dir` (created if needed) and return the manifest.
pub fn save_sequence(seq: &MaterializedSequence, dir: &Path) -> Result<SequenceManifest, ShiftError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cifar100 = seq.spec.base_corpus == "cifar100";
    let mut files = Vec::new();
    let mut put = |name: String, step: Option<usize>, oracle: bool, set: &LabeledImageSet| -> Result<(), ShiftError> {
        let bytes = encode(set, cifar100);
        let path = dir.join(&name);
        std::fs::write(&path, &bytes).map_err(io_err(&path))?;
        files.push(FileEntry {
            name,
            step,
            split: set.split,
            oracle,
            count: set.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            source_ids: set.source_ids.clone(),
        });
        Ok(())
    };
    for s in &seq.steps {
        put(format!("step{}_train.bin", s.index), Some(s.index), false, &s.train)?;
        put(format!("step{}_val.bin", s.index), Some(s.index), false, &s.val)?;
    }
    put("final_test.bin".into(), Some(seq.steps.len() - 1), false, &seq.test)?;
    if let Some((tr, va)) = &seq.oracle {
        put("oracle_train.bin".into(), None, true, tr)?;
        put("oracle_val.bin".into(), None, true, va)?;
    }
    let manifest =
        SequenceManifest { format: 1, spec_hash: seq.spec_hash.clone(), spec: seq.spec.clone(), seeds: seeds_of(&seq.spec), files };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ShiftError::Manifest(e.to_string()))?;
    std::fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<SequenceManifest, ShiftError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ShiftError::Manifest(format!("{} not found; run build-seq first", path.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ShiftError::Manifest(format!("{}: {e}", path.display())))
}

/// Read a sequence written by [`save_sequence`], verifying the spec hash and file digests.
pub fn load_sequence(dir: &Path) -> Result<MaterializedSequence, ShiftError> {
    let m = read_manifest(dir)?;
    let hash = m.spec.hash();
    if hash != m.spec_hash {
        return Err(ShiftError::Manifest(format!("spec hash mismatch: manifest says {}, spec hashes to {hash}", m.spec_hash)));
    }
    let cifar100 = m.spec.base_corpus == "cifar100";
    let classes = if cifar100 { 20 } else { 10 };
    let load = |e: &FileEntry| -> Result<LabeledImageSet, ShiftError> {
        let path = dir.join(&e.name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != e.sha256 {
            return Err(ShiftError::Manifest(format!("{} digest {digest} does not match manifest", e.name)));
        }
        let records = if cifar100 { parse_cifar100_records(&bytes)? } else { parse_cifar10_records(&bytes)? };
        if records.len() != e.count || e.source_ids.len() != e.count {
            return Err(ShiftError::Manifest(format!("{} holds {} records, manifest says {}", e.name, records.len(), e.count)));
        }
        Ok(LabeledImageSet {
            labels: records.iter().map(|r| r.label as usize).collect(),
            fine_labels: cifar100.then(|| records.iter().map(|r| r.fine_label.unwrap_or(0) as usize).collect()),
            images: records.into_iter().map(|r| r.image).collect(),
            source_ids: e.source_ids.clone(),
            step_index: e.step.unwrap_or(m.spec.steps.len() - 1),
            split: e.split,
            num_classes: classes,
        })
    };
    let find = |pred: &dyn Fn(&FileEntry) -> bool, what: &str| {
        m.files.iter().find(|e| pred(e)).ok_or_else(|| ShiftError::Manifest(format!("manifest lists no {what}")))
    };
    let mut steps = Vec::new();
    for (t, s) in m.spec.steps.iter().enumerate() {
        let train = load(find(&|e| !e.oracle && e.step == Some(t) && e.split == Split::Train, &format!("step {t} train set"))?)?;
        let val = load(find(&|e| !e.oracle && e.step == Some(t) && e.split == Split::Val, &format!("step {t} val set"))?)?;
        steps.push(StepData { index: t, shifts: s.shifts.clone(), train, val });
    }
    let test = load(find(&|e| e.split == Split::Test, "test set")?)?;
    let oracle = if m.spec.oracle_count > 0 {
        Some((
            load(find(&|e| e.oracle && e.split == Split::Train, "oracle train set")?)?,
            load(find(&|e| e.oracle && e.split == Split::Val, "oracle val set")?)?,
        ))
    } else {
        None
    };
    Ok(MaterializedSequence { spec: m.spec, spec_hash: m.spec_hash, steps, test, oracle, num_classes: classes })
}
