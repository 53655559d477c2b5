use crate::{io_err, CliError};
use seqfinal::methods::{Checkpoint, MethodConfig, MethodId, StepLog};
use seqfinal::tensornet::{load_checkpoint, save_checkpoint, ArchSpec, Real, SideRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const INDEX_FILE: &str = "index.csv";
pub const RECORD_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Everything that determines a run's result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub spec_hash: String,
    pub downscale: usize,
    pub arch: ArchSpec,
    pub config: MethodConfig,
}

impl RunKey {
    /// First 16 hex digits of the SHA-256 of the key's JSON form.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("run key serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub final_val_acc: f64,
    pub test_acc: f64,
    pub per_step_val: Vec<f64>,
}

impl Metrics {
    /// The run's metrics CSV row (no timings, so reruns compare equal).
    pub fn csv_row(&self, id: &str, key: &RunKey) -> Vec<String> {
        let per_step: Vec<String> = self.per_step_val.iter().map(|v| format!("{v:.17}")).collect();
        vec![
            id.to_string(),
            key.config.method.label().to_string(),
            key.arch.to_string(),
            key.config.train.seed.to_string(),
            format!("{:.17}", self.final_val_acc),
            format!("{:.17}", self.test_acc),
            per_step.join(";"),
        ]
    }
}

pub const METRICS_HEADER: [&str; 7] = ["run_id", "method", "arch", "seed", "final_val_acc", "test_acc", "per_step_val"];

/// Architecture, side modules and weight file of one saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label: String,
    pub arch: ArchSpec,
    pub sides: Vec<SideRecord>,
    pub side_limit: Option<usize>,
    pub file: String,
}

impl CheckpointMeta {
    pub fn load<T: Real>(&self, run_dir: &Path) -> Result<Checkpoint<T>, CliError> {
        let weights = load_checkpoint(&run_dir.join(&self.file))?;
        Ok(Checkpoint { label: self.label.clone(), arch: self.arch, sides: self.sides.clone(), side_limit: self.side_limit, weights })
    }
}

pub fn save_ck<T: Real>(ck: &Checkpoint<T>, run_dir: &Path, file: &str) -> Result<CheckpointMeta, CliError> {
    save_checkpoint(&ck.weights, &run_dir.join(file))?;
    Ok(CheckpointMeta { label: ck.label.clone(), arch: ck.arch, sides: ck.sides.clone(), side_limit: ck.side_limit, file: file.to_string() })
}

/// Manifest of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub key: RunKey,
    /// Built sequence the run trained on.
    pub sequence_dir: PathBuf,
    pub metrics: Option<Metrics>,
    pub logs: Vec<StepLog>,
    pub final_model: Option<CheckpointMeta>,
    pub init_model: Option<CheckpointMeta>,
    pub checkpoints: Vec<CheckpointMeta>,
    pub side_mode: bool,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn method(&self) -> MethodId {
        self.key.config.method
    }

    pub fn write(&self, run_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let tmp = run_dir.join(format!("{RECORD_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(io_err(&tmp))?;
        let path = run_dir.join(RECORD_FILE);
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn read(run_dir: &Path) -> Result<Self, CliError> {
        let path = run_dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn run_dir(out: &Path, id: &str) -> PathBuf {
    out.join("runs").join(id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub run_id: String,
    pub method: String,
    pub arch: String,
    pub seed: u64,
    pub status: RunStatus,
    pub test_acc: Option<f64>,
    pub spec_hash: String,
}

impl IndexRow {
    pub fn of(record: &RunRecord) -> Self {
        IndexRow {
            run_id: record.run_id.clone(),
            method: record.method().label().to_string(),
            arch: record.key.arch.to_string(),
            seed: record.key.config.train.seed,
            status: record.status,
            test_acc: record.metrics.as_ref().map(|m| m.test_acc),
            spec_hash: record.key.spec_hash.clone(),
        }
    }
}

/// Append-only CSV of run outcomes. Later rows for an id supersede earlier ones.
pub struct Index {
    path: PathBuf,
    lock: Mutex<()>,
}

impl Index {
    pub fn open(out: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join(INDEX_FILE);
        if !path.exists() {
            std::fs::write(&path, "run_id,method,arch,seed,status,test_acc,spec_hash\n").map_err(io_err(&path))?;
        }
        Ok(Index { path, lock: Mutex::new(()) })
    }

    pub fn rows(&self) -> Result<Vec<IndexRow>, CliError> {
        let mut r = csv::Reader::from_path(&self.path)?;
        Ok(r.deserialize().collect::<Result<_, _>>()?)
    }

    /// Latest row per run id.
    pub fn latest(&self) -> Result<BTreeMap<String, IndexRow>, CliError> {
        Ok(self.rows()?.into_iter().map(|r| (r.run_id.clone(), r)).collect())
    }

    pub fn append(&self, row: &IndexRow) -> Result<(), CliError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.serialize(row)?;
        w.flush().map_err(io_err(&self.path))
    }
}
