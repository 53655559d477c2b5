use crate::{io_err, CliError};
use seqfinal::analysis::MeanRule;
use seqfinal::methods::{MethodConfig, MethodId, TrainConfig};
use seqfinal::shiftgen::{preset, PRESET_NAMES};
use seqfinal::tensornet::ArchSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which sequence an experiment uses and how it is scaled down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceSection {
    pub preset: Option<String>,
    /// Sequence spec file (TOML), relative to the config file.
    pub spec: Option<PathBuf>,
    /// Previously built sequence directory; takes precedence over the others.
    pub dir: Option<PathBuf>,
    pub seed: u64,
    /// Divides every sample count of a preset.
    pub sample_divisor: usize,
    /// Integer factor by which images are shrunk before training.
    pub downscale: usize,
}

impl Default for SequenceSection {
    fn default() -> Self {
        Self { preset: None, spec: None, dir: None, seed: 0, sample_divisor: 1, downscale: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub methods: Vec<String>,
    pub archs: Vec<String>,
    pub seeds: Vec<u64>,
    /// Channel divisor of every architecture (1 = full width).
    pub scale_factor: usize,
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            methods: MethodId::ALL.iter().map(|m| m.label().to_string()).collect(),
            archs: vec!["Conv-2".into()],
            seeds: vec![0],
            scale_factor: 4,
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub grid: usize,
    pub threshold: f64,
    pub mean_rule: MeanRule,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { grid: 21, threshold: 0.02, mean_rule: MeanRule::Spread }
    }
}

/// One experiment: sequence, grid of runs, training and method settings.
/// The `method` section holds hyperparameters shared by every method; its
/// `method` and `train` keys are replaced per run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sequence: SequenceSection,
    pub run: RunSection,
    pub train: TrainConfig,
    pub method: MethodConfig,
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Parse a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.sequence.spec, &mut cfg.sequence.dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.run.out.is_relative() {
            cfg.run.out = base.join(&cfg.run.out);
        }
        Ok(cfg)
    }

    pub fn methods(&self) -> Result<Vec<MethodId>, CliError> {
        Ok(self.run.methods.iter().map(|m| m.parse()).collect::<Result<Vec<MethodId>, _>>()?)
    }

    /// Architectures at the configured width divisor, for `classes` outputs.
    pub fn archs(&self, classes: usize) -> Result<Vec<ArchSpec>, CliError> {
        self.run
            .archs
            .iter()
            .map(|a| {
                let mut spec: ArchSpec = a.parse()?;
                spec.num_classes = classes;
                let spec = spec.with_divisor(self.run.scale_factor);
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    /// Full per-run method configuration.
    pub fn method_config(&self, method: MethodId, seed: u64) -> MethodConfig {
        MethodConfig { method, train: TrainConfig { seed, ..self.train }, ..self.method.clone() }
    }

    /// Checks that do not need the corpus; also makes sure `out` is writable.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.sequence;
        if s.dir.is_none() && s.spec.is_none() && s.preset.is_none() {
            return Err(CliError::Config("no sequence given: set a preset, a spec file or a built sequence directory".into()));
        }
        if let Some(p) = &s.preset {
            if preset(p, 0, 1).is_none() {
                return Err(CliError::Config(format!("unknown preset {p:?}; known presets: {}", PRESET_NAMES.join(", "))));
            }
        }
        if s.sample_divisor == 0 || s.downscale == 0 || self.run.scale_factor == 0 {
            return Err(CliError::Config("sample divisor, downscale and scale factor must be positive".into()));
        }
        if self.run.workers == 0 {
            return Err(CliError::Config("worker count must be positive".into()));
        }
        if self.run.seeds.is_empty() || self.run.methods.is_empty() || self.run.archs.is_empty() {
            return Err(CliError::Config("methods, architectures and seeds must be nonempty".into()));
        }
        for m in self.methods()? {
            self.method_config(m, 0).validate()?;
        }
        self.archs(10)?;
        ensure_writable(&self.run.out)
    }
}

pub fn ensure_writable(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(io_err(&probe))?;
    std::fs::remove_file(&probe).map_err(io_err(&probe))
}

/// Parse a comma-separated list flag.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}
