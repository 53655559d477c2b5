use crate::config::SequenceSection;
use crate::{io_err, CliError};
use seqfinal::corpus::synthetic::{synthetic_cifar10, synthetic_cifar100, SyntheticConfig};
use seqfinal::corpus::{load_cifar100_dir, load_cifar10_dir, BaseCorpus};
use seqfinal::shiftgen::persist::read_manifest;
use seqfinal::shiftgen::{load_sequence, materialize_sequence, preset, save_sequence, spec_from_toml, MaterializedSequence, SequenceManifest, SequenceSpec};
use std::path::{Path, PathBuf};

/// Directory holding `cifar-10-batches-bin/` and `cifar-100-binary/`.
pub const CORPUS_ENV: &str = "SEQFINAL_CORPUS_ROOT";

/// Where the base corpus comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    Dir(PathBuf),
    /// Procedural stand-in, used when no corpus root is configured.
    Synthetic,
}

impl CorpusSource {
    pub fn from_env() -> Self {
        match std::env::var_os(CORPUS_ENV) {
            Some(p) if !p.is_empty() => CorpusSource::Dir(PathBuf::from(p)),
            _ => CorpusSource::Synthetic,
        }
    }

    /// Load the corpus `spec` draws from. The synthetic corpus is sized so
    /// that every draw of `spec` fits, even when one sub-population carries
    /// a whole coarse class.
    pub fn load_for(&self, spec: &SequenceSpec) -> Result<BaseCorpus, CliError> {
        let cifar100 = spec.base_corpus == "cifar100";
        match self {
            CorpusSource::Dir(root) if cifar100 => Ok(load_cifar100_dir(&root.join("cifar-100-binary"))?),
            CorpusSource::Dir(root) => Ok(load_cifar10_dir(&root.join("cifar-10-batches-bin"))?),
            CorpusSource::Synthetic => {
                log::warn!("{CORPUS_ENV} is not set; using the synthetic CIFAR-format corpus");
                let coarse = if cifar100 { 20 } else { 10 };
                let per = |n: usize| n.div_ceil(coarse);
                let train = spec.steps.iter().map(|s| s.train_count).chain([spec.oracle_count]).max().unwrap_or(0);
                let cfg = SyntheticConfig { train_per_class: per(train), test_per_class: per(spec.test_count_final), ..SyntheticConfig::default() };
                Ok(if cifar100 { synthetic_cifar100(&cfg) } else { synthetic_cifar10(&cfg) })
            }
        }
    }
}

/// The spec named by a sequence section (preset or spec file).
pub fn resolve_spec(s: &SequenceSection) -> Result<SequenceSpec, CliError> {
    if let Some(path) = &s.spec {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut spec = spec_from_toml(&text)?;
        spec.master_seed = s.seed;
        return Ok(spec);
    }
    let name = s.preset.as_deref().ok_or_else(|| CliError::Config("sequence section names neither a preset nor a spec file".into()))?;
    preset(name, s.seed, s.sample_divisor).ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))
}

/// Default location of a built sequence under `out`.
pub fn sequence_dir(out: &Path, spec: &SequenceSpec) -> PathBuf {
    out.join("sequences").join(format!("{}-{}", spec.name, &spec.hash()[..12]))
}

/// Materialize `spec` and persist it to `dir`.
pub fn build_sequence(spec: &SequenceSpec, corpus: &CorpusSource, dir: &Path) -> Result<SequenceManifest, CliError> {
    let base = corpus.load_for(spec)?;
    let seq = materialize_sequence(spec, &base)?;
    Ok(save_sequence(&seq, dir)?)
}

/// Load a built sequence, aborting when its manifest does not match `expected`.
pub fn load_checked(dir: &Path, expected: Option<&str>) -> Result<MaterializedSequence, CliError> {
    let manifest = read_manifest(dir)?;
    if let Some(h) = expected {
        if manifest.spec_hash != h {
            return Err(CliError::Integrity(format!("{}: built from spec {} but {h} was expected", dir.display(), manifest.spec_hash)));
        }
    }
    let seq = load_sequence(dir)?;
    Ok(seq)
}

/// The sequence of an experiment: the configured directory, or the built
/// copy under `out` (building it first when missing).
pub fn obtain_sequence(s: &SequenceSection, out: &Path, corpus: &CorpusSource) -> Result<(PathBuf, MaterializedSequence), CliError> {
    if let Some(dir) = &s.dir {
        return Ok((dir.clone(), load_checked(dir, None)?));
    }
    let spec = resolve_spec(s)?;
    let dir = sequence_dir(out, &spec);
    if !dir.join(seqfinal::shiftgen::persist::MANIFEST_FILE).exists() {
        build_sequence(&spec, corpus, &dir)?;
    }
    let seq = load_checked(&dir, Some(&spec.hash()))?;
    Ok((dir, seq))
}
