use crate::config::{AnalysisSection, ExperimentConfig, SequenceSection};
use crate::data::{build_sequence, load_checked, obtain_sequence, resolve_spec, sequence_dir, CorpusSource};
use crate::store::*;
use crate::{io_err, CliError};
use rayon::prelude::*;
use seqfinal::analysis::{format_results, interpolation_path, layer_activations, project_weights, svcca, svg, InterpolationPath, ProjectionPoint, ResultGrid, ResultTable};
use seqfinal::corpus::LabeledImageSet;
use seqfinal::methods::{run_method, Checkpoint, MethodId, Model};
use seqfinal::shiftgen::{MaterializedSequence, SequenceManifest};
use seqfinal::shiftmetrics::{shift_report, ShiftConfig, ShiftReport};
use seqfinal::tensornet::{Precision, Real};
use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

/// Build a sequence into `dir` (default: under `out/sequences`).
pub fn cmd_build_seq(section: &SequenceSection, out: &Path, dir: Option<&Path>, corpus: &CorpusSource) -> Result<(PathBuf, SequenceManifest), CliError> {
    let spec = resolve_spec(section)?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(|| sequence_dir(out, &spec));
    let manifest = build_sequence(&spec, corpus, &dir)?;
    log::info!("built {} ({} steps) into {}", spec.name, spec.num_steps(), dir.display());
    Ok((dir, manifest))
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl RunSummary {
    pub fn all_succeeded(&self) -> bool {
        self.failed == 0
    }
}

/// Run the (architecture x method x seed) grid, skipping completed runs.
pub fn cmd_run(cfg: &ExperimentConfig, corpus: &CorpusSource) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out = &cfg.run.out;
    let (seq_dir, seq) = obtain_sequence(&cfg.sequence, out, corpus)?;
    let seq = if cfg.sequence.downscale > 1 { seq.downscaled(cfg.sequence.downscale) } else { seq };
    let index = Index::open(out)?;
    let done = index.latest()?;

    let mut summary = RunSummary::default();
    let mut pending = Vec::new();
    for arch in cfg.archs(seq.num_classes)? {
        for method in cfg.methods()? {
            for &seed in &cfg.run.seeds {
                let key = RunKey { spec_hash: seq.spec_hash.clone(), downscale: cfg.sequence.downscale, arch, config: cfg.method_config(method, seed) };
                let id = key.id();
                let dir = run_dir(out, &id);
                if done.get(&id).is_some_and(|r| r.status == RunStatus::Completed) {
                    match RunRecord::read(&dir) {
                        Ok(rec) if rec.status == RunStatus::Completed && rec.key == key => {
                            summary.skipped += 1;
                            summary.records.push(rec);
                            continue;
                        }
                        Ok(rec) if rec.key.spec_hash != key.spec_hash => {
                            return Err(CliError::Integrity(format!("run {id} was produced from spec {} but the sequence is {}", rec.key.spec_hash, key.spec_hash)));
                        }
                        _ => log::warn!("run {id} is indexed as completed but {} is missing or stale; rerunning", dir.join(RECORD_FILE).display()),
                    }
                }
                pending.push((id, key));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.workers).build().map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<RunRecord, CliError>> = pool.install(|| {
        pending
            .par_iter()
            .map(|(id, key)| {
                let rec = execute(&seq, &seq_dir, id, key, out);
                rec.write(&run_dir(out, id))?;
                index.append(&IndexRow::of(&rec))?;
                Ok(rec)
            })
            .collect()
    });
    for r in results {
        let rec = r?;
        match rec.status {
            RunStatus::Completed => summary.trained += 1,
            RunStatus::Failed => summary.failed += 1,
        }
        summary.records.push(rec);
    }
    Ok(summary)
}

/// Train one run; any error or panic becomes a failed record.
fn execute(seq: &MaterializedSequence, seq_dir: &Path, id: &str, key: &RunKey, out: &Path) -> RunRecord {
    let dir = run_dir(out, id);
    log::info!("run {id}: {} on {} seed {}", key.config.method, key.arch, key.config.train.seed);
    let attempt = catch_unwind(AssertUnwindSafe(|| match key.config.train.precision {
        Precision::Single => train::<f32>(seq, seq_dir, id, key, &dir),
        Precision::Double => train::<f64>(seq, seq_dir, id, key, &dir),
    }));
    let error = match attempt {
        Ok(Ok(rec)) => return rec,
        Ok(Err(e)) => e.to_string(),
        Err(panic) => panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "worker panicked".into()),
    };
    log::error!("run {id} failed: {error}");
    RunRecord {
        run_id: id.to_string(),
        status: RunStatus::Failed,
        key: key.clone(),
        sequence_dir: seq_dir.to_path_buf(),
        metrics: None,
        logs: Vec::new(),
        final_model: None,
        init_model: None,
        checkpoints: Vec::new(),
        side_mode: false,
        error: Some(error),
    }
}

fn train<T: Real>(seq: &MaterializedSequence, seq_dir: &Path, id: &str, key: &RunKey, dir: &Path) -> Result<RunRecord, CliError> {
    let outcome = run_method::<T>(seq, key.arch, &key.config)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let final_model = save_ck(&outcome.final_model, dir, "final.ckpt")?;
    let init_model = outcome.init_model.as_ref().map(|ck| save_ck(ck, dir, "init.ckpt")).transpose()?;
    let checkpoints = outcome.checkpoints.iter().map(|ck| save_ck(ck, dir, &format!("{}.ckpt", ck.label))).collect::<Result<Vec<_>, _>>()?;
    let metrics = Metrics { final_val_acc: outcome.final_val_acc, test_acc: outcome.test_acc, per_step_val: outcome.per_step_val.clone() };
    let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    w.write_record(METRICS_HEADER)?;
    w.write_record(metrics.csv_row(id, key))?;
    w.flush().map_err(io_err(dir.join(METRICS_FILE)))?;
    Ok(RunRecord {
        run_id: id.to_string(),
        status: RunStatus::Completed,
        key: key.clone(),
        sequence_dir: seq_dir.to_path_buf(),
        metrics: Some(metrics),
        logs: outcome.logs,
        final_model: Some(final_model),
        init_model,
        checkpoints,
        side_mode: outcome.side_mode,
        error: None,
    })
}

/// Shift metrics of a built sequence, written to `out/quantify/`.
pub fn cmd_quantify(seq_dir: &Path, out: &Path, cfg: &ShiftConfig) -> Result<(PathBuf, ShiftReport), CliError> {
    let seq = load_checked(seq_dir, None)?;
    let (report, _) = shift_report(&seq, cfg)?;
    let dir = out.join("quantify");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(format!("{}-{}.csv", seq.spec.name, &seq.spec_hash[..12]));
    std::fs::write(&path, report.to_csv()).map_err(io_err(&path))?;
    Ok((path, report))
}

/// Completed runs, in index order of their latest row.
fn completed_runs(out: &Path) -> Result<Vec<RunRecord>, CliError> {
    let index = Index::open(out)?;
    let mut recs = Vec::new();
    for row in index.latest()?.into_values().filter(|r| r.status == RunStatus::Completed) {
        let rec = RunRecord::read(&run_dir(out, &row.run_id))?;
        if rec.key.spec_hash != row.spec_hash {
            return Err(CliError::Integrity(format!("run {} disagrees with the index about its spec", row.run_id)));
        }
        recs.push(rec);
    }
    Ok(recs)
}

type GroupKey = (String, String, u64);

fn group_key(r: &RunRecord) -> GroupKey {
    (r.key.spec_hash.clone(), r.key.arch.to_string(), r.key.config.train.seed)
}

fn group_name(k: &GroupKey) -> String {
    format!("{}_{}_s{}", &k.0[..12], k.1, k.2)
}

/// Interpolation paths, weight projections and SVCCA scores of completed runs.
pub fn cmd_analyze(out: &Path, cfg: &AnalysisSection) -> Result<Vec<PathBuf>, CliError> {
    let runs = completed_runs(out)?;
    let adir = out.join("analysis");
    std::fs::create_dir_all(&adir).map_err(io_err(&adir))?;
    let mut tests: HashMap<(PathBuf, usize), LabeledImageSet> = HashMap::new();
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in &runs {
        let k = (r.sequence_dir.clone(), r.key.downscale);
        if let std::collections::hash_map::Entry::Vacant(e) = tests.entry(k) {
            let seq = load_checked(&r.sequence_dir, Some(&r.key.spec_hash))?;
            let seq = if r.key.downscale > 1 { seq.downscaled(r.key.downscale) } else { seq };
            e.insert(seq.test);
        }
        groups.entry(group_key(r)).or_default().push(r);
    }
    let mut written = Vec::new();
    for (gk, members) in &groups {
        let test = &tests[&(members[0].sequence_dir.clone(), members[0].key.downscale)];
        let name = group_name(gk);

        let mut paths: Vec<(String, InterpolationPath)> = Vec::new();
        for r in members {
            let dir = run_dir(out, &r.run_id);
            let (Some(init), Some(fin)) = (&r.init_model, &r.final_model) else { continue };
            let path = interpolation_path(&init.load::<f64>(&dir)?, &fin.load::<f64>(&dir)?, test, cfg.grid, r.side_mode)?;
            let file = dir.join("interpolation.csv");
            std::fs::write(&file, path.to_csv()?).map_err(io_err(&file))?;
            written.push(file);
            paths.push((r.method().label().to_string(), path));
        }
        if !paths.is_empty() {
            let refs: Vec<(&str, &InterpolationPath)> = paths.iter().map(|(m, p)| (m.as_str(), p)).collect();
            let file = adir.join(format!("{name}_interpolation.svg"));
            std::fs::write(&file, svg::interpolation_chart(&format!("{} seed {}", gk.1, gk.2), &refs)).map_err(io_err(&file))?;
            written.push(file);
        }

        let find = |m: MethodId| members.iter().find(|r| r.method() == m).copied();
        let (Some(oracle), Some(erm), Some(base)) = (find(MethodId::Oracle), find(MethodId::Erm), find(MethodId::Baseline)) else {
            log::info!("{name}: projections and SVCCA need Oracle, ERM and Baseline runs; skipped");
            continue;
        };
        let load_final = |r: &RunRecord| -> Result<Checkpoint<f64>, CliError> {
            r.final_model.as_ref().expect("completed run has a final model").load(&run_dir(out, &r.run_id))
        };
        let (star, hist, lim) = (load_final(oracle)?, load_final(erm)?, load_final(base)?);
        written.extend(projections(&adir, &name, out, members, &star, &hist, &lim)?);
        written.push(svcca_table(&adir, &name, out, members, &star, test)?);
    }
    Ok(written)
}

fn projections(adir: &Path, name: &str, out: &Path, members: &[&RunRecord], star: &Checkpoint<f64>, hist: &Checkpoint<f64>, lim: &Checkpoint<f64>) -> Result<Vec<PathBuf>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "method", "checkpoint", "x", "y"])?;
    let mut trajectories: Vec<(String, Vec<ProjectionPoint>)> = Vec::new();
    for r in members {
        let dir = run_dir(out, &r.run_id);
        let metas = r.checkpoints.iter().chain(r.final_model.iter()).filter(|m| m.sides.is_empty());
        let mut points = Vec::new();
        for meta in metas {
            let ck: Checkpoint<f64> = meta.load(&dir)?;
            let p = project_weights(&ck.weights, &star.weights, &hist.weights, &lim.weights, None)?;
            w.write_record([r.run_id.as_str(), r.method().label(), &meta.label, &format!("{:.9}", p.x), &format!("{:.9}", p.y)])?;
            points.push(p);
        }
        if !points.is_empty() {
            trajectories.push((r.method().label().to_string(), points));
        }
    }
    let csv_file = adir.join(format!("{name}_projection.csv"));
    std::fs::write(&csv_file, w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).map_err(io_err(&csv_file))?;
    let refs: Vec<(&str, &[ProjectionPoint])> = trajectories.iter().map(|(m, p)| (m.as_str(), p.as_slice())).collect();
    let svg_file = adir.join(format!("{name}_projection.svg"));
    std::fs::write(&svg_file, svg::projection_chart(name, &refs)).map_err(io_err(&svg_file))?;
    Ok(vec![csv_file, svg_file])
}

fn svcca_table(adir: &Path, name: &str, out: &Path, members: &[&RunRecord], star: &Checkpoint<f64>, test: &LabeledImageSet) -> Result<PathBuf, CliError> {
    let mut reference = Model::from_checkpoint(star)?;
    let blocks: Vec<(usize, String)> = reference.net.unit_names().into_iter().enumerate().filter(|(_, n)| n.starts_with("block")).collect();
    let ref_acts = blocks.iter().map(|(u, _)| layer_activations(&mut reference, test, *u)).collect::<Result<Vec<_>, _>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "method", "unit", "mean_top50", "mean_top90"])?;
    for r in members {
        let ck: Checkpoint<f64> = r.final_model.as_ref().expect("completed run has a final model").load(&run_dir(out, &r.run_id))?;
        let mut model = Model::from_checkpoint(&ck)?;
        for ((u, unit), a) in blocks.iter().zip(&ref_acts) {
            let s = svcca(&layer_activations(&mut model, test, *u)?, a)?;
            w.write_record([r.run_id.as_str(), r.method().label(), unit, &format!("{:.6}", s.mean_top50), &format!("{:.6}", s.mean_top90)])?;
        }
    }
    let file = adir.join(format!("{name}_svcca.csv"));
    std::fs::write(&file, w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).map_err(io_err(&file))?;
    Ok(file)
}

/// Result tables (test accuracy averaged over seeds), one per sequence.
pub fn cmd_report(out: &Path, cfg: &AnalysisSection) -> Result<Vec<(PathBuf, ResultTable)>, CliError> {
    let runs = completed_runs(out)?;
    let mut by_seq: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in &runs {
        by_seq.entry(r.key.spec_hash.clone()).or_default().push(r);
    }
    let rdir = out.join("report");
    std::fs::create_dir_all(&rdir).map_err(io_err(&rdir))?;
    let mut tables = Vec::new();
    for (hash, recs) in by_seq {
        let mut archs: Vec<String> = recs.iter().map(|r| r.key.arch.to_string()).collect();
        archs.sort();
        archs.dedup();
        let methods: Vec<MethodId> = MethodId::ALL.into_iter().filter(|m| recs.iter().any(|r| r.method() == *m)).collect();
        let acc = archs
            .iter()
            .map(|a| {
                methods
                    .iter()
                    .map(|&m| {
                        let xs: Vec<f64> = recs
                            .iter()
                            .filter(|r| r.method() == m && r.key.arch.to_string() == *a)
                            .filter_map(|r| r.metrics.as_ref().map(|x| x.test_acc))
                            .collect();
                        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
                    })
                    .collect()
            })
            .collect();
        let grid = ResultGrid {
            archs,
            methods: methods.iter().map(|m| m.label().to_string()).collect(),
            oracle: methods.contains(&MethodId::Oracle).then(|| MethodId::Oracle.label().to_string()),
            acc,
        };
        let table = format_results(&grid, cfg.threshold, cfg.mean_rule)?;
        let base = rdir.join(&hash[..12]);
        let (md, csv_path) = (base.with_extension("md"), base.with_extension("csv"));
        std::fs::write(&md, table.to_text()).map_err(io_err(&md))?;
        std::fs::write(&csv_path, table.to_csv()?).map_err(io_err(&csv_path))?;
        tables.push((md, table));
    }
    Ok(tables)
}
