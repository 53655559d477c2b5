use clap::{Args, Parser, Subcommand};
use seqfinal::analysis::MeanRule;
use seqfinal::shiftmetrics::ShiftConfig;
use seqfinal::tensornet::Precision;
use seqfinal_cli::config::{ensure_writable, split_list};
use seqfinal_cli::data::{obtain_sequence, CorpusSource, CORPUS_ENV};
use seqfinal_cli::*;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "seqfinal", version, about = "Sequential distribution shift benchmark")]
struct Cli {
    /// Base corpus root; the synthetic corpus is used when unset.
    #[arg(long, global = true, env = CORPUS_ENV)]
    corpus_root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Materialize a sequence and write its datasets and manifest.
    BuildSeq {
        #[command(flatten)]
        common: Common,
        /// Target directory (default: <out>/sequences/<name>-<hash>).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Train the method x architecture x seed grid; completed runs are skipped.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method labels, e.g. FT,LP-FT,JM.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated architectures, e.g. Conv-2,Res-1.
        #[arg(long)]
        archs: Option<String>,
        /// Comma-separated run seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Channel divisor of every architecture.
        #[arg(long)]
        scale_factor: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        double: bool,
    },
    /// Covariate and conditional shift of every step relative to the final one.
    Quantify {
        #[command(flatten)]
        common: Common,
    },
    /// Interpolation paths, weight projections and SVCCA of completed runs.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Interpolation grid points.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Result tables with best and oracle-like markers.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
        /// `spread` or `threshold`.
        #[arg(long)]
        mean_rule: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Sequence spec file (TOML).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built sequence directory.
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// Sequence seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Divides every sample count of a preset.
    #[arg(long)]
    sample_divisor: Option<usize>,
    /// Integer image shrink factor applied before training.
    #[arg(long)]
    downscale: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let s = &mut cfg.sequence;
        if self.preset.is_some() || self.spec.is_some() || self.sequence.is_some() {
            s.preset = self.preset.clone();
            s.spec = self.spec.clone();
            s.dir = self.sequence.clone();
        }
        s.seed = self.seed.unwrap_or(s.seed);
        s.sample_divisor = self.sample_divisor.unwrap_or(s.sample_divisor);
        s.downscale = self.downscale.unwrap_or(s.downscale);
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        Ok(cfg)
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    split_list(s).iter().map(|x| x.parse().map_err(|_| CliError::Config(format!("bad seed {x:?}")))).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    let corpus = cli.corpus_root.map_or(CorpusSource::Synthetic, CorpusSource::Dir);
    match cli.cmd {
        Cmd::BuildSeq { common, dir } => {
            let cfg = common.config()?;
            ensure_writable(&cfg.run.out)?;
            let (dir, manifest) = cmd_build_seq(&cfg.sequence, &cfg.run.out, dir.as_deref(), &corpus)?;
            println!("{}\t{}", manifest.spec_hash, dir.display());
        }
        Cmd::Run { common, methods, archs, seeds, scale_factor, workers, epochs, double } => {
            let mut cfg = common.config()?;
            let r = &mut cfg.run;
            if let Some(m) = methods {
                r.methods = split_list(&m);
            }
            if let Some(a) = archs {
                r.archs = split_list(&a);
            }
            if let Some(s) = seeds {
                r.seeds = parse_seeds(&s)?;
            }
            r.scale_factor = scale_factor.unwrap_or(r.scale_factor);
            r.workers = workers.unwrap_or(r.workers);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            if double {
                cfg.train.precision = Precision::Double;
            }
            let summary = cmd_run(&cfg, &corpus)?;
            for rec in &summary.records {
                let acc = rec.metrics.as_ref().map_or("-".to_string(), |m| format!("{:.4}", m.test_acc));
                println!("{}\t{:?}\t{}\t{}\tseed {}\t{acc}", rec.run_id, rec.status, rec.method(), rec.key.arch, rec.key.config.train.seed);
            }
            println!("trained {}, skipped {}, failed {}", summary.trained, summary.skipped, summary.failed);
            return Ok(summary.all_succeeded());
        }
        Cmd::Quantify { common } => {
            let cfg = common.config()?;
            ensure_writable(&cfg.run.out)?;
            let (dir, _) = obtain_sequence(&cfg.sequence, &cfg.run.out, &corpus)?;
            let (path, report) = cmd_quantify(&dir, &cfg.run.out, &ShiftConfig::default())?;
            print!("{}", report.to_csv());
            eprintln!("wrote {}", path.display());
        }
        Cmd::Analyze { common, grid } => {
            let mut cfg = common.config()?;
            cfg.analysis.grid = grid.unwrap_or(cfg.analysis.grid);
            for f in cmd_analyze(&cfg.run.out, &cfg.analysis)? {
                println!("{}", f.display());
            }
        }
        Cmd::Report { common, threshold, mean_rule } => {
            let mut cfg = common.config()?;
            cfg.analysis.threshold = threshold.unwrap_or(cfg.analysis.threshold);
            if let Some(rule) = mean_rule {
                cfg.analysis.mean_rule = match rule.as_str() {
                    "spread" => MeanRule::Spread,
                    "threshold" => MeanRule::Threshold,
                    other => return Err(CliError::Config(format!("unknown mean rule {other:?} (spread or threshold)"))),
                };
            }
            for (path, table) in cmd_report(&cfg.run.out, &cfg.analysis)? {
                println!("{}\n{}", path.display(), table.to_text());
            }
        }
    }
    Ok(true)
}
