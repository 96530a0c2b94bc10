use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ehrtext::config::{CliOverrides, EnvOverrides, FeatureSource, RunConfig};
use ehrtext::core::heads::HeadKind;
use ehrtext::pipeline::{cmd_counts, cmd_embed, cmd_eval, cmd_serialize, Context, StageOutcome};
use ehrtext::report::{read_report, render_summary, write_report};
use ehrtext::synthetic::{generate, write_cohort, SyntheticSpec};
use ehrtext::Result;

/// Serialize EHR event streams to text, embed them and evaluate few-shot heads.
#[derive(Debug, Parser)]
#[command(name = "ehrtext", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Base seed for sampling and generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Features {
    Embeddings,
    Counts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Head {
    Lr,
    Gbm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort with a planted lab-value label.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        prevalence: Option<f64>,
    },
    /// Render one text record per labelled prediction instance.
    Serialize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed serialized records into a vector store.
    Embed {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides provider.url and EHRTEXT_PROVIDER_URL.
        #[arg(long)]
        provider_url: Option<String>,
        /// Overrides provider.cache_dir and EHRTEXT_CACHE_DIR.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Build count-baseline features.
    Counts {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train heads under the few-shot protocol and write reports.
    Eval {
        /// Embedding store or counts directory.
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<Features>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        head: Option<Head>,
        /// Comma-separated shot counts, e.g. 1,4,16.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Train on the full train and valid splits.
        #[arg(long)]
        full_data: bool,
    },
    /// Print a report summary, optionally re-rendering its CSV files.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        rewrite: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli, provider_url: Option<String>, cache_dir: Option<PathBuf>) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = CliOverrides { seed: cli.seed, jobs: cli.jobs, provider_url, cache_dir };
    base.resolve(&EnvOverrides::from_env(), &overrides)
}

fn report_stage(name: &str, outcome: StageOutcome) {
    match outcome {
        StageOutcome::UpToDate => eprintln!("{name}: up to date, nothing to do"),
        StageOutcome::Ran { outputs, summary } => {
            eprintln!("{name}: {summary}");
            for p in outputs {
                eprintln!("  wrote {}", p.display());
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic { out, patients, prevalence } => {
            let cfg = load_config(&cli, None, None)?;
            let mut spec = SyntheticSpec::default();
            if let Some(n) = patients {
                spec.n_patients = *n;
            }
            if let Some(p) = prevalence {
                spec.prevalence = *p;
            }
            let cohort = generate(&spec, cfg.seed)?;
            let files = write_cohort(&cohort, out)?;
            let positives = cohort.labels.iter().filter(|l| l.label).count();
            eprintln!(
                "gen-synthetic: {} patients, {} events, prevalence {:.3}; wrote {}",
                spec.n_patients,
                cohort.events.len(),
                positives as f64 / cohort.labels.len() as f64,
                files.events.parent().unwrap_or(out).display()
            );
        }
        Command::Serialize { events, labels, out } => {
            let ctx = Context::new(load_config(&cli, None, None)?)?;
            report_stage("serialize", cmd_serialize(&ctx, events, labels, out)?);
        }
        Command::Embed { records, out, provider_url, cache_dir } => {
            let ctx = Context::new(load_config(&cli, provider_url.clone(), cache_dir.clone())?)?;
            report_stage("embed", cmd_embed(&ctx, records, out)?);
        }
        Command::Counts { events, labels, splits, out } => {
            let ctx = Context::new(load_config(&cli, None, None)?)?;
            report_stage("counts", cmd_counts(&ctx, events, labels, splits, out)?);
        }
        Command::Eval { features, kind, labels, splits, out, head, k, seeds, full_data } => {
            let mut cfg = load_config(&cli, None, None)?;
            if let Some(kind) = kind {
                cfg.eval.features = match kind {
                    Features::Embeddings => FeatureSource::Embeddings,
                    Features::Counts => FeatureSource::Counts,
                };
            }
            if let Some(head) = head {
                cfg.eval.head = match head {
                    Head::Lr => HeadKind::Lr,
                    Head::Gbm => HeadKind::Gbm,
                };
            }
            if let Some(k) = k {
                cfg.eval.fewshot.k_grid = k.clone();
            }
            if let Some(s) = seeds {
                cfg.eval.fewshot.n_seeds = *s;
            }
            if *full_data {
                cfg.eval.fewshot.full_data_mode = true;
            }
            cfg.validate()?;
            let ctx = Context::new(cfg)?;
            report_stage("eval", cmd_eval(&ctx, features, labels, splits, out)?);
        }
        Command::Report { report, rewrite } => {
            let r = read_report(report)?;
            print!("{}", render_summary(&r));
            if let Some(dir) = rewrite {
                for p in write_report(dir, &r)? {
                    eprintln!("  wrote {}", p.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
