use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gml_core::eval::{evaluate, Method};
use gml_core::gossip::overhead_ratio;
use log::{error, info};

use gml_sim::artifacts::{load_datasets, load_models, save_datasets, save_run, Layout};
use gml_sim::experiment::{generate_datasets, metadata, train_method};
use gml_sim::report::{read_report, render_text, to_json, write_report, ReportDocument};
use gml_sim::{ExperimentConfig, Rayon};

/// Gossip mutual learning simulator.
///
/// Every command reads one experiment config (TOML; built-in defaults when
/// --config is absent) and works inside one output root.
#[derive(Debug, Parser)]
#[command(name = "gml", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides the config's `output_dir`.
    #[arg(long, global = true, env = "GML_OUTPUT_ROOT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only print errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate and save every site's dataset.
    GenerateData,
    /// Train one or more methods on the saved datasets.
    Train {
        /// Methods to train; defaults to the config's method list.
        #[arg(long, short, value_enum, value_delimiter = ',')]
        method: Vec<MethodArg>,
    },
    /// Evaluate the trained models and write the report.
    Evaluate,
    /// Print the last written report.
    Report {
        /// Print the JSON document instead of the tables.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Gml,
    Fedavg,
    Pooled,
    Individual,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gml => Method::Gml,
            MethodArg::Fedavg => Method::FedAvg,
            MethodArg::Pooled => Method::Pooled,
            MethodArg::Individual => Method::Individual,
        }
    }
}

struct Session {
    cfg: ExperimentConfig,
    layout: Layout,
    pool: Rayon,
}

fn setup(common: &Common) -> anyhow::Result<Session> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let pool = Rayon::new(common.threads).context("cannot start worker pool")?;
    info!("{} worker threads, output root {}", pool.threads(), cfg.output_dir.display());
    Ok(Session {
        layout: Layout::new(cfg.output_dir.clone()),
        cfg,
        pool,
    })
}

fn generate(ctx: &Session) -> anyhow::Result<()> {
    // Everything is generated and validated before the first file is written.
    let datasets = generate_datasets(&ctx.cfg, &ctx.pool)?;
    save_datasets(&ctx.layout, &datasets)?;
    for ds in &datasets {
        info!(
            "site {}: {} cases (train {}, validation {}, test {}) -> {}",
            ds.site_id,
            ds.n_cases(),
            ds.train.len(),
            ds.validation.len(),
            ds.test.len(),
            ctx.layout.data_dir(ds.site_id).display()
        );
    }
    Ok(())
}

fn train(ctx: &Session, methods: &[Method]) -> anyhow::Result<()> {
    let datasets = load_datasets(&ctx.layout, &ctx.cfg)?;
    let mut failed = Vec::new();
    for &method in methods {
        info!("training {method}");
        let outcome = train_method(&ctx.cfg, &datasets, method, &ctx.pool)
            .map_err(anyhow::Error::from)
            .and_then(|run| Ok(save_run(&ctx.layout, &run)?));
        match outcome {
            Ok(()) => info!("{method} -> {}", ctx.layout.method_dir(method).display()),
            Err(e) => {
                error!("{method}: {e:#}");
                failed.push(method.to_string());
            }
        }
    }
    if !failed.is_empty() {
        bail!("training failed for: {}", failed.join(", "));
    }
    Ok(())
}

fn run_evaluate(ctx: &Session) -> anyhow::Result<()> {
    let datasets = load_datasets(&ctx.layout, &ctx.cfg)?;
    let sites: Vec<u32> = datasets.iter().map(|d| d.site_id).collect();
    let loaded = load_models(&ctx.layout, &ctx.cfg.methods, &sites)?;
    let report = evaluate(&loaded.models, &datasets, &ctx.cfg.methods, metadata(&ctx.cfg))?;
    let overhead = match (loaded.ledgers.get(&Method::Gml), loaded.ledgers.get(&Method::FedAvg)) {
        (Some(g), Some(f)) => Some(overhead_ratio(g, f)?),
        _ => None,
    };
    let doc = ReportDocument {
        report,
        overhead_ratio: overhead,
    };
    let dir = ctx.layout.report_dir();
    write_report(&doc, &dir)?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, ctx.cfg.to_toml()).with_context(|| format!("cannot write {}", cfg_path.display()))?;
    print!("{}", render_text(&doc));
    Ok(())
}

fn show_report(ctx: &Session, json: bool) -> anyhow::Result<()> {
    let path = ctx.layout.report_dir().join("report.json");
    if !path.is_file() {
        bail!("missing artifacts:\n  report: {} (run evaluate first)", path.display());
    }
    let doc = read_report(&path)?;
    print!("{}", if json { to_json(&doc) } else { render_text(&doc) });
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = setup(&cli.common)?;
    match cli.command {
        Command::GenerateData => generate(&ctx),
        Command::Train { method } => {
            let methods: Vec<Method> = if method.is_empty() {
                ctx.cfg.methods.clone()
            } else {
                method.into_iter().map(Method::from).collect()
            };
            train(&ctx, &methods)
        }
        Command::Evaluate => run_evaluate(&ctx),
        Command::Report { json } => show_report(&ctx, json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.common.quiet, cli.common.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
