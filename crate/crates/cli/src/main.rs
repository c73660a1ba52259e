use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use dil_core::error::{Error, Result};
use dil_core::experiment::pipeline::{load_data, prepare, CONFIG_FILE, DATA_FILE};
use dil_core::experiment::report::{export_metrics, read_report, report_json};
use dil_core::experiment::{evaluate_run, run_pipeline, write_synthetic, DataSource, ExperimentConfig};
use dil_core::graph::write_interactions;
use dil_core::train::Strategy;

#[derive(Parser)]
#[command(name = "dil", version, about = "Incremental retraining experiments for graph recommenders")]
struct Cli {
    /// Experiment config (`key = value` lines). Without one, a default
    /// synthetic experiment is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed and the synthetic-data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location; its meaning depends on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic drift data as an interaction TSV (`--out` is the file).
    Synth,
    /// Load, filter and split the configured data and print window sizes.
    /// With `--out`, also writes the filtered interactions there.
    Ingest,
    /// Run warm-up, retraining and evaluation into the `--out` directory.
    Run {
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Re-evaluate a finished run directory from its checkpoints.
    Eval {
        run_dir: PathBuf,
    },
    /// Write `report.json` and `metrics.tsv` for a report into `--out`.
    Export {
        report: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::parse("data = synthetic\n")?,
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        config = config.with_out(out);
    }
    Ok(config)
}

fn synth(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let DataSource::Synthetic(spec) = &config.data else {
        return Err(Error::Config("data: `synth` needs `data = synthetic`".into()));
    };
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from(DATA_FILE));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let records = write_synthetic(spec, &path)?;
    println!("wrote {} interactions to {}", records.len(), path.display());
    Ok(())
}

fn ingest(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let data = prepare(load_data(&config, None)?, &config)?;
    let (users, items) = data.universe();
    println!("interactions\t{}\nusers\t{users}\nitems\t{items}", data.log.len());
    let (wu, wi) = data.split.known_after_warmup();
    println!(
        "warm-up\t{} records\t{wu} users\t{wi} items known",
        data.split.warmup_records(&data.log).len()
    );
    for p in 0..data.split.period_count() {
        let (ku, ki) = data.split.known_after(p);
        println!(
            "period {p}\t{} records\t{ku} users\t{ki} items known",
            data.split.period_records(&data.log, p).len()
        );
    }
    if data.split.dropped > 0 {
        println!("dropped\t{} records after the last period", data.split.dropped);
    }
    if let Some(out) = &cli.out {
        write_interactions(out, &data.log.to_records())?;
    }
    Ok(())
}

fn run(cli: &Cli, strategy: Option<Strategy>) -> Result<()> {
    let mut config = load_config(cli)?;
    if let Some(s) = strategy {
        config = config.with_strategy(s);
    }
    let run = run_pipeline(&config)?;
    for p in &run.report.periods {
        println!("period {}\trecall {:.6}\tndcg {:.6}", p.index, p.recall, p.ndcg);
    }
    let a = &run.report.aggregate;
    println!("aggregate\trecall {:.6}\tndcg {:.6}", a.recall, a.ndcg);
    println!("results in {}", config.out.display());
    Ok(())
}

fn eval(run_dir: &Path) -> Result<()> {
    if !run_dir.join(CONFIG_FILE).is_file() {
        return Err(Error::Config(format!("{} is not a run directory", run_dir.display())));
    }
    print!("{}", report_json(&evaluate_run(run_dir)?));
    Ok(())
}

fn export(cli: &Cli, report: &Path) -> Result<()> {
    let report = read_report(report)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    export_metrics(&report, &out)?;
    println!("wrote report.json and metrics.tsv to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match &cli.command {
        Command::Synth => synth(&cli),
        Command::Ingest => ingest(&cli),
        Command::Run { strategy } => run(&cli, *strategy),
        Command::Eval { run_dir } => eval(run_dir),
        Command::Export { report } => export(&cli, report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
