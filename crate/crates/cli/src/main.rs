use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use renal_core::artifact::{load_model, save_model, ModelKind};
use renal_core::config::{DataSource, ExperimentConfig};
use renal_core::data::{write_csv, ColumnMap};
use renal_core::evaluate::{metrics_csv, render_report, roc_csv, DEFAULT_THRESHOLD};
use renal_core::experiment::{
    evaluate_artifacts, forest_importance, load_csv, load_dataset, run_experiment, train_models,
    Stage, StageError,
};
use renal_core::forest::importance_csv;
use renal_core::synthetic::SyntheticSpec;
use renal_core::Exec;

#[derive(Parser)]
#[command(name = "renal", version, about = "Kidney transplant/discard prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, fit all four models, evaluate on the held-out rows and write every report.
    Experiment(RunArgs),
    /// Fit all four models on the whole dataset and save them under OUT/models.
    Train(RunArgs),
    /// Score a labeled dataset with saved models.
    Evaluate(EvaluateArgs),
    /// Write a synthetic cohort as CSV.
    Generate(GenerateArgs),
    /// Rank features by random forest out-of-bag permutation importance.
    Importance(ImportanceArgs),
    /// Serve saved models over HTTP.
    Serve(ServeArgs),
}

/// Config file plus command-line overrides.
#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV input; without it a synthetic cohort is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Split each class separately.
    #[arg(long)]
    stratify: bool,
    /// Clamp MAD-flagged training values instead of only reporting them.
    #[arg(long)]
    winsorize: bool,
    /// Run every loop on one thread (same results, slower).
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                ExperimentConfig::parse(&text).map_err(|source| StageError {
                    stage: Stage::Config,
                    source,
                })?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(path) = &self.data {
            cfg.data = DataSource::Csv(path.clone());
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(f) = self.train_fraction {
            cfg.train_fraction = f;
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        cfg.stratify |= self.stratify;
        cfg.winsorize |= self.winsorize;
        if self.sequential {
            cfg.exec = Exec::Sequential;
        }
        cfg.validate().map_err(|source| StageError {
            stage: Stage::Config,
            source,
        })?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding <kind>.model files.
    #[arg(long)]
    models: PathBuf,
    /// Labeled CSV to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Also write report.txt, metrics.csv and ROC CSVs here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = renal_core::config::DEFAULT_SEED)]
    seed: u64,
    /// Config whose synthetic.* keys define the cohort.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise_columns: Option<usize>,
}

#[derive(Args)]
struct ImportanceArgs {
    /// Read the ranking stored in a saved forest instead of fitting one.
    #[arg(long, conflicts_with_all = ["data", "config", "seed"])]
    models: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

fn experiment(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let report = run_experiment(&cfg)?;
    print!("{}", render_report(&report.rows()));
    println!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load_dataset(&cfg).map_err(|source| StageError {
        stage: Stage::Data,
        source,
    })?;
    let artifacts = train_models(&ds, &cfg)?;
    let dir = cfg.out_dir.join("models");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for a in &artifacts {
        let path = dir.join(a.kind.file_name());
        save_model(a, &path).map_err(|source| StageError {
            stage: Stage::Output,
            source,
        })?;
        println!("{:<30} {}", a.kind.display_name(), path.display());
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut artifacts = Vec::new();
    for kind in ModelKind::ALL {
        let path = args.models.join(kind.file_name());
        if path.exists() {
            artifacts.push(load_model(&path).with_context(|| format!("loading {}", path.display()))?);
        }
    }
    anyhow::ensure!(!artifacts.is_empty(), "no model files in {}", args.models.display());
    let ds = load_csv(&args.data).map_err(|source| StageError {
        stage: Stage::Data,
        source,
    })?;
    let evaluations = evaluate_artifacts(&artifacts, &ds, args.threshold, Exec::default())
        .map_err(|source| StageError {
            stage: Stage::Evaluate,
            source,
        })?;
    let rows: Vec<_> = evaluations.iter().map(|(_, r, _)| r.clone()).collect();
    let table = render_report(&rows);
    print!("{table}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write(&out.join("report.txt"), &table)?;
        write(&out.join("metrics.csv"), &metrics_csv(&rows))?;
        for (kind, _, curve) in &evaluations {
            if let Some(curve) = curve {
                write(
                    &out.join(format!("roc_{}.csv", kind.slug())),
                    &roc_csv(kind.display_name(), curve),
                )?;
            }
        }
    }
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            match ExperimentConfig::parse(&text)?.data {
                DataSource::Synthetic(spec) => spec,
                DataSource::Csv(_) => anyhow::bail!("config names a data file, not a synthetic cohort"),
            }
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(k) = args.noise_columns {
        spec.noise_columns = k;
    }
    let ds = renal_core::synthetic::generate_synthetic(&spec, args.seed)?;
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(&ds, file, &ColumnMap::identity())?;
    println!(
        "{} rows ({} transplanted) written to {}",
        ds.len(),
        ds.positive_count(),
        args.out.display()
    );
    Ok(())
}

fn importance(args: &ImportanceArgs) -> Result<()> {
    let ranking = match &args.models {
        Some(dir) => {
            let path = dir.join(ModelKind::Rf.file_name());
            load_model(&path)
                .with_context(|| format!("loading {}", path.display()))?
                .importance
                .context("forest artifact carries no importance ranking")?
        }
        None => {
            let run = RunArgs {
                config: args.config.clone(),
                seed: args.seed,
                data: args.data.clone(),
                out: None,
                train_fraction: None,
                threshold: None,
                stratify: false,
                winsorize: false,
                sequential: false,
            };
            let cfg = run.resolve()?;
            let ds = load_dataset(&cfg).map_err(|source| StageError {
                stage: Stage::Data,
                source,
            })?;
            forest_importance(&ds, &cfg)?
        }
    };
    let csv = importance_csv(&ranking);
    match &args.out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(renal_serve::run(addr, args.models.clone(), args.threshold))?;
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Experiment(a) => experiment(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Generate(a) => generate(a),
        Command::Importance(a) => importance(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<StageError>().map_or(1, |e| e.stage.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
