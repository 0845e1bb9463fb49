use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use joinscope::benchmark::generate_benchmark;
use joinscope::pipeline::{cmd_evaluate, cmd_fabricate, cmd_predict, cmd_train, RunConfig};
use joinscope::SignalType;

const SEED_ENV: &str = "JOINSCOPE_SEED";

#[derive(Parser)]
#[command(name = "joinscope", version, about = "Discover joinable column pairs in a directory of CSV tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive joinable table pairs and labelled examples from the repository.
    Fabricate(Common),
    /// Fabricate training data, select k and train the model.
    Train(Common),
    /// Score every cross-table column pair with a trained model.
    Predict(Common),
    /// Compare the model and the baselines against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate only this single-signal baseline.
        #[arg(long)]
        signal: Option<SignalType>,
    },
    /// Write the bundled synthetic benchmark (tables/ and truth.csv).
    GenerateBenchmark {
        #[arg(long, default_value = "benchmark")]
        out: PathBuf,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file; flags override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Directory of CSV tables.
    #[arg(long)]
    repository: Option<PathBuf>,
    /// Ground-truth CSV (table_a,column_a,table_b,column_b[,kind]).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Word vectors in text format (`count dim` header line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    profile_cache: Option<PathBuf>,
    #[arg(long)]
    similarity_cache: Option<PathBuf>,
    /// Write the similarity graph as JSON lines.
    #[arg(long)]
    graph_dump: Option<PathBuf>,
    /// Field delimiter: a single character or `tab`.
    #[arg(long)]
    delimiter: Option<String>,
    /// Falls back to JOINSCOPE_SEED when neither flag nor config sets it.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// `triplet` or `cross_entropy`.
    #[arg(long)]
    loss_mode: Option<String>,
    /// Comma-separated candidate k values.
    #[arg(long)]
    k_candidates: Option<String>,
    /// Any configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut from_file = Vec::new();
        if let Some(path) = &self.config {
            from_file = cfg
                .apply_file(path)
                .with_context(|| format!("reading config {}", path.display()))?;
        }
        let path_flags = [
            ("repository", &self.repository),
            ("truth", &self.truth),
            ("output_dir", &self.output_dir),
            ("model", &self.model),
            ("predictions", &self.predictions),
            ("report", &self.report),
            ("embeddings", &self.embeddings),
            ("profile_cache", &self.profile_cache),
            ("similarity_cache", &self.similarity_cache),
            ("graph_dump", &self.graph_dump),
        ];
        for (key, value) in path_flags {
            if let Some(p) = value {
                cfg.set(key, &p.display().to_string())?;
            }
        }
        let other_flags = [
            ("delimiter", self.delimiter.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("threads", self.threads.map(|t| t.to_string())),
            ("epochs", self.epochs.map(|e| e.to_string())),
            ("loss_mode", self.loss_mode.clone()),
            ("k_candidates", self.k_candidates.clone()),
        ];
        for (key, value) in other_flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        let mut seed_set = self.seed.is_some() || from_file.iter().any(|k| k == "seed");
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k, v)?;
            seed_set |= k.trim() == "seed";
        }
        if !seed_set {
            if let Ok(v) = std::env::var(SEED_ENV) {
                cfg.set("seed", &v).with_context(|| format!("invalid {SEED_ENV}"))?;
            }
        }
        Ok(cfg)
    }
}

fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fabricate(common) => {
            let cfg = common.resolve()?;
            init_threads(cfg.threads)?;
            let s = cmd_fabricate(&cfg)?;
            println!(
                "fabricated {} tables: {} positive, {} negative examples in {}",
                s.tables,
                s.positives,
                s.negatives,
                cfg.output_dir.display()
            );
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            init_threads(cfg.threads)?;
            let s = cmd_train(&cfg)?;
            let last = s.history.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
            println!(
                "trained with k = {} ({} epochs, final training loss {last:.6}); model written to {}",
                s.k,
                s.history.len(),
                cfg.model_path().display()
            );
        }
        Command::Predict(common) => {
            let cfg = common.resolve()?;
            init_threads(cfg.threads)?;
            let preds = cmd_predict(&cfg)?;
            println!("scored {} column pairs into {}", preds.len(), cfg.predictions_path().display());
        }
        Command::Evaluate { common, signal } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = signal {
                cfg.signal = Some(s);
            }
            init_threads(cfg.threads)?;
            let report = cmd_evaluate(&cfg)?;
            if let Some(r) = &report.rgcn {
                println!("{:<20} best F1 {:.4}  PR-AUC {:.4}", r.name, r.best_f1, r.pr_auc);
            }
            for s in report.signals.iter().chain(&report.mlp) {
                println!("{:<20} best F1 {:.4}  PR-AUC {:.4}", s.name, s.best_f1, s.pr_auc);
            }
            println!("report written to {}", cfg.report_path().display());
        }
        Command::GenerateBenchmark { out, seed } => {
            let b = generate_benchmark(seed)?;
            b.write(&out)?;
            println!(
                "wrote {} tables and {} true joins to {}",
                b.repository.tables.len(),
                b.truth.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
