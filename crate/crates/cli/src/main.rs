use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// Error in the invocation or configuration (exit code 2), as opposed to a
/// failure while running (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "cooccur",
    version,
    about = "Discover co-occurring objects across caption-grouped images"
)]
struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for the scenario, training and evaluation streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the concept-group index from a caption corpus.
    BuildIndex(BuildIndexArgs),
    /// Write a synthetic scenario (corpus, lexicon, features, text, truth).
    GenSynthetic,
    /// Train on the configured scenario; writes metrics and a checkpoint.
    Train {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare discovery strategies; writes JSON and CSV reports.
    Eval(EvalArgs),
    /// Train one run per value of a single axis and compare cover rates.
    Ablate {
        /// `text_guidance` or `group_size`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values along the axis.
        #[arg(long)]
        values: Option<String>,
    },
    /// Finite-difference check of the analytic gradients.
    GradCheck {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
    },
}

#[derive(Args)]
struct BuildIndexArgs {
    /// TSV corpus: image_id<TAB>caption.
    #[arg(long)]
    corpus: PathBuf,
    /// One concept term per line.
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    min_freq: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; the untrained state when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `index` or `box`.
    #[arg(long)]
    mode: Option<String>,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = commands::read_input(path)?;
        cfg.apply_text(&text, path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    let mut flag = |key: &str, value: Option<String>| -> Result<(), UsageError> {
        match value {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        }
    };
    match &cli.command {
        Command::BuildIndex(a) => flag("index.min_freq", a.min_freq.map(|v| v.to_string()))?,
        Command::Train { steps } => flag("train.steps", steps.map(|v| v.to_string()))?,
        Command::Eval(a) => flag("eval.mode", a.mode.clone())?,
        Command::Ablate { axis, values } => {
            flag("ablate.axis", axis.clone())?;
            flag("ablate.values", values.clone())?;
        }
        Command::GradCheck { samples, eps } => {
            flag("gradcheck.samples", samples.map(|v| v.to_string()))?;
            flag("gradcheck.eps", eps.map(|v| v.to_string()))?;
        }
        Command::GenSynthetic => {}
    }
    Ok(cfg.resolve()?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = resolve(&cli)?;
    match &cli.command {
        Command::BuildIndex(a) => commands::build_index(&cfg, &a.corpus, &a.lexicon, &cli.out),
        Command::GenSynthetic => commands::gen_synthetic(&cfg, &cli.out),
        Command::Train { .. } => commands::train(&cfg, &cli.out),
        Command::Eval(a) => commands::eval(&cfg, a.checkpoint.as_deref(), &cli.out),
        Command::Ablate { .. } => commands::ablate(&cfg, &cli.out),
        Command::GradCheck { .. } => commands::grad_check(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
