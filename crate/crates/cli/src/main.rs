use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csrec_core::harness::verify::Suite;
use csrec_core::harness::{
    cmd_eval, cmd_gen_data, cmd_ter, cmd_train, cmd_verify, load_config, run_pipeline, EvalMode, ExperimentConfig,
    HarnessError, ItemSet, TrainMode,
};

/// Causal sequential recommendation lab.
#[derive(Parser)]
#[command(name = "csrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate catalog, users and both interaction regimes.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the observational model (obs) or the constrained model (csrec).
    Train {
        #[arg(long)]
        mode: TrainMode,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Observational checkpoint, required for --mode csrec.
        #[arg(long)]
        ftilde: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out users.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mode: EvalMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        alpha: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        beta: Option<usize>,
        /// Report CSV; a markdown copy is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-item treatment effects for held-out users.
    Ter {
        /// CSRec checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ftilde: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `all` or a comma-separated list of item ids.
        #[arg(long, default_value = "all")]
        items: ItemSet,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run oracle property suites.
    Verify {
        /// Suite name or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full pipeline: data, both models, reports, treatment effects.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Errors exit with 1, failed verification checks with 2.
enum Failure {
    Error(String),
    Verification,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Error(e.to_string())
    }
}

fn config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config: c, out } => {
            let m = cmd_gen_data(&config(c.as_deref())?, &out)?;
            println!("dataset {} written to {}", m.dataset_hash, out.display());
        }
        Command::Train { mode, data, config: c, ftilde, out } => {
            let r = cmd_train(mode, &data, &config(c.as_deref())?, ftilde.as_deref(), &out)?;
            println!(
                "loss {:.6} -> {:.6} over {} epochs; checkpoint {} ({})",
                r.report.initial.loss,
                r.report.final_loss(),
                r.report.epochs.len(),
                out.display(),
                r.checkpoint_hash
            );
        }
        Command::Eval { data, ckpt, mode, config: c, alpha, k, beta, out } => {
            let mut cfg = config(c.as_deref())?;
            if let Some(a) = alpha {
                cfg.eval.alpha = a;
            }
            if let Some(k) = k {
                cfg.eval.k = k;
            }
            if let Some(b) = beta {
                cfg.eval.beta = b;
            }
            cfg.validate()?;
            let report = cmd_eval(&data, &ckpt, mode, &cfg.eval, &out)?;
            print!("{}", report.to_markdown());
        }
        Command::Ter { ckpt, ftilde, data, items, out } => {
            let rows = cmd_ter(&ckpt, &ftilde, &data, &items, &out)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Verify { suite, seed } => {
            let suites = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse::<Suite>().map_err(Failure::Error)?]
            };
            let reports = cmd_verify(&suites, seed)?;
            let mut ok = true;
            for r in &reports {
                print!("{}", r.to_text());
                ok &= r.passed();
            }
            if !ok {
                return Err(Failure::Verification);
            }
        }
        Command::Run { config: c, out } => {
            let o = run_pipeline(&config(c.as_deref())?, &out)?;
            for (name, report) in &o.reports {
                println!("## {name}\n\n{}", report.to_markdown());
            }
            println!("manifest: {}", out.join("manifest.json").display());
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("CSREC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| format!("CSREC_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
    }
}
