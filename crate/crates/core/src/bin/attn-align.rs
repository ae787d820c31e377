use std::path::PathBuf;
use std::process::ExitCode;

use attn_align::cli::{cmd_eval, cmd_grid, cmd_saliency, cmd_synth, cmd_train, parse_config, RunConfig};
use attn_align::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attn-align", version, about = "Attention-aligned CNN training on biased MNIST variants")]
struct Cli {
    /// `key = value` run configuration; unset keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `grid`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the dataset and write previews and statistics.
    Synth,
    /// Train, writing metrics, checkpoint and summary.
    Train,
    /// Grid search over lambda0 and e_attn.
    Grid,
    /// Test accuracy of `checkpoint`.
    Eval,
    /// Input / baseline CAM / aligned CAM triptychs.
    Saliency,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Grid => cmd_grid(&cfg, cli.jobs.max(1)).map(drop),
        Command::Eval => cmd_eval(&cfg).map(drop),
        Command::Saliency => cmd_saliency(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; --help and --version succeed.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
