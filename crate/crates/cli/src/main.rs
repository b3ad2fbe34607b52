use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odesynth_cli::config::Settings;
use odesynth_cli::{evaluate, generate, make_data, train, CliError};

#[derive(Parser)]
#[command(name = "odesynth", version, about = "Synthetic ECG generation with neural ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (sine or dynamical ECG windows).
    MakeData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seq_length: Option<usize>,
    },
    /// Train a generator, or a generator/discriminator pair.
    Train {
        #[command(flatten)]
        common: Common,
        /// ode-rnn, ode-gan, ode-gan2-convnode, ode-gan2-cde or baseline-gan.
        #[arg(long)]
        model: Option<String>,
        /// sine, dyn-ecg, a CSV recording or a make-data directory.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        seq_length: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Sample signals from a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// Directory of real windows; the first is drawn in the overlay.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compare generated windows against real ones.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        generated: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// File of `key = value` lines, applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any setting as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn settings(&self, flags: Vec<(&str, Option<String>)>) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            s.set(k, v.trim());
        }
        let common = [
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (k, v) in common.into_iter().chain(flags) {
            if let Some(v) = v {
                s.set(k, v);
            }
        }
        Ok(s)
    }
}

fn show<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::MakeData { common, kind, count, seq_length } => {
            let s = common.settings(vec![
                ("kind", kind),
                ("count", show(&count)),
                ("seq_length", show(&seq_length)),
            ])?;
            make_data(&s)?;
        }
        Command::Train {
            common,
            model,
            data,
            seq_length,
            batch_size,
            hidden_dim,
            lr,
            epochs,
            iterations,
        } => {
            let s = common.settings(vec![
                ("model", model),
                ("data", data),
                ("seq_length", show(&seq_length)),
                ("batch_size", show(&batch_size)),
                ("hidden_dim", show(&hidden_dim)),
                ("lr", show(&lr)),
                ("epochs", show(&epochs)),
                ("iterations", show(&iterations)),
            ])?;
            let outcome = train(&s)?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Generate { common, checkpoint, count, reference } => {
            let s = common.settings(vec![
                ("checkpoint", checkpoint.map(|p| p.display().to_string())),
                ("count", show(&count)),
                ("reference", reference.map(|p| p.display().to_string())),
            ])?;
            generate(&s)?;
        }
        Command::Evaluate { common, real, generated } => {
            let s = common.settings(vec![
                ("real", real.map(|p| p.display().to_string())),
                ("generated", generated.map(|p| p.display().to_string())),
            ])?;
            let report = evaluate(&s)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ODESYNTH_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
