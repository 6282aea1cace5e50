//! `simuser`: fingerprint transcripts, train the human-likeness
//! discriminator, score simulators, evolve persona generators, pick a
//! checkpoint and export plot data.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or flag error,
//! 3 input/output error, 4 model backend or other dependency failure.

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{demo, evolve, fingerprint, plot, score, select, train};
use config::RunConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "simuser", version, about = "Persona-policy evolution for LLM user simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract behavioral fingerprints from transcripts into a table.
    Fingerprint {
        #[arg(long, required = true, num_args = 1..)]
        transcripts: Vec<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the human-vs-simulator discriminator.
    TrainDisc(TrainCmd),
    /// Report HL, Coverage, Score, Dice and USI per group of transcripts.
    Score(ScoreCmd),
    /// Run the island search, or resume it from a checkpoint.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Resume from the given checkpoint, or the latest one if no path.
        #[arg(long, num_args = 0..=1)]
        resume: Option<Option<PathBuf>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Serve every model role from the offline mock.
        #[arg(long)]
        mock: bool,
    },
    /// Pick the checkpoint whose best genome validates highest.
    Select {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        persona_counts: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mock: bool,
    },
    /// Export score curves or a PCA scatter as data tables.
    Plot {
        /// History file written by `evolve`.
        #[arg(long, conflicts_with = "pca", required_unless_present = "pca")]
        history: Option<PathBuf>,
        /// Project fingerprints of `--transcripts` onto two components.
        #[arg(long, requires = "transcripts")]
        pca: bool,
        #[arg(long, num_args = 1..)]
        transcripts: Vec<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic offline dataset and a mock-backend config.
    DemoData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        human: usize,
        #[arg(long, default_value_t = 200)]
        base: usize,
        #[arg(long, default_value_t = 12)]
        tasks: usize,
        #[arg(long, default_value_t = 4)]
        validation_tasks: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    human: PathBuf,
    #[arg(long)]
    sim: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    test_human: Option<PathBuf>,
    #[arg(long)]
    test_sim: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    simulator_model: Option<String>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long, required = true, num_args = 1..)]
    transcripts: Vec<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    /// Human transcripts defining the reference cloud.
    #[arg(long)]
    reference: PathBuf,
    /// source, task, persona or meta:<key>.
    #[arg(long, default_value = "source")]
    group_by: score::GroupBy,
    #[arg(long)]
    allow_tag_mismatch: bool,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn optional_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fingerprint { transcripts, lexicon, config, out } => {
            let cfg = optional_config(config.as_deref())?;
            fingerprint::run(&fingerprint::FingerprintArgs { transcripts, lexicon, out }, &cfg, config.as_deref())
        }
        Command::TrainDisc(t) => {
            let cfg = optional_config(t.config.as_deref())?;
            let args = train::TrainArgs {
                human: t.human,
                sim: t.sim,
                out: t.out,
                test_human: t.test_human,
                test_sim: t.test_sim,
                seed: t.seed,
                trees: t.trees,
                domain: t.domain,
                simulator_model: t.simulator_model,
                lexicon: t.lexicon,
            };
            train::run(&args, &cfg, t.config.as_deref())
        }
        Command::Score(s) => {
            let cfg = optional_config(s.config.as_deref())?;
            let args = score::ScoreArgs {
                transcripts: s.transcripts,
                model: s.model,
                reference: s.reference,
                group_by: s.group_by,
                allow_tag_mismatch: s.allow_tag_mismatch,
                lexicon: s.lexicon,
                out: s.out,
            };
            score::run(&args, &cfg, s.config.as_deref())
        }
        Command::Evolve { config, resume, out, iterations, mock } => {
            evolve::run(&evolve::EvolveArgs { config, resume, out, iterations, mock })
        }
        Command::Select { config, checkpoints, persona_counts, out, mock } => {
            select::run(&select::SelectArgs { config, checkpoints, persona_counts, out, mock })
        }
        Command::Plot { history, pca, transcripts, lexicon, config, out } => {
            let cfg = optional_config(config.as_deref())?;
            let input = match history {
                Some(h) if !pca => plot::PlotInput::History(h),
                _ => plot::PlotInput::Pca { transcripts, lexicon },
            };
            plot::run(&input, &out, &cfg, config.as_deref())
        }
        Command::DemoData { out, human, base, tasks, validation_tasks, seed } => {
            demo::run(&demo::DemoArgs { out, human, base, tasks, validation_tasks, seed })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
