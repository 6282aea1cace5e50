use std::fs;
use std::path::{Path, PathBuf};

use simuser_core::evolve::{
    init_state, list_checkpoints, load_checkpoint, run_evolution, EvolutionConfig, EvolutionState, EvolveError,
};
use simuser_core::genome::{initial_genome, GeneratorGenome};

use super::pipeline::Pipeline;
use crate::config::{Backend, RunConfig};
use crate::error::{Classify, CliError, CliResult, ExitKind};
use crate::manifest::{write_file, RunManifest};

pub const HISTORY_HEADER: &str = r#"{"format":"simuser-history","format_version":1}"#;
pub const VALIDATION_HEADER: &str = r#"{"format":"simuser-validation","format_version":1}"#;

pub struct EvolveArgs {
    pub config: PathBuf,
    /// `Some(None)` resumes from the latest checkpoint in the output dir.
    pub resume: Option<Option<PathBuf>>,
    pub out: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub mock: bool,
}

pub fn evolve_error(e: EvolveError) -> CliError {
    let kind = match &e {
        EvolveError::Config(_) | EvolveError::Minibatch { .. } => ExitKind::Config,
        EvolveError::Dependency { .. } => ExitKind::Dependency,
        EvolveError::SeedFailed(f) if f.is_fatal() => ExitKind::Dependency,
        EvolveError::SeedFailed(_) => ExitKind::Other,
        EvolveError::Checkpoint { .. } => ExitKind::Io,
    };
    CliError::new(kind, e)
}

pub fn out_dir(arg: Option<&Path>, config: &RunConfig) -> PathBuf {
    arg.map(Path::to_path_buf).or_else(|| config.paths.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn seed_genome(config: &RunConfig, manifest: &mut RunManifest) -> CliResult<GeneratorGenome> {
    match &config.paths.seed_genome {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::new(ExitKind::Io, anyhow::anyhow!("cannot read {}: {e}", p.display())))?;
            manifest.input(p)?;
            GeneratorGenome::parse(&text).or_kind(ExitKind::Config)
        }
        None => Ok(initial_genome()),
    }
}

fn jsonl<T: serde::Serialize>(header: &str, rows: &[T]) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row serializes"));
        s.push('\n');
    }
    s
}

/// Rewrites the run's derived files from the state.
fn write_outputs(dir: &Path, state: &EvolutionState) -> CliResult<()> {
    write_file(&dir.join("history.jsonl"), jsonl(HISTORY_HEADER, &state.history).as_bytes())?;
    write_file(&dir.join("validation.jsonl"), jsonl(VALIDATION_HEADER, &state.validation).as_bytes())?;
    write_file(&dir.join("best_genome.txt"), state.best.genome.serialize().as_bytes())
}

pub fn run(args: &EvolveArgs) -> CliResult<()> {
    let mut config = RunConfig::load(&args.config)?;
    if args.mock {
        config.backend = Backend::Mock;
    }
    if let Some(n) = args.iterations {
        config.evolve.iterations = n;
        config.validate()?;
    }
    let dir = out_dir(args.out.as_deref(), &config);
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)
        .map_err(|e| CliError::new(ExitKind::Io, anyhow::anyhow!("cannot create {}: {e}", ckpt_dir.display())))?;

    let mut manifest = RunManifest::new("evolve");
    manifest.config(&args.config)?;
    manifest.seed("evolve", config.evolve.seed);
    manifest.detail("backend", config.backend);
    let pipeline = Pipeline::load(&config, &mut manifest)?;
    let ctx = pipeline.context(&config);

    let existing = if ckpt_dir.is_dir() { list_checkpoints(&ckpt_dir).map_err(evolve_error)? } else { Vec::new() };
    let state = match &args.resume {
        None => {
            if !existing.is_empty() {
                return Err(CliError::config(format!(
                    "{} already holds checkpoints; pass --resume or choose another --out",
                    ckpt_dir.display()
                )));
            }
            let seed = seed_genome(&config, &mut manifest)?;
            let _ = fs::remove_file(dir.join("calls.jsonl"));
            init_state(&config.evolve, &pipeline.pools, &seed, &ctx).map_err(evolve_error)?
        }
        Some(from) => {
            let path = match from {
                Some(p) => p.clone(),
                None => existing.last().cloned().ok_or_else(|| {
                    CliError::new(ExitKind::Io, anyhow::anyhow!("no checkpoints under {}", ckpt_dir.display()))
                })?,
            };
            let mut state = load_checkpoint(&path).map_err(evolve_error)?;
            if !state.config.compatible_with(&config.evolve) {
                return Err(CliError::config(format!(
                    "checkpoint {} was written with a different [evolve] config",
                    path.display()
                )));
            }
            let extended = EvolutionConfig { iterations: config.evolve.iterations, ..state.config.clone() };
            if extended.epoch_len() != state.config.epoch_len() {
                return Err(CliError::config(format!(
                    "changing iterations from {} to {} moves the curriculum epoch from {} to {}; \
                     set [evolve] epoch_length to extend this run",
                    state.config.iterations,
                    extended.iterations,
                    state.config.epoch_len(),
                    extended.epoch_len()
                )));
            }
            state.config = extended;
            manifest.detail("resumed_from", path.display().to_string());
            println!("resuming from {} at iteration {}", path.display(), state.next_iteration);
            state
        }
    };
    println!("seed genome {} scored {:.4}", state.seed_genome_id, state.seed_score);

    let mut progress = |s: &EvolutionState| {
        if let Some(h) = s.history.last() {
            let score = h.score.map(|v| format!("{v:.4}")).unwrap_or_else(|| "failed".into());
            println!(
                "iter {:>4} island {} N={:<2} score {score:<8} best {:.4}{}",
                h.iteration,
                h.island,
                h.n_personas,
                h.best_score,
                if h.inserted { "  +archive" } else { "" }
            );
        }
        if let Err(e) = write_outputs(&dir, s) {
            eprintln!("warning: {e}");
        }
    };
    let result = run_evolution(state, &pipeline.pools, &ctx, Some(&ckpt_dir), &mut progress);
    pipeline.append_calls(&dir.join("calls.jsonl"))?;
    let state = result.map_err(evolve_error)?;
    write_outputs(&dir, &state)?;

    for name in ["history.jsonl", "validation.jsonl", "best_genome.txt"] {
        manifest.output(&dir.join(name))?;
    }
    manifest.volatile_output(&dir.join("calls.jsonl"));
    manifest.output(&ckpt_dir)?;
    manifest.detail("iterations", state.next_iteration);
    manifest.detail("best_genome_id", &state.best.genome_id);
    manifest.detail("best_score", state.best.score);
    manifest.write(&dir.join("manifest.json"))?;
    println!("best genome {} score {:.4}; outputs in {}", state.best.genome_id, state.best.score, dir.display());
    Ok(())
}
