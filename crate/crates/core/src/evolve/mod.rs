//! The outer search: islands of MAP-Elites archives over
//! (human likeness, coverage), LLM-proposed genome mutations conditioned on
//! reflections, a persona-count curriculum and resumable checkpoints.

pub mod archive;
pub mod evaluate;
pub mod mutation;
pub mod reflection;

pub use archive::{
    behavior_coords, bin_index, migrate, select_parent, select_parent_with, ArchiveCell, InsertOutcome, Island,
    MapElitesArchive,
};
pub use evaluate::{evaluate_candidate, task_context, CandidateFailure, EvalContext, Evaluation, ScoredEpisode};
pub use mutation::{mutation_prompt, propose_mutation, MutationOutcome};
pub use reflection::{build_reflection, request_reflection, Exemplar, ReflectionReport, REFLECTION_TEMPLATE};

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::GeneratorGenome;
use crate::metrics::lambda_schedule;
use crate::rollout::TaskSpec;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "state.json";

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("minibatch of {size} tasks requested from a pool of {pool}")]
    Minibatch { size: usize, pool: usize },
    #[error("seed genome evaluation failed: {0}")]
    SeedFailed(CandidateFailure),
    #[error("iteration {iteration} halted on a dependency error: {source}")]
    Dependency {
        iteration: usize,
        #[source]
        source: CandidateFailure,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub iterations: usize,
    pub islands: usize,
    /// Per-island cap on occupied cells.
    pub population_size: usize,
    pub migration_interval: usize,
    pub migration_rate: f64,
    pub elite_ratio: f64,
    /// Share of occupied cells forming the elite pool.
    pub elite_pool_fraction: f64,
    pub persona_schedule: Vec<usize>,
    /// Iterations per curriculum stage; default splits the budget evenly.
    pub epoch_length: Option<usize>,
    pub minibatch_size: usize,
    /// Window advance per iteration; defaults to the minibatch size.
    pub window_stride: Option<usize>,
    /// Evaluate the best genome on the validation pool every this many
    /// iterations; 0 disables.
    pub validation_interval: usize,
    /// Defaults to the last curriculum stage.
    pub validation_personas: Option<usize>,
    pub reflection_exemplars: usize,
    pub grid_resolution: usize,
    pub mutation_retries: u32,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            iterations: 70,
            islands: 5,
            population_size: 50,
            migration_interval: 5,
            migration_rate: 0.2,
            elite_ratio: 0.2,
            elite_pool_fraction: archive::ELITE_POOL_FRACTION,
            persona_schedule: vec![5, 8, 10],
            epoch_length: None,
            minibatch_size: 5,
            window_stride: None,
            validation_interval: 5,
            validation_personas: None,
            reflection_exemplars: 2,
            grid_resolution: 10,
            mutation_retries: 3,
            seed: 42,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: String| Err(EvolveError::Config(m));
        for (name, v) in [
            ("migration_rate", self.migration_rate),
            ("elite_ratio", self.elite_ratio),
            ("elite_pool_fraction", self.elite_pool_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("islands", self.islands),
            ("population_size", self.population_size),
            ("migration_interval", self.migration_interval),
            ("minibatch_size", self.minibatch_size),
            ("grid_resolution", self.grid_resolution),
            ("reflection_exemplars", self.reflection_exemplars),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.persona_schedule.is_empty() || self.persona_schedule.contains(&0) {
            return bad("persona_schedule needs at least one positive count".into());
        }
        if self.persona_schedule.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("persona_schedule {:?} must be nondecreasing", self.persona_schedule));
        }
        if self.epoch_length == Some(0) || self.window_stride == Some(0) {
            return bad("epoch_length and window_stride must be >= 1 when set".into());
        }
        if let Some(v) = self.validation_personas {
            if v == 0 || v > self.terminal_personas() {
                return bad(format!("validation_personas {v} must lie in 1..={}", self.terminal_personas()));
            }
        }
        Ok(())
    }

    pub fn terminal_personas(&self) -> usize {
        *self.persona_schedule.last().expect("validated schedule")
    }

    pub fn epoch_len(&self) -> usize {
        self.epoch_length
            .unwrap_or_else(|| self.iterations.div_ceil(self.persona_schedule.len()))
            .max(1)
    }

    /// Persona count for a 0-based iteration.
    pub fn persona_count(&self, iteration: usize) -> usize {
        let stage = (iteration / self.epoch_len()).min(self.persona_schedule.len() - 1);
        self.persona_schedule[stage]
    }

    pub fn stride(&self) -> usize {
        self.window_stride.unwrap_or(self.minibatch_size)
    }

    pub fn validation_count(&self) -> usize {
        self.validation_personas.unwrap_or_else(|| self.terminal_personas())
    }

    /// Equality ignoring the iteration budget, which a resume may extend.
    pub fn compatible_with(&self, other: &EvolutionConfig) -> bool {
        EvolutionConfig { iterations: 0, ..self.clone() } == EvolutionConfig { iterations: 0, ..other.clone() }
    }
}

/// The contiguous window of `size` items starting at `cursor`, wrapping
/// at the end of the pool, and the cursor advanced by `stride`.
pub fn sample_minibatch<T: Clone>(
    pool: &[T],
    cursor: usize,
    size: usize,
    stride: usize,
) -> Result<(Vec<T>, usize), EvolveError> {
    let n = pool.len();
    if n == 0 || size == 0 || size > n {
        return Err(EvolveError::Minibatch { size, pool: n });
    }
    let batch = (0..size).map(|k| pool[(cursor + k) % n].clone()).collect();
    Ok((batch, (cursor + stride) % n))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the generator used in `iteration`; derived, never stored.
pub fn iteration_seed(island_seed: u64, iteration: usize) -> u64 {
    splitmix64(island_seed ^ splitmix64(iteration as u64))
}

/// Archive payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub genome_id: String,
    pub genome: GeneratorGenome,
    /// Reflection on this genome's own evaluation; feeds its mutations.
    pub reflection: Option<String>,
    pub hl_mean: f64,
    pub cov_mean: f64,
    /// `None` for the seed genome.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    Scored,
    Failed,
}

/// One line of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub island: usize,
    pub n_personas: usize,
    pub lambda_h: f64,
    pub lambda_b: f64,
    pub tasks: Vec<String>,
    pub parent_id: String,
    pub child_id: String,
    pub generation: u32,
    pub mutation_noop: bool,
    pub mutation_attempts: u32,
    pub status: CandidateStatus,
    pub score: Option<f64>,
    pub hl_mean: Option<f64>,
    pub cov_mean: Option<f64>,
    pub usi: Option<f64>,
    pub coords: Option<(f64, f64)>,
    pub inserted: bool,
    pub island_size: usize,
    /// Best fitness over all islands after this iteration.
    pub best_score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub genome_id: String,
    pub n_personas: usize,
    pub score: Option<f64>,
    pub hl_mean: Option<f64>,
    pub cov_mean: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub genome_id: String,
    pub genome: GeneratorGenome,
    pub score: f64,
    /// `None` for the seed genome.
    pub iteration: Option<usize>,
}

/// Full resumable state. Iteration RNGs are re-derived from island seeds,
/// and the curriculum stage from `next_iteration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub format_version: u32,
    pub config: EvolutionConfig,
    pub next_iteration: usize,
    pub window_cursor: usize,
    pub seed_genome_id: String,
    pub seed_score: f64,
    pub islands: Vec<Island<Elite>>,
    pub history: Vec<HistoryRecord>,
    pub validation: Vec<ValidationRecord>,
    pub best: BestRecord,
}

impl EvolutionState {
    pub fn is_complete(&self) -> bool {
        self.next_iteration >= self.config.iterations
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_FORMAT_VERSION as u64) {
            return Err(format!("unsupported format_version {version:?}, expected {CHECKPOINT_FORMAT_VERSION}"));
        }
        serde_json::from_value(value).map_err(|e| e.to_string())
    }
}

/// The task pools the search draws from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPools {
    pub train: Vec<TaskSpec>,
    pub validation: Vec<TaskSpec>,
}

fn elite_from(
    genome: GeneratorGenome,
    evaluation: &Evaluation,
    tasks: &[TaskSpec],
    ctx: &EvalContext<'_>,
    k: usize,
    iteration: Option<usize>,
) -> Elite {
    let reflection = build_reflection(evaluation, tasks, k).ok().and_then(|mut r| {
        request_reflection(&mut r, ctx.gateway).ok()?;
        r.response
    });
    Elite {
        genome_id: genome.id(),
        genome,
        reflection,
        hl_mean: evaluation.report.hl_mean,
        cov_mean: evaluation.report.cov_mean,
        iteration,
    }
}

/// Evaluates the seed genome on the first window at the first curriculum
/// stage and places it in every island.
pub fn init_state(
    config: &EvolutionConfig,
    pools: &TaskPools,
    seed_genome: &GeneratorGenome,
    ctx: &EvalContext<'_>,
) -> Result<EvolutionState, EvolveError> {
    config.validate()?;
    check_terminal(config, ctx)?;
    let (tasks, _) = sample_minibatch(&pools.train, 0, config.minibatch_size, config.stride())?;
    let n = config.persona_count(0);
    let evaluation = evaluate_candidate(seed_genome, &tasks, n, ctx, "seed").map_err(EvolveError::SeedFailed)?;
    let coords = behavior_coords(&evaluation.report);
    let score = evaluation.report.score;
    let elite = elite_from(seed_genome.clone(), &evaluation, &tasks, ctx, config.reflection_exemplars, None);
    let islands = (0..config.islands)
        .map(|id| {
            let mut archive = MapElitesArchive::new(config.grid_resolution, Some(config.population_size));
            archive.insert(elite.clone(), coords, score);
            Island { id, seed: splitmix64(config.seed.wrapping_add(id as u64)), archive }
        })
        .collect();
    Ok(EvolutionState {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        next_iteration: 0,
        window_cursor: 0,
        seed_genome_id: seed_genome.id(),
        seed_score: score,
        islands,
        history: Vec::new(),
        validation: Vec::new(),
        best: BestRecord { genome_id: seed_genome.id(), genome: seed_genome.clone(), score, iteration: None },
    })
}

fn check_terminal(config: &EvolutionConfig, ctx: &EvalContext<'_>) -> Result<(), EvolveError> {
    if ctx.terminal_personas != config.terminal_personas() {
        return Err(EvolveError::Config(format!(
            "evaluation context terminal persona count {} differs from the schedule's {}",
            ctx.terminal_personas,
            config.terminal_personas()
        )));
    }
    Ok(())
}

/// Runs one iteration and advances `state`. On a dependency error `state`
/// is left untouched.
pub fn step(state: &mut EvolutionState, pools: &TaskPools, ctx: &EvalContext<'_>) -> Result<(), EvolveError> {
    let config = state.config.clone();
    let it = state.next_iteration;
    let island_idx = it % config.islands;
    let n = config.persona_count(it);
    let (lambda_h, lambda_b) =
        lambda_schedule(n, config.terminal_personas()).map_err(|e| EvolveError::Config(e.to_string()))?;
    let (tasks, next_cursor) =
        sample_minibatch(&pools.train, state.window_cursor, config.minibatch_size, config.stride())?;

    let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(state.islands[island_idx].seed, it));
    let parent = select_parent_with(
        &state.islands[island_idx].archive,
        config.elite_ratio,
        config.elite_pool_fraction,
        &mut rng,
    )
    .expect("islands are never empty after seeding")
    .payload
    .clone();

    let mutation = propose_mutation(&parent.genome, parent.reflection.as_deref(), ctx.gateway, config.mutation_retries);
    let child = mutation.genome;
    let evaluated = evaluate_candidate(&child, &tasks, n, ctx, &format!("it{it:04}"));
    let evaluation = match evaluated {
        Err(e) if e.is_fatal() => return Err(EvolveError::Dependency { iteration: it, source: e }),
        other => other,
    };

    let mut record = HistoryRecord {
        iteration: it,
        island: island_idx,
        n_personas: n,
        lambda_h,
        lambda_b,
        tasks: tasks.iter().map(|t| t.task_id.clone()).collect(),
        parent_id: parent.genome_id.clone(),
        child_id: child.id(),
        generation: child.generation,
        mutation_noop: mutation.noop,
        mutation_attempts: mutation.attempts,
        status: CandidateStatus::Failed,
        score: None,
        hl_mean: None,
        cov_mean: None,
        usi: None,
        coords: None,
        inserted: false,
        island_size: 0,
        best_score: state.best.score,
        error: None,
    };
    match evaluation {
        Ok(ev) => {
            let report = &ev.report;
            let coords = behavior_coords(report);
            record.status = CandidateStatus::Scored;
            record.score = Some(report.score);
            record.hl_mean = Some(report.hl_mean);
            record.cov_mean = Some(report.cov_mean);
            record.usi = Some(report.dice.usi);
            record.coords = Some(coords);
            let score = report.score;
            let elite = elite_from(child.clone(), &ev, &tasks, ctx, config.reflection_exemplars, Some(it));
            record.inserted = state.islands[island_idx].archive.insert(elite, coords, score).inserted();
            if score > state.best.score {
                state.best = BestRecord { genome_id: child.id(), genome: child, score, iteration: Some(it) };
            }
        }
        Err(e) => record.error = Some(e.to_string()),
    }

    if (it + 1).is_multiple_of(config.migration_interval) {
        migrate(&mut state.islands, config.migration_rate);
    }
    record.island_size = state.islands[island_idx].archive.len();
    record.best_score = state.best.score;
    state.history.push(record);

    if config.validation_interval > 0 && (it + 1).is_multiple_of(config.validation_interval) && !pools.validation.is_empty() {
        let n_val = config.validation_count();
        let genome = &state.best.genome;
        let mut v = ValidationRecord {
            iteration: it,
            genome_id: state.best.genome_id.clone(),
            n_personas: n_val,
            score: None,
            hl_mean: None,
            cov_mean: None,
            error: None,
        };
        match evaluate_candidate(genome, &pools.validation, n_val, ctx, &format!("val{it:04}")) {
            Ok(ev) => {
                v.score = Some(ev.report.score);
                v.hl_mean = Some(ev.report.hl_mean);
                v.cov_mean = Some(ev.report.cov_mean);
            }
            Err(e) => v.error = Some(e.to_string()),
        }
        state.validation.push(v);
    }

    state.window_cursor = next_cursor;
    state.next_iteration = it + 1;
    Ok(())
}

/// Steps until the budget is spent, writing a checkpoint after every
/// iteration when `checkpoint_dir` is set and reporting each new history
/// row to `on_iteration`.
pub fn run_evolution(
    mut state: EvolutionState,
    pools: &TaskPools,
    ctx: &EvalContext<'_>,
    checkpoint_dir: Option<&Path>,
    on_iteration: &mut dyn FnMut(&EvolutionState),
) -> Result<EvolutionState, EvolveError> {
    state.config.validate()?;
    check_terminal(&state.config, ctx)?;
    while !state.is_complete() {
        step(&mut state, pools, ctx)?;
        if let Some(dir) = checkpoint_dir {
            write_checkpoint(dir, &state)?;
        }
        on_iteration(&state);
    }
    Ok(state)
}

pub fn checkpoint_name(next_iteration: usize) -> String {
    format!("iter_{next_iteration:04}")
}

/// Writes `<root>/iter_NNNN/state.json` through a temporary directory and
/// a rename, so a checkpoint directory is either complete or absent.
pub fn write_checkpoint(root: &Path, state: &EvolutionState) -> Result<PathBuf, EvolveError> {
    let name = checkpoint_name(state.next_iteration);
    let fail = |path: &Path, e: std::io::Error| EvolveError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let tmp = root.join(format!(".{name}.tmp"));
    let dest = root.join(&name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| fail(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| fail(&tmp, e))?;
    fs::write(tmp.join(CHECKPOINT_FILE), state.to_json()).map_err(|e| fail(&tmp, e))?;
    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(|e| fail(&dest, e))?;
    }
    fs::rename(&tmp, &dest).map_err(|e| fail(&dest, e))?;
    Ok(dest)
}

/// Accepts a checkpoint directory or its state file.
pub fn load_checkpoint(path: &Path) -> Result<EvolutionState, EvolveError> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| EvolveError::Checkpoint {
        path: file.display().to_string(),
        message: e.to_string(),
    })?;
    EvolutionState::from_json(&text)
        .map_err(|message| EvolveError::Checkpoint { path: file.display().to_string(), message })
}

/// Checkpoint directories under `root` in iteration order.
pub fn list_checkpoints(root: &Path) -> Result<Vec<PathBuf>, EvolveError> {
    let entries = fs::read_dir(root).map_err(|e| EvolveError::Checkpoint {
        path: root.display().to_string(),
        message: e.to_string(),
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.strip_prefix("iter_").is_some_and(|d| d.parse::<usize>().is_ok()))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointCandidate {
    pub label: String,
    pub genome: GeneratorGenome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: usize,
    pub label: String,
    pub genome_id: String,
    pub persona_counts: Vec<usize>,
    /// Per candidate, one score per persona count; `None` marks a failed
    /// evaluation.
    pub scores: Vec<Vec<Option<f64>>>,
    /// Mean score per candidate; `None` if any evaluation failed.
    pub means: Vec<Option<f64>>,
}

/// Scores every candidate at every persona count and picks the highest
/// mean. Candidates with a failed evaluation rank below all others; ties
/// go to the earliest candidate.
pub fn select_checkpoint<F>(
    candidates: &[CheckpointCandidate],
    persona_counts: &[usize],
    mut score: F,
) -> Result<SelectionReport, EvolveError>
where
    F: FnMut(&GeneratorGenome, usize) -> Option<f64>,
{
    if candidates.is_empty() || persona_counts.is_empty() {
        return Err(EvolveError::Config("selection needs at least one candidate and one persona count".into()));
    }
    let scores: Vec<Vec<Option<f64>>> =
        candidates.iter().map(|c| persona_counts.iter().map(|&n| score(&c.genome, n)).collect()).collect();
    let means: Vec<Option<f64>> = scores
        .iter()
        .map(|row| {
            let vals: Option<Vec<f64>> = row.iter().copied().collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let mut chosen = 0;
    for (i, m) in means.iter().enumerate().skip(1) {
        let current = means[chosen].unwrap_or(f64::NEG_INFINITY);
        if m.unwrap_or(f64::NEG_INFINITY) > current {
            chosen = i;
        }
    }
    Ok(SelectionReport {
        chosen,
        label: candidates[chosen].label.clone(),
        genome_id: candidates[chosen].genome.id(),
        persona_counts: persona_counts.to_vec(),
        scores,
        means,
    })
}

/// Scores a genome on `tasks` at a given persona count.
pub fn validation_score(
    genome: &GeneratorGenome,
    tasks: &[TaskSpec],
    n_personas: usize,
    ctx: &EvalContext<'_>,
) -> Option<f64> {
    evaluate_candidate(genome, tasks, n_personas, ctx, &format!("select_n{n_personas}")).ok().map(|e| e.report.score)
}
