use thiserror::Error;

use crate::discriminator::Discriminator;
use crate::fingerprint::{extract_fingerprint, FeatureConfig, FeatureVector, LexiconSet};
use crate::genome::{generate_personas, GenerationConfig, GenerationError, GeneratorGenome, PersonaRecord, TaskContext};
use crate::llm::{run_bounded, Gateway};
use crate::metrics::{
    coverage_from_error, lambda_schedule, mean_vector, FitnessReport, HumanReference, MetricsError, TaskCoverage,
};
use crate::rollout::{run_rollout_batch, EnvironmentFactory, RolloutConfig, RolloutError, RolloutInput, TaskSpec};
use crate::transcript::Episode;

/// Everything a candidate evaluation reads but never mutates.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub gateway: &'a Gateway,
    pub discriminator: &'a Discriminator,
    pub reference: &'a HumanReference,
    pub lexicons: &'a LexiconSet,
    pub features: &'a FeatureConfig,
    pub envs: &'a dyn EnvironmentFactory,
    pub rollout: &'a RolloutConfig,
    pub generation: &'a GenerationConfig,
    /// Persona count at the end of the curriculum; sets the λ weights.
    pub terminal_personas: usize,
}

#[derive(Debug, Error)]
pub enum CandidateFailure {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("persona generation for task {task_id} failed: {source}")]
    Generation {
        task_id: String,
        #[source]
        source: GenerationError,
    },
    #[error("rollout for task {task_id} failed: {message}")]
    Rollout { task_id: String, message: String },
    #[error("task {0} produced no scorable episodes")]
    NoScorableEpisodes(String),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

impl CandidateFailure {
    /// True when the failure comes from a broken dependency rather than the
    /// candidate, so continuing the search is pointless.
    pub fn is_fatal(&self) -> bool {
        match self {
            CandidateFailure::Generation { source: GenerationError::Client { source, .. }, .. } => source.is_fatal(),
            CandidateFailure::Rollout { .. } => true,
            _ => false,
        }
    }
}

/// One rollout of the evaluation with its score inputs. Unscorable
/// episodes keep `fingerprint` and `probability` empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode {
    pub episode: Episode,
    pub persona: PersonaRecord,
    pub fingerprint: Option<FeatureVector>,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: FitnessReport,
    pub episodes: Vec<ScoredEpisode>,
}

impl Evaluation {
    pub fn scored(&self) -> impl Iterator<Item = &ScoredEpisode> {
        self.episodes.iter().filter(|e| e.probability.is_some())
    }
}

pub fn task_context(task: &TaskSpec) -> TaskContext {
    TaskContext { task_id: task.task_id.clone(), text: task.user_context.clone() }
}

/// Generates `n_personas` personas per task, runs one rollout per persona,
/// fingerprints and scores every episode. Episode ids are
/// `{prefix}/{task_id}/{persona_id}`.
pub fn evaluate_candidate(
    genome: &GeneratorGenome,
    tasks: &[TaskSpec],
    n_personas: usize,
    ctx: &EvalContext<'_>,
    prefix: &str,
) -> Result<Evaluation, CandidateFailure> {
    if tasks.is_empty() {
        return Err(CandidateFailure::NoTasks);
    }
    let lambdas = lambda_schedule(n_personas, ctx.terminal_personas)?;
    let workers = tasks.len().min(ctx.gateway.max_workers());
    let generated = run_bounded(tasks.len(), workers, |i| {
        generate_personas(genome, &task_context(&tasks[i]), n_personas, ctx.gateway, ctx.generation)
    });
    let mut inputs = Vec::new();
    let mut personas = Vec::new();
    for (task, result) in tasks.iter().zip(generated) {
        let set = result.map_err(|source| CandidateFailure::Generation { task_id: task.task_id.clone(), source })?;
        for record in set.records {
            inputs.push(RolloutInput {
                episode_id: format!("{prefix}/{}/{}", task.task_id, record.persona_id),
                task: task.clone(),
                persona_id: Some(record.persona_id.clone()),
                policy: record.expanded_instruction.clone(),
            });
            personas.push(record);
        }
    }

    let outcomes = run_rollout_batch(&inputs, ctx.gateway, ctx.envs, ctx.rollout);
    let mut episodes = Vec::with_capacity(inputs.len());
    for ((input, persona), outcome) in inputs.iter().zip(personas).zip(outcomes) {
        let (episode, fingerprint) = match outcome {
            Ok(ep) => {
                let fp = extract_fingerprint(&ep, ctx.lexicons, ctx.features).ok().map(|f| f.0);
                (ep, fp)
            }
            Err(RolloutError::Aborted { episode, .. }) => (*episode, None),
            Err(e) => {
                return Err(CandidateFailure::Rollout { task_id: input.task.task_id.clone(), message: e.to_string() })
            }
        };
        episodes.push(ScoredEpisode { episode, persona, fingerprint, probability: None });
    }

    let rows: Vec<FeatureVector> = episodes.iter().filter_map(|e| e.fingerprint).collect();
    let mut probs = ctx.discriminator.predict_batch(&rows).into_iter();
    for e in episodes.iter_mut().filter(|e| e.fingerprint.is_some()) {
        e.probability = probs.next();
    }

    let mut task_coverage = Vec::with_capacity(tasks.len());
    for task in tasks {
        let fps: Vec<FeatureVector> = episodes
            .iter()
            .filter(|e| e.episode.task_id == task.task_id)
            .filter_map(|e| e.fingerprint)
            .collect();
        if fps.is_empty() {
            return Err(CandidateFailure::NoScorableEpisodes(task.task_id.clone()));
        }
        let err = ctx.reference.chamfer(&fps)?;
        task_coverage.push(TaskCoverage {
            task_id: task.task_id.clone(),
            chamfer_error: err,
            coverage: coverage_from_error(err, ctx.reference.d_ref),
        });
    }

    let scored: Vec<&ScoredEpisode> = episodes.iter().filter(|e| e.probability.is_some()).collect();
    let ids = scored.iter().map(|e| e.episode.episode_id.clone()).collect();
    let p = scored.iter().filter_map(|e| e.probability).collect();
    let dice = ctx.reference.dice(&mean_vector(&rows).expect("at least one scorable episode"));
    let report = FitnessReport::assemble(n_personas, ids, p, task_coverage, lambdas, dice)?;
    Ok(Evaluation { report, episodes })
}
