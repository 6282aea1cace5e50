use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::evaluate::Evaluation;
use crate::fingerprint::{FeatureVector, FEATURE_NAMES};
use crate::genome::template::{render, TemplateError};
use crate::llm::{ChatMessage, Gateway, LlmError, RequestTag};
use crate::metrics::FitnessReport;
use crate::rollout::TaskSpec;
use crate::transcript::Role;

pub const REFLECTION_TEMPLATE: &str = include_str!("../../data/reflection_template.txt");

/// Dialogue excerpts keep at most this many turns.
pub const EXCERPT_MAX_TURNS: usize = 16;
/// Longer turns are cut to this many characters.
pub const EXCERPT_MAX_CHARS: usize = 400;

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error("reflection needs at least 2 scored episodes, got {0}")]
    TooFewEpisodes(usize),
    #[error("rendering the reflection prompt failed: {0}")]
    Render(#[from] TemplateError),
    #[error("reflection call failed: {0}")]
    Client(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub episode_id: String,
    pub task_id: String,
    pub persona_id: String,
    pub probability: f64,
    pub policy: String,
    pub features: FeatureVector,
    pub dialogue: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub metrics_block: String,
    pub task_context_block: String,
    pub pairs_block: String,
    /// Highest human probability first.
    pub best: Vec<Exemplar>,
    /// Lowest human probability first.
    pub worst: Vec<Exemplar>,
    /// Fewer than `2k` scored episodes were available.
    pub short: bool,
    pub prompt: String,
    pub response: Option<String>,
}

pub fn metrics_block(report: &FitnessReport) -> String {
    format!(
        "Combined score (M): {:.4}\nHuman likeness (mean discriminator probability of human): {:.4}\n\
         Behavioral coverage (mean over scenarios): {:.4}\nPersonas per scenario: {}",
        report.score, report.hl_mean, report.cov_mean, report.n_personas
    )
}

/// Each scenario's user context, separated by rules, without numbering.
pub fn task_context_block(tasks: &[TaskSpec]) -> String {
    tasks
        .iter()
        .map(|t| t.user_context.trim().to_string())
        .collect::<Vec<_>>()
        .join("\n\n* * *\n\n")
}

fn clip(text: &str) -> String {
    let one_line = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match one_line.char_indices().nth(EXCERPT_MAX_CHARS) {
        Some((cut, _)) => format!("{} [...]", &one_line[..cut]),
        None => one_line,
    }
}

pub fn dialogue_excerpt(episode: &crate::transcript::Episode) -> String {
    let mut lines: Vec<String> = episode
        .turns
        .iter()
        .take(EXCERPT_MAX_TURNS)
        .map(|t| {
            let who = match t.role {
                Role::User => "USER",
                Role::Agent => "AGENT",
                Role::Tool => "TOOL",
                Role::System => "SYSTEM",
            };
            format!("{who}: {}", clip(&t.text))
        })
        .collect();
    if episode.turns.len() > EXCERPT_MAX_TURNS {
        lines.push(format!("[... {} more turns]", episode.turns.len() - EXCERPT_MAX_TURNS));
    }
    lines.join("\n")
}

pub fn feature_line(features: &FeatureVector) -> String {
    FEATURE_NAMES
        .iter()
        .zip(features)
        .map(|(n, v)| format!("{n}={v:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_exemplar(heading: &str, e: &Exemplar) -> String {
    format!(
        "## {heading} (human likeness {:.3})\nPersona policy:\n{}\n\nBehavioral features: {}\n\nDialogue:\n{}",
        e.probability,
        e.policy.trim(),
        feature_line(&e.features),
        e.dialogue
    )
}

pub fn pairs_block(best: &[Exemplar], worst: &[Exemplar]) -> String {
    best.iter()
        .map(|e| render_exemplar("Higher human likeness", e))
        .chain(worst.iter().map(|e| render_exemplar("Lower human likeness", e)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Ranks scored episodes by human probability (ties keep evaluation
/// order) and takes the top `k` and the bottom `k`, never repeating an
/// episode. With fewer than `2k` episodes the best side is filled first.
pub fn build_reflection(
    evaluation: &Evaluation,
    tasks: &[TaskSpec],
    k: usize,
) -> Result<ReflectionReport, ReflectionError> {
    let mut scored: Vec<Exemplar> = evaluation
        .scored()
        .map(|s| Exemplar {
            episode_id: s.episode.episode_id.clone(),
            task_id: s.episode.task_id.clone(),
            persona_id: s.persona.persona_id.clone(),
            probability: s.probability.expect("scored"),
            policy: s.persona.expanded_instruction.clone(),
            features: s.fingerprint.expect("scored"),
            dialogue: dialogue_excerpt(&s.episode),
        })
        .collect();
    if scored.len() < 2 {
        return Err(ReflectionError::TooFewEpisodes(scored.len()));
    }
    scored.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    let n = scored.len();
    let n_best = k.min(n);
    let n_worst = k.min(n - n_best);
    let mut worst: Vec<Exemplar> = scored.split_off(n - n_worst);
    worst.reverse();
    scored.truncate(n_best);
    let best = scored;

    let metrics_block = metrics_block(&evaluation.report);
    let task_context_block = task_context_block(tasks);
    let pairs_block = pairs_block(&best, &worst);
    let prompt = render(
        REFLECTION_TEMPLATE,
        &[
            ("metrics_block", &metrics_block),
            ("task_context_block", &task_context_block),
            ("pairs_block", &pairs_block),
        ],
    )?;
    Ok(ReflectionReport {
        metrics_block,
        task_context_block,
        pairs_block,
        best,
        worst,
        short: n < 2 * k,
        prompt,
        response: None,
    })
}

/// Sends the rendered prompt to the reflection model and stores the reply.
pub fn request_reflection(report: &mut ReflectionReport, gateway: &Gateway) -> Result<(), ReflectionError> {
    let req = gateway
        .request(RequestTag::Reflection, vec![ChatMessage::user(report.prompt.clone())])
        .with_label("reflection");
    report.response = Some(gateway.complete_text(&req)?.trim().to_string());
    Ok(())
}
