use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::template::{self, TemplateError};
use super::GeneratorGenome;
use crate::llm::{ChatMessage, CompletionRequest, Gateway, LlmError, RequestTag};

/// Benchmark-provided user context for one task, passed through verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub task_id: String,
    pub text: String,
}

/// One generated persona, in the exported record shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub persona_id: String,
    pub description: String,
    pub axis_placement: BTreeMap<String, bool>,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default)]
    pub expanded_instruction: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PopulationError {
    #[error("no JSON array of persona objects found in the response")]
    NoArray,
    #[error("expected exactly {expected} personas, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("member {member} is not a JSON object")]
    NotAnObject { member: String },
    #[error("member {member} lacks {field}")]
    MissingField { member: String, field: &'static str },
    #[error("member {member} has no placement for axis {axis:?}")]
    MissingAxis { member: String, axis: String },
    #[error("member {member} places unknown axis {axis:?}")]
    UnknownAxis { member: String, axis: String },
    #[error("member {member} gives non-boolean {value} for axis {axis:?}")]
    BadAxisValue { member: String, axis: String, value: String },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GenerationError {
    #[error("persona count must be >= 1")]
    ZeroPersonas,
    #[error("task context {0:?} is empty")]
    EmptyContext(String),
    #[error("rendering failed: {0}")]
    Render(#[from] TemplateError),
    #[error("{phase} call failed: {source}")]
    Client {
        phase: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("{phase} output for {member} still unusable after {attempts} attempts: {last_error}")]
    RetriesExhausted {
        phase: &'static str,
        member: String,
        attempts: u32,
        last_error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Extra attempts per phase after the first.
    pub retry_limit: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig { retry_limit: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaSet {
    pub records: Vec<PersonaRecord>,
    /// Failed population attempts before the accepted one.
    pub population_retries: u32,
    /// Failed expansion attempts per member.
    pub expansion_retries: Vec<u32>,
}

/// One block per axis: `- name: definition` followed by the two playbooks.
pub fn axes_description(genome: &GeneratorGenome) -> String {
    genome
        .axes
        .iter()
        .map(|a| {
            format!(
                "- {}: {}\n  - true: {}\n  - false: {}",
                a.behavior, a.definition, a.presence_true, a.presence_false
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `- name: presence_true` for each active axis in genome order, or `(none)`.
pub fn active_traits(genome: &GeneratorGenome, placement: &BTreeMap<String, bool>) -> String {
    let lines: Vec<String> = genome
        .axes
        .iter()
        .filter(|a| placement.get(&a.behavior).copied().unwrap_or(false))
        .map(|a| format!("- {}: {}", a.behavior, a.presence_true))
        .collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Returns `(system, user)` for the joint population call.
pub fn render_population_prompt(
    genome: &GeneratorGenome,
    ctx: &TaskContext,
    n: usize,
) -> Result<(String, String), GenerationError> {
    if n == 0 {
        return Err(GenerationError::ZeroPersonas);
    }
    let n = n.to_string();
    let axes = axes_description(genome);
    let user = template::render(
        &genome.population_template,
        &[("N", &n), ("axes_description", &axes), ("task_context", &ctx.text)],
    )?;
    Ok((genome.population_system.clone(), user))
}

/// Returns `(system, user)` for one member's expansion call.
pub fn render_roleplay_prompt(
    genome: &GeneratorGenome,
    ctx: &TaskContext,
    member: &PersonaRecord,
) -> Result<(String, String), GenerationError> {
    let axes = axes_description(genome);
    let traits = active_traits(genome, &member.axis_placement);
    let n = "1";
    let user = template::render(
        &genome.roleplay_template,
        &[
            ("N", n),
            ("axes_description", &axes),
            ("task_context", &ctx.text),
            ("persona_id", &member.persona_id),
            ("description", &member.description),
            ("active_traits", &traits),
        ],
    )?;
    Ok((genome.roleplay_system.clone(), user))
}

fn find_array(text: &str) -> Option<Vec<Value>> {
    for (i, _) in text.match_indices(['[', '{']) {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) if items.iter().any(Value::is_object) => return Some(items),
            Some(Ok(Value::Object(obj))) => {
                let mut arrays = obj.into_iter().filter_map(|(_, v)| match v {
                    Value::Array(a) if a.iter().any(Value::is_object) => Some(a),
                    _ => None,
                });
                if let (Some(a), None) = (arrays.next(), arrays.next()) {
                    return Some(a);
                }
            }
            _ => {}
        }
    }
    None
}

fn coerce_bool(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_f64() {
            Some(1.0) => Some(true),
            Some(0.0) => Some(false),
            _ => None,
        },
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "y" | "on" | "1" | "active" => Some(true),
            "false" | "no" | "n" | "off" | "0" | "inactive" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn as_text(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Extracts and validates the population array from a model response.
/// Surrounding prose and code fences are ignored; string and 0/1 axis
/// values are coerced to booleans; axis keys match case-insensitively.
pub fn parse_population_response(
    text: &str,
    genome: &GeneratorGenome,
    n: usize,
) -> Result<Vec<PersonaRecord>, PopulationError> {
    let items = find_array(text).ok_or(PopulationError::NoArray)?;
    if items.len() != n {
        return Err(PopulationError::WrongCount { expected: n, got: items.len() });
    }
    let axis_names = genome.axis_names();
    let mut records: Vec<PersonaRecord> = Vec::with_capacity(n);
    for (i, item) in items.iter().enumerate() {
        let Value::Object(obj) = item else {
            return Err(PopulationError::NotAnObject { member: format!("#{}", i + 1) });
        };
        let raw_id = as_text(obj.get("persona_id"));
        let member = match &raw_id {
            Some(id) => format!("#{} ({id})", i + 1),
            None => format!("#{}", i + 1),
        };
        let description = as_text(obj.get("description"))
            .ok_or_else(|| PopulationError::MissingField { member: member.clone(), field: "description" })?;
        let Some(Value::Object(placement_raw)) = obj.get("axis_placement") else {
            return Err(PopulationError::MissingField { member, field: "axis_placement" });
        };

        let mut placement = BTreeMap::new();
        for (key, value) in placement_raw {
            let k = key.trim();
            let Some(axis) = axis_names
                .iter()
                .find(|a| **a == k)
                .or_else(|| axis_names.iter().find(|a| a.eq_ignore_ascii_case(k)))
            else {
                return Err(PopulationError::UnknownAxis { member, axis: key.clone() });
            };
            let b = coerce_bool(value).ok_or_else(|| PopulationError::BadAxisValue {
                member: member.clone(),
                axis: axis.to_string(),
                value: value.to_string(),
            })?;
            placement.insert(axis.to_string(), b);
        }
        if let Some(missing) = axis_names.iter().find(|a| !placement.contains_key(**a)) {
            return Err(PopulationError::MissingAxis { member, axis: missing.to_string() });
        }

        let mut persona_id = raw_id.unwrap_or_else(|| format!("persona_{}", i + 1));
        if records.iter().any(|r| r.persona_id == persona_id) {
            let base = persona_id.clone();
            let mut k = 2;
            while records.iter().any(|r| r.persona_id == persona_id) {
                persona_id = format!("{base}_{k}");
                k += 1;
            }
        }
        records.push(PersonaRecord {
            persona_id,
            description,
            axis_placement: placement,
            reasoning: as_text(obj.get("reasoning")).unwrap_or_default(),
            expanded_instruction: String::new(),
        });
    }
    Ok(records)
}

/// Trims and removes one surrounding code fence.
fn clean_expansion(text: &str) -> Option<String> {
    let mut t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
        t = rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    (!t.is_empty()).then(|| t.to_string())
}

fn request(gateway: &Gateway, system: String, user: String, label: &str) -> CompletionRequest {
    gateway
        .request(RequestTag::Generator, vec![ChatMessage::system(system), ChatMessage::user(user)])
        .with_label(label)
}

/// Two-phase generation: one joint population call, then one expansion
/// call per member, issued concurrently through the gateway. Unparseable
/// output is retried up to `retry_limit` extra times per phase; a member
/// whose expansion never succeeds fails the whole set.
pub fn generate_personas(
    genome: &GeneratorGenome,
    ctx: &TaskContext,
    n: usize,
    gateway: &Gateway,
    config: &GenerationConfig,
) -> Result<PersonaSet, GenerationError> {
    if ctx.text.trim().is_empty() {
        return Err(GenerationError::EmptyContext(ctx.task_id.clone()));
    }
    let (system, user) = render_population_prompt(genome, ctx, n)?;
    let attempts = config.retry_limit + 1;
    let mut population = None;
    let mut last_error = String::new();
    let mut population_retries = 0;
    for attempt in 0..attempts {
        let text = gateway
            .complete_text(&request(gateway, system.clone(), user.clone(), "population"))
            .map_err(|source| GenerationError::Client { phase: "population", source })?;
        match parse_population_response(&text, genome, n) {
            Ok(records) => {
                population = Some(records);
                population_retries = attempt;
                break;
            }
            Err(e) => last_error = e.to_string(),
        }
    }
    let mut records = population.ok_or_else(|| GenerationError::RetriesExhausted {
        phase: "population",
        member: "the population".into(),
        attempts,
        last_error: last_error.clone(),
    })?;

    let prompts: Vec<(String, String)> = records
        .iter()
        .map(|r| render_roleplay_prompt(genome, ctx, r))
        .collect::<Result<_, _>>()?;
    let mut expansion_retries = vec![0u32; records.len()];
    let mut pending: Vec<usize> = (0..records.len()).collect();
    for attempt in 0..attempts {
        if pending.is_empty() {
            break;
        }
        let batch: Vec<CompletionRequest> = pending
            .iter()
            .map(|&i| request(gateway, prompts[i].0.clone(), prompts[i].1.clone(), "expansion"))
            .collect();
        let results = gateway.complete_batch(&batch);
        let mut still = Vec::new();
        for (&i, result) in pending.iter().zip(results) {
            let text = result.map_err(|source| GenerationError::Client { phase: "expansion", source })?;
            match clean_expansion(&text.text) {
                Some(t) => records[i].expanded_instruction = t,
                None => {
                    if attempt + 1 < attempts {
                        expansion_retries[i] += 1;
                    }
                    still.push(i);
                }
            }
        }
        pending = still;
    }
    if let Some(&i) = pending.first() {
        return Err(GenerationError::RetriesExhausted {
            phase: "expansion",
            member: records[i].persona_id.clone(),
            attempts,
            last_error: "empty roleplay instruction".into(),
        });
    }
    Ok(PersonaSet { records, population_retries, expansion_retries })
}
