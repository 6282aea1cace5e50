use serde::{Deserialize, Serialize};

use crate::genome::GeneratorGenome;
use crate::llm::{ChatMessage, Gateway, RequestTag};

pub const MUTATION_SYSTEM: &str = "You revise persona-generator documents for user simulators in \
task-oriented dialogue. You return complete documents in the exact sectioned format you are given.";

/// Marks where the current generator document starts in the mutation prompt.
pub const GENOME_BEGIN: &str = "<<<GENERATOR>>>";
pub const GENOME_END: &str = "<<<END GENERATOR>>>";

const NO_REFLECTION: &str = "(no reflection available yet)";

/// The user message for one mutation request.
pub fn mutation_prompt(parent: &GeneratorGenome, reflection: Option<&str>) -> String {
    let doc = parent.serialize();
    let body = doc.split("=== META ===").next().unwrap_or(&doc).trim_end();
    let reflection = reflection.map(str::trim).filter(|r| !r.is_empty()).unwrap_or(NO_REFLECTION);
    format!(
        "The document below defines how personas are generated. The AXES section lists on/off \
behaviors; each axis block has the keys behavior, definition, presence_true and presence_false, \
with continuation lines indented by two spaces and blocks separated by a blank line. The two \
template sections may only use these placeholders: POPULATION_PROMPT may use {{N}}, \
{{axes_description}} and {{task_context}} and must use {{N}} and {{task_context}}; ROLEPLAY_PROMPT \
may use {{N}}, {{axes_description}}, {{task_context}}, {{persona_id}}, {{description}} and \
{{active_traits}} and must use {{task_context}}. Write literal braces as {{{{ and }}}}.

Goal: make the simulated users more human-like (as judged by a discriminator trained on real \
dialogues) while covering more of the range of real user behavior. You may add, remove or rewrite \
axes and edit any prompt text. Keep the task goals of the user intact.

Reflection on the latest evaluation of this generator:
{reflection}

Current generator:
{GENOME_BEGIN}
{body}
{GENOME_END}

Reply with only the complete revised document, starting with the line === AXES ===."
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationOutcome {
    pub genome: GeneratorGenome,
    /// No attempt produced a valid document; `genome` copies the parent.
    pub noop: bool,
    pub attempts: u32,
    /// Why each rejected attempt failed.
    pub errors: Vec<String>,
}

/// Asks the mutation model for a revised genome. Each reply is parsed
/// leniently and validated; after `1 + retry_limit` failed attempts the
/// parent content is returned with `noop` set. The result is always a
/// child of `parent`.
pub fn propose_mutation(
    parent: &GeneratorGenome,
    reflection: Option<&str>,
    gateway: &Gateway,
    retry_limit: u32,
) -> MutationOutcome {
    let prompt = mutation_prompt(parent, reflection);
    let mut errors = Vec::new();
    for attempt in 0..=retry_limit {
        let req = gateway
            .request(
                RequestTag::Mutation,
                vec![ChatMessage::system(MUTATION_SYSTEM), ChatMessage::user(prompt.clone())],
            )
            .with_label(format!("attempt_{attempt}"));
        let parsed = gateway
            .complete_text(&req)
            .map_err(|e| e.to_string())
            .and_then(|text| GeneratorGenome::parse_lenient(&text).map_err(|e| e.to_string()))
            .and_then(|g| g.validate().map(|()| g).map_err(|e| e.to_string()));
        match parsed {
            Ok(g) => {
                return MutationOutcome { genome: parent.child(g), noop: false, attempts: attempt + 1, errors }
            }
            Err(e) => errors.push(e),
        }
    }
    MutationOutcome { genome: parent.child(parent.clone()), noop: true, attempts: retry_limit + 1, errors }
}

/// Recovers the generator document embedded in a mutation prompt.
pub fn extract_prompt_genome(prompt: &str) -> Option<&str> {
    let start = prompt.find(GENOME_BEGIN)? + GENOME_BEGIN.len();
    let end = prompt[start..].find(GENOME_END)? + start;
    Some(prompt[start..end].trim_matches('\n'))
}
