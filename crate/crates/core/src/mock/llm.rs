use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::style::{identifiers, intent, utterance, TurnState, UserStyle};
use crate::evolve::mutation::extract_prompt_genome;
use crate::genome::{AxisSpec, GeneratorGenome};
use crate::llm::{ChatClient, ChatRole, CompletionRequest, CompletionResponse, LlmError, RequestTag};

/// Marks the trait list inside a mock roleplay instruction.
pub const TRAITS_LINE: &str = "Traits in play:";

/// Axes the mock mutator can add, in order of preference.
pub const AXIS_BANK: [(&str, &str, &str, &str); 5] = [
    (
        "bursty",
        "Sends several short messages in a row instead of one composed message.",
        "Split thoughts across quick consecutive lines and resend a line when ignored.",
        "Write one complete message per turn.",
    ),
    (
        "typo_prone",
        "Types quickly on a phone without correcting mistakes.",
        "Leave small typos and skip capitalization.",
        "Write cleanly with normal capitalization.",
    ),
    (
        "casual",
        "Writes like texting a friend.",
        "Use lowercase, slang and short acknowledgments.",
        "Keep a neutral, standard register.",
    ),
    (
        "impatient",
        "Wants the problem solved immediately.",
        "Push the agent to hurry and show irritation at delays.",
        "Wait calmly for each step.",
    ),
    (
        "forgetful",
        "Does not have details at hand and changes course.",
        "Reveal details late and reconsider the request midway.",
        "Give details readily and stick to the plan.",
    ),
];

/// Deterministic offline stand-in for every model role. Each reply is a
/// pure function of the request, so concurrent use is reproducible.
#[derive(Debug, Clone)]
pub struct MockLlm {
    stop_marker: String,
}

impl Default for MockLlm {
    fn default() -> Self {
        MockLlm { stop_marker: "###STOP###".into() }
    }
}

pub fn hash64(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn rng_for(parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash64(parts))
}

fn content(req: &CompletionRequest, role: ChatRole) -> impl Iterator<Item = &str> {
    req.messages.iter().filter(move |m| m.role == role).map(|m| m.content.as_str())
}

impl MockLlm {
    pub fn new(stop_marker: impl Into<String>) -> Self {
        MockLlm { stop_marker: stop_marker.into() }
    }

    fn population(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        static COUNT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"exactly (\d+)").unwrap());
        static AXIS: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"(?m)^- ([A-Za-z_][A-Za-z0-9_]*): .*\n  - true:").unwrap());
        let prompt = req.last_message();
        let n: usize = COUNT
            .captures(prompt)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(|| LlmError::InvalidRequest("mock population prompt names no count".into()))?;
        let axes: Vec<&str> = AXIS.captures_iter(prompt).map(|c| c.get(1).unwrap().as_str()).collect();
        let mut rng = rng_for(&["population", prompt]);
        let first = ["Ana", "Ben", "Chen", "Dara", "Eli", "Femi", "Gia", "Hugo", "Ines", "Jon", "Kai", "Lena"];
        let job = ["nurse", "teacher", "student", "retiree", "contractor", "chef", "driver", "accountant"];
        let members: Vec<Value> = (0..n)
            .map(|i| {
                let name = *first.choose(&mut rng).unwrap();
                let placement: serde_json::Map<String, Value> =
                    axes.iter().map(|a| (a.to_string(), Value::Bool(rng.random_bool(0.5)))).collect();
                json!({
                    "persona_id": format!("{}_{}", name.to_lowercase(), i + 1),
                    "description": format!("{name} is a busy {} handling this between other errands.", job.choose(&mut rng).unwrap()),
                    "axis_placement": placement,
                    "reasoning": "The placements follow from how much time and patience this person has.",
                })
            })
            .collect();
        Ok(serde_json::to_string_pretty(&Value::Array(members)).expect("json"))
    }

    fn expansion(&self, req: &CompletionRequest) -> String {
        static TRAIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^- ([A-Za-z_][A-Za-z0-9_]*): (.*)$").unwrap());
        let prompt = req.last_message();
        let section = prompt.split("Active behavioral traits:").nth(1).unwrap_or("");
        let mut names = Vec::new();
        let mut playbooks = Vec::new();
        for line in section.trim_start_matches('\n').lines().take_while(|l| !l.trim().is_empty()) {
            if let Some(c) = TRAIT.captures(line) {
                names.push(c[1].to_string());
                playbooks.push(c[2].trim().to_string());
            }
        }
        let list = if names.is_empty() { "none".to_string() } else { names.join(", ") };
        let mut out = format!(
            "{TRAITS_LINE} {list}\nStay with the goals of the scenario and pursue them in your own voice."
        );
        for p in playbooks {
            out.push(' ');
            out.push_str(&p);
        }
        out
    }

    fn user(&self, req: &CompletionRequest) -> String {
        let system = content(req, ChatRole::System).next().unwrap_or("");
        let (context, policy) = match system.find(TRAITS_LINE) {
            Some(i) => (&system[..i], &system[i..]),
            None => (system, ""),
        };
        let style = if policy.is_empty() {
            UserStyle::base_simulator()
        } else {
            let line = policy.lines().next().unwrap_or("");
            let traits: Vec<&str> =
                line[TRAITS_LINE.len()..].split(',').map(str::trim).filter(|t| *t != "none").collect();
            UserStyle::with_traits(traits)
        };
        let turn = content(req, ChatRole::Assistant).count();
        let previous = content(req, ChatRole::Assistant).last();
        let agent_last = content(req, ChatRole::User).last().unwrap_or("").to_lowercase();
        let planned = {
            let mut r = rng_for(&["plan", system]);
            r.random_range(style.min_turns..=style.max_turns)
        };
        let state = TurnState {
            turn,
            planned_turns: planned,
            context,
            previous,
            asked_for_details: agent_last.contains("order number") || agent_last.contains("email"),
        };
        let mut rng = rng_for(&["user", system, &turn.to_string()]);
        utterance(&style, &state, &self.stop_marker, &mut rng)
    }

    fn agent(&self, req: &CompletionRequest) -> String {
        let last = req.last_message();
        if let Some(obs) = last.strip_prefix("[environment] ") {
            return format!("Thanks for waiting. {obs}. What would you like me to do next?");
        }
        let users: Vec<&str> = content(req, ChatRole::User).filter(|m| !m.starts_with("[environment]")).collect();
        let tools = content(req, ChatRole::User).filter(|m| m.starts_with("[environment]")).count();
        let said = users.join(" ");
        let ids = identifiers(&said);
        let order = ids.iter().find(|i| i.starts_with("#W"));
        match (tools, order) {
            (0, Some(o)) => format!("Let me pull that up.\nTOOL: find_order {o}"),
            (0, None) => "Could you share your order number or the email on the account?".into(),
            (1, _) => format!("I can take care of that.\nTOOL: process_request {}", intent(&said)),
            _ => {
                let replies = [
                    "Your request is complete. Is there anything else?",
                    "I understand. The change is already recorded on the order.",
                    "Sorry for the trouble. You will get a confirmation email shortly.",
                    "Happy to explain: the update shows in your account within a day.",
                ];
                replies[(hash64(&[last]) % replies.len() as u64) as usize].into()
            }
        }
    }

    fn reflection(&self, req: &CompletionRequest) -> String {
        let prompt = req.last_message();
        let lower = prompt.to_lowercase();
        let mut notes = vec![
            "The higher-scoring dialogues read like quick chat messages from a busy person, while the \
             lower-scoring ones sound like a helpful assistant writing formal paragraphs."
                .to_string(),
        ];
        if lower.contains("politeness_rate=0.") && lower.contains("formality_rate=0.") {
            notes.push(
                "Heavy politeness and formal connectors pull human likeness down; real users rarely say \
                 'Furthermore' to support staff."
                    .into(),
            );
        }
        let bank: Vec<&str> = AXIS_BANK.iter().map(|a| a.0).collect();
        let pick = bank[(hash64(&[prompt]) % bank.len() as u64) as usize];
        notes.push(format!(
            "Adopt behaviors that add natural friction, for example a {} style; avoid users who volunteer \
             every identifier in the first message.",
            pick.replace('_', " ")
        ));
        notes.join("\n\n")
    }

    fn mutation(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let prompt = req.last_message();
        let doc = extract_prompt_genome(prompt)
            .ok_or_else(|| LlmError::InvalidRequest("mutation prompt carries no generator".into()))?;
        let mut g = GeneratorGenome::parse_lenient(doc).map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let h = hash64(&[prompt]);
        if req.label.as_deref() == Some("attempt_0") && h.is_multiple_of(7) {
            return Ok("I could not decide on a revision.".into());
        }
        let missing: Vec<_> = AXIS_BANK.iter().filter(|a| g.axis(a.0).is_none()).collect();
        match (h >> 8) % 4 {
            0 | 1 if !missing.is_empty() => {
                let a = missing[((h >> 16) % missing.len() as u64) as usize];
                g.axes.push(AxisSpec {
                    behavior: a.0.into(),
                    definition: a.1.into(),
                    presence_true: a.2.into(),
                    presence_false: a.3.into(),
                });
            }
            2 if g.axes.len() > 3 => {
                let i = ((h >> 16) % g.axes.len() as u64) as usize;
                g.axes.remove(i);
            }
            _ => {
                let i = ((h >> 16) % g.axes.len() as u64) as usize;
                g.axes[i].presence_true.push_str(" Keep messages short and plain.");
            }
        }
        let body = g.serialize();
        Ok(format!("Revised generator:\n\n{}", body.split("=== META ===").next().unwrap_or(&body)))
    }
}

impl ChatClient for MockLlm {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let text = match req.tag {
            RequestTag::Generator => match req.label.as_deref() {
                Some("population") => self.population(req)?,
                Some("expansion") => self.expansion(req),
                other => return Err(LlmError::InvalidRequest(format!("mock generator label {other:?}"))),
            },
            RequestTag::User => self.user(req),
            RequestTag::Agent => self.agent(req),
            RequestTag::Reflection => self.reflection(req),
            RequestTag::Mutation => self.mutation(req)?,
        };
        Ok(CompletionResponse::text(text))
    }
}
