//! Agent and user-simulator conversations, one per (task, persona) pair.

mod environment;

pub use environment::{
    EnvError, EnvScript, Environment, EnvironmentFactory, MockEnvironment, MockEnvironmentFactory,
    Observation, ScriptState, Transition,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{run_bounded, ChatMessage, Gateway, LlmError, RequestTag};
use crate::transcript::{Episode, Role, Source, Turn};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default)]
    pub domain: String,
    /// The benchmark's user-simulator system prompt for this task.
    pub user_context: String,
    pub agent_system_prompt: String,
    pub environment_script: String,
    #[serde(default)]
    pub success_criteria: String,
}

impl TaskSpec {
    /// Digest over every task-level input a rollout sees.
    pub fn input_digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.user_context, &self.agent_system_prompt, &self.environment_script] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum TaskFileError {
    #[error("cannot read task file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("task file {path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("task file {path} repeats task id {task_id:?}")]
    Duplicate { path: String, task_id: String },
}

/// Reads one JSON task per line; blank lines are ignored.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, TaskFileError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| TaskFileError::Io { path: p.clone(), source })?;
    let mut tasks: Vec<TaskSpec> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskSpec = serde_json::from_str(line).map_err(|e| TaskFileError::Parse {
            path: p.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if tasks.iter().any(|t| t.task_id == task.task_id) {
            return Err(TaskFileError::Duplicate { path: p, task_id: task.task_id });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn tasks_to_jsonl(tasks: &[TaskSpec]) -> String {
    tasks
        .iter()
        .map(|t| serde_json::to_string(t).expect("task serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Upper bound on user turns.
    pub max_turns: usize,
    pub stop_marker: String,
    pub user_first: bool,
    /// Opening line shown to the user simulator when the user speaks first.
    pub kickoff: String,
    /// Agent greeting recorded as the first turn when the agent speaks first.
    pub agent_greeting: String,
    /// Prefix marking an agent line as an environment action.
    pub tool_prefix: String,
    /// Environment calls allowed between two user turns.
    pub max_tool_calls: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_turns: 30,
            stop_marker: "###STOP###".into(),
            user_first: true,
            kickoff: "Begin the conversation: write your opening message to the customer service agent.".into(),
            agent_greeting: "Hi! How can I help you today?".into(),
            tool_prefix: "TOOL:".into(),
            max_tool_calls: 8,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_turns < 2 {
            return Err("max_turns must be >= 2".into());
        }
        if self.stop_marker.trim().is_empty() {
            return Err("stop_marker must be nonempty".into());
        }
        if self.tool_prefix.trim().is_empty() {
            return Err("tool_prefix must be nonempty".into());
        }
        Ok(())
    }
}

/// Why a conversation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Stop,
    Budget,
    Environment,
    Error,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Stop => "stop",
            Termination::Budget => "budget",
            Termination::Environment => "environment",
            Termination::Error => "error",
        }
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error("environment: {0}")]
    Environment(#[from] EnvError),
    #[error("episode {} aborted: {reason}", episode.episode_id)]
    Aborted { episode: Box<Episode>, reason: String },
}

impl RolloutError {
    /// The flagged partial transcript of an aborted rollout.
    pub fn partial_episode(&self) -> Option<&Episode> {
        match self {
            RolloutError::Aborted { episode, .. } => Some(episode),
            _ => None,
        }
    }
}

/// One conversation to run.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutInput {
    pub episode_id: String,
    pub task: TaskSpec,
    /// `None` runs the unconditioned base simulator.
    pub persona_id: Option<String>,
    pub policy: String,
}

/// The user-simulator system prompt: base, a blank line, then the policy.
pub fn inject_persona(base: &str, policy: &str) -> String {
    if policy.is_empty() {
        base.to_string()
    } else {
        format!("{base}\n\n{policy}")
    }
}

/// The action text of the first line starting with `prefix`, if any.
fn tool_action<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines()
        .map(str::trim_start)
        .find_map(|l| l.strip_prefix(prefix))
        .map(str::trim)
}

struct Conversation {
    turns: Vec<Turn>,
}

impl Conversation {
    fn push(&mut self, role: Role, text: String) {
        let i = self.turns.len();
        self.turns.push(Turn::new(role, text, i));
    }

    fn user_view(&self, system: &str, kickoff: Option<&str>, tool_prefix: &str) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::system(system)];
        if let Some(k) = kickoff {
            m.push(ChatMessage::user(k));
        }
        for t in &self.turns {
            match t.role {
                Role::User => m.push(ChatMessage::assistant(t.text.clone())),
                Role::Agent if tool_action(&t.text, tool_prefix).is_none() => {
                    m.push(ChatMessage::user(t.text.clone()))
                }
                _ => {}
            }
        }
        m
    }

    fn agent_view(&self, system: &str) -> Vec<ChatMessage> {
        let mut m = vec![ChatMessage::system(system)];
        for t in &self.turns {
            m.push(match t.role {
                Role::User => ChatMessage::user(t.text.clone()),
                Role::Agent => ChatMessage::assistant(t.text.clone()),
                Role::Tool => ChatMessage::user(format!("[environment] {}", t.text)),
                Role::System => continue,
            });
        }
        m
    }
}

/// Runs one conversation. The user speaks first by default; agent lines
/// starting with the tool prefix are executed against `env` and recorded
/// as an agent turn followed by a tool turn. A gateway failure returns the
/// partial transcript flagged `scorable=false`.
pub fn run_rollout(
    input: &RolloutInput,
    gateway: &Gateway,
    env: &mut dyn Environment,
    cfg: &RolloutConfig,
) -> Result<Episode, RolloutError> {
    cfg.validate().map_err(RolloutError::Config)?;
    let task = &input.task;
    if env.script_id() != task.environment_script {
        return Err(EnvError::UnknownScript(task.environment_script.clone()).into());
    }
    env.reset();
    let user_system = inject_persona(&task.user_context, &input.policy);
    let mut convo = Conversation { turns: Vec::new() };
    let mut user_turns = 0;

    let outcome: Result<Termination, String> = (|| {
        if !cfg.user_first {
            convo.push(Role::Agent, cfg.agent_greeting.clone());
        }
        loop {
            if user_turns >= cfg.max_turns {
                return Ok(Termination::Budget);
            }
            let kickoff = (cfg.user_first).then_some(cfg.kickoff.as_str());
            let req = gateway
                .request(RequestTag::User, convo.user_view(&user_system, kickoff, &cfg.tool_prefix))
                .with_label("user_turn");
            let text = gateway.complete_text(&req).map_err(|e: LlmError| e.to_string())?;
            let text = text.trim().to_string();
            if text.is_empty() {
                return Err("user simulator returned an empty message".into());
            }
            let stop = text.contains(&cfg.stop_marker);
            convo.push(Role::User, text);
            user_turns += 1;
            if stop {
                return Ok(Termination::Stop);
            }

            let mut tool_calls = 0;
            loop {
                let req = gateway
                    .request(RequestTag::Agent, convo.agent_view(&task.agent_system_prompt))
                    .with_label("agent_turn");
                let text = gateway.complete_text(&req).map_err(|e| e.to_string())?;
                let text = text.trim().to_string();
                if text.is_empty() {
                    return Err("agent returned an empty message".into());
                }
                let action = tool_action(&text, &cfg.tool_prefix).map(str::to_string);
                convo.push(Role::Agent, text);
                let Some(action) = action else { break };
                if tool_calls >= cfg.max_tool_calls {
                    convo.push(Role::Tool, "ERROR: tool call limit reached for this turn".into());
                    continue;
                }
                tool_calls += 1;
                let obs = env.call(&action);
                convo.push(Role::Tool, obs.text);
                if obs.done {
                    return Ok(Termination::Environment);
                }
            }
        }
    })();

    let mut metadata = BTreeMap::new();
    metadata.insert("domain".to_string(), task.domain.clone());
    metadata.insert("task_input_digest".to_string(), task.input_digest());
    metadata.insert("persona_policy".to_string(), input.policy.clone());
    let termination = match &outcome {
        Ok(t) => *t,
        Err(_) => Termination::Error,
    };
    metadata.insert("terminated_by".to_string(), termination.as_str().to_string());
    let mut episode = Episode {
        episode_id: input.episode_id.clone(),
        task_id: task.task_id.clone(),
        source: if input.persona_id.is_some() { Source::PersonaSim } else { Source::BaseSim },
        persona_id: input.persona_id.clone(),
        turns: convo.turns,
        metadata,
    };
    match outcome {
        Ok(_) => Ok(episode),
        Err(reason) => {
            episode.metadata.insert("scorable".to_string(), "false".to_string());
            episode.metadata.insert("error".to_string(), reason.clone());
            Err(RolloutError::Aborted { episode: Box::new(episode), reason })
        }
    }
}

/// Runs every input with its own environment instance, up to the
/// gateway's worker limit at once. Results keep input order.
pub fn run_rollout_batch(
    inputs: &[RolloutInput],
    gateway: &Gateway,
    envs: &dyn EnvironmentFactory,
    cfg: &RolloutConfig,
) -> Vec<Result<Episode, RolloutError>> {
    run_bounded(inputs.len(), gateway.max_workers(), |i| {
        let mut env = envs.create(&inputs[i].task.environment_script)?;
        run_rollout(&inputs[i], gateway, env.as_mut(), cfg)
    })
}
