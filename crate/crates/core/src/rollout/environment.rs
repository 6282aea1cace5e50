use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("no environment script named {0:?}")]
    UnknownScript(String),
    #[error("environment script {script:?} is invalid: {message}")]
    InvalidScript { script: String, message: String },
    #[error("cannot read environment scripts from {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    /// The environment declares the episode finished.
    #[serde(default)]
    pub done: bool,
}

/// Per-episode tool surface for the agent side.
pub trait Environment: Send {
    fn script_id(&self) -> &str;
    /// Restores the initial state.
    fn reset(&mut self);
    /// Executes one agent action given as free text.
    fn call(&mut self, action: &str) -> Observation;
}

/// Builds a fresh environment instance for each episode.
pub trait EnvironmentFactory: Send + Sync {
    fn create(&self, script_id: &str) -> Result<Box<dyn Environment>, EnvError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    /// Case-insensitive substring the action must contain.
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
    #[serde(default)]
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptState {
    #[serde(default)]
    pub transitions: Vec<Transition>,
    /// Reply when no transition matches; the state does not change.
    #[serde(default = "default_fallback")]
    pub fallback: String,
}

fn default_fallback() -> String {
    "ERROR: unsupported action".to_string()
}

/// A state machine mapping (state, action) to an observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvScript {
    pub id: String,
    pub initial: String,
    pub states: BTreeMap<String, ScriptState>,
}

impl EnvScript {
    pub fn validate(&self) -> Result<(), EnvError> {
        let invalid = |message: String| EnvError::InvalidScript { script: self.id.clone(), message };
        if !self.states.contains_key(&self.initial) {
            return Err(invalid(format!("initial state {:?} undefined", self.initial)));
        }
        for (name, state) in &self.states {
            for t in &state.transitions {
                if t.pattern.trim().is_empty() {
                    return Err(invalid(format!("state {name:?} has an empty match")));
                }
                if let Some(next) = &t.next {
                    if !self.states.contains_key(next) {
                        return Err(invalid(format!("state {name:?} moves to undefined {next:?}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MockEnvironment {
    script: EnvScript,
    state: String,
}

impl MockEnvironment {
    pub fn new(script: EnvScript) -> Result<Self, EnvError> {
        script.validate()?;
        let state = script.initial.clone();
        Ok(MockEnvironment { script, state })
    }

    pub fn state(&self) -> &str {
        &self.state
    }
}

impl Environment for MockEnvironment {
    fn script_id(&self) -> &str {
        &self.script.id
    }

    fn reset(&mut self) {
        self.state = self.script.initial.clone();
    }

    fn call(&mut self, action: &str) -> Observation {
        let state = &self.script.states[&self.state];
        let lower = action.to_lowercase();
        match state.transitions.iter().find(|t| lower.contains(&t.pattern.to_lowercase())) {
            Some(t) => {
                if let Some(next) = &t.next {
                    self.state = next.clone();
                }
                Observation { text: t.response.clone(), done: t.done }
            }
            None => Observation { text: state.fallback.clone(), done: false },
        }
    }
}

/// Serves [`MockEnvironment`]s from a set of named scripts.
#[derive(Debug, Clone, Default)]
pub struct MockEnvironmentFactory {
    scripts: BTreeMap<String, EnvScript>,
}

impl MockEnvironmentFactory {
    pub fn new(scripts: impl IntoIterator<Item = EnvScript>) -> Result<Self, EnvError> {
        let mut map = BTreeMap::new();
        for s in scripts {
            s.validate()?;
            map.insert(s.id.clone(), s);
        }
        Ok(MockEnvironmentFactory { scripts: map })
    }

    /// Reads a JSON array of scripts.
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let io = |message: String| EnvError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let scripts: Vec<EnvScript> = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        Self::new(scripts)
    }

    pub fn script_ids(&self) -> impl Iterator<Item = &str> {
        self.scripts.keys().map(String::as_str)
    }
}

impl EnvironmentFactory for MockEnvironmentFactory {
    fn create(&self, script_id: &str) -> Result<Box<dyn Environment>, EnvError> {
        let script = self
            .scripts
            .get(script_id)
            .ok_or_else(|| EnvError::UnknownScript(script_id.to_string()))?;
        Ok(Box::new(MockEnvironment::new(script.clone())?))
    }
}
