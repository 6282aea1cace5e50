use std::sync::{Arc, Mutex};

use super::{ChatClient, CompletionRequest, CompletionResponse, LlmError, RequestTag};

type Handler = Arc<dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync>;

/// One scripted reply: text, or a failure surfaced as `LlmError::Scripted`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    Reply(String),
    Fail(String),
}

impl<S: Into<String>> From<S> for ScriptStep {
    fn from(s: S) -> Self {
        ScriptStep::Reply(s.into())
    }
}

enum Responder {
    Sequence(Vec<ScriptStep>),
    Repeat(String),
    Handler(Handler),
}

struct Rule {
    tag: Option<RequestTag>,
    contains: Option<String>,
    responder: Responder,
}

impl Rule {
    fn matches(&self, request: &CompletionRequest) -> bool {
        self.tag.is_none_or(|t| t == request.tag)
            && self
                .contains
                .as_deref()
                .is_none_or(|needle| request.last_message().contains(needle))
    }

    fn describe(&self) -> String {
        let tag = self.tag.map(|t| t.as_str()).unwrap_or("*");
        match &self.contains {
            Some(c) => format!("{tag}~{c:?}"),
            None => tag.to_string(),
        }
    }
}

/// Deterministic client replaying scripted responses. The first rule whose
/// tag matches and whose substring occurs in the last message answers.
/// Sequences are consumed in order; calling past the end is an error.
#[derive(Default)]
pub struct ScriptedClient {
    rules: Vec<Rule>,
    cursors: Mutex<Vec<usize>>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(mut self, tag: Option<RequestTag>, contains: Option<String>, responder: Responder) -> Self {
        self.rules.push(Rule { tag, contains, responder });
        self.cursors.get_mut().expect("cursor lock").push(0);
        self
    }

    pub fn on<I, S>(self, tag: RequestTag, steps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptStep>,
    {
        let steps = steps.into_iter().map(Into::into).collect();
        self.push(Some(tag), None, Responder::Sequence(steps))
    }

    pub fn on_matching<I, S>(self, tag: RequestTag, contains: &str, steps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptStep>,
    {
        let steps = steps.into_iter().map(Into::into).collect();
        self.push(Some(tag), Some(contains.to_string()), Responder::Sequence(steps))
    }

    pub fn repeat(self, tag: RequestTag, text: impl Into<String>) -> Self {
        self.push(Some(tag), None, Responder::Repeat(text.into()))
    }

    pub fn handler<F>(self, tag: RequestTag, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        self.push(Some(tag), None, Responder::Handler(Arc::new(f)))
    }

    pub fn handler_matching<F>(self, tag: RequestTag, contains: &str, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        self.push(Some(tag), Some(contains.to_string()), Responder::Handler(Arc::new(f)))
    }

    /// Number of sequence steps consumed per rule, in declaration order.
    pub fn consumed(&self) -> Vec<usize> {
        self.cursors.lock().expect("cursor lock").clone()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let Some(idx) = self.rules.iter().position(|r| r.matches(request)) else {
            return Err(LlmError::Unmatched {
                tag: request.tag,
                last_message: request.last_message().chars().take(80).collect(),
            });
        };
        let rule = &self.rules[idx];
        let text = match &rule.responder {
            Responder::Repeat(t) => t.clone(),
            Responder::Handler(f) => f(request)?,
            Responder::Sequence(steps) => {
                let step = {
                    let mut cursors = self.cursors.lock().expect("cursor lock");
                    let at = cursors[idx];
                    if at >= steps.len() {
                        return Err(LlmError::Exhausted { rule: rule.describe(), calls: at + 1 });
                    }
                    cursors[idx] += 1;
                    steps[at].clone()
                };
                match step {
                    ScriptStep::Reply(t) => t,
                    ScriptStep::Fail(m) => return Err(LlmError::Scripted(m)),
                }
            }
        };
        Ok(CompletionResponse::text(text))
    }
}
