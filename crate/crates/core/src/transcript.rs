//! Dialogue data model and line-delimited corpus ingestion.
//!
//! One JSON record per line:
//!
//! ```text
//! {"episode_id":"e1","task_id":"t1","source":"human","persona_id":null,
//!  "turns":[{"role":"user","text":"hi"},{"role":"agent","text":"hello"}],
//!  "metadata":{"domain":"retail"}}
//! ```
//!
//! Turn `index` is optional on input (assigned by position) and always written
//! on output. Text is kept byte-for-byte; normalization belongs to the
//! fingerprint extractor.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
    System,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    BaseSim,
    PersonaSim,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Human => "human",
            Source::BaseSim => "base_sim",
            Source::PersonaSim => "persona_sim",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub index: Option<usize>,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>, index: usize) -> Self {
        Turn {
            role,
            text: text.into(),
            index: Some(index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub task_id: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<String>,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Episode {
    /// Builds an episode from `(role, text)` pairs, numbering turns from 0.
    pub fn from_turns<I, S>(
        episode_id: impl Into<String>,
        task_id: impl Into<String>,
        source: Source,
        turns: I,
    ) -> Self
    where
        I: IntoIterator<Item = (Role, S)>,
        S: Into<String>,
    {
        Episode {
            episode_id: episode_id.into(),
            task_id: task_id.into(),
            source,
            persona_id: None,
            turns: turns
                .into_iter()
                .enumerate()
                .map(|(i, (role, text))| Turn::new(role, text, i))
                .collect(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn user_turn_count(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    /// False when a rollout aborted and flagged its partial transcript.
    pub fn is_flagged_unscorable(&self) -> bool {
        self.metadata.get("scorable").map(String::as_str) == Some("false")
    }
}

/// Texts of the user turns, in order.
pub fn user_turns(episode: &Episode) -> Vec<&str> {
    episode
        .turns
        .iter()
        .filter(|t| t.role == Role::User)
        .map(|t| t.text.as_str())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    IndexOrder { position: usize, expected: usize, found: usize },
    EmptyText { position: usize, role: Role },
    MissingPersonaId,
    NoUserTurns,
    EmptyEpisodeId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexOrder {
                position,
                expected,
                found,
            } => write!(
                f,
                "turn at position {position} has index {found}, expected {expected}"
            ),
            Violation::EmptyText { position, role } => {
                write!(f, "turn at position {position} ({role:?}) has empty text")
            }
            Violation::MissingPersonaId => f.write_str("persona_sim episode without persona_id"),
            Violation::NoUserTurns => f.write_str("episode has no user turns"),
            Violation::EmptyEpisodeId => f.write_str("episode_id is empty"),
        }
    }
}

/// Findings from [`validate_episode`]; empty means scorable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_episode(episode: &Episode) -> ValidationReport {
    let mut violations = Vec::new();
    if episode.episode_id.is_empty() {
        violations.push(Violation::EmptyEpisodeId);
    }
    for (position, turn) in episode.turns.iter().enumerate() {
        let found = turn.index.unwrap_or(position);
        if found != position {
            violations.push(Violation::IndexOrder {
                position,
                expected: position,
                found,
            });
        }
        if turn.text.is_empty() && turn.role != Role::Tool {
            violations.push(Violation::EmptyText {
                position,
                role: turn.role,
            });
        }
    }
    if episode.source == Source::PersonaSim && episode.persona_id.is_none() {
        violations.push(Violation::MissingPersonaId);
    }
    if episode.user_turn_count() == 0 {
        violations.push(Violation::NoUserTurns);
    }
    ValidationReport { violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub episodes: Vec<Episode>,
    pub split: Split,
}

impl Corpus {
    pub fn new(episodes: Vec<Episode>, split: Split) -> Result<Self, TranscriptError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, e) in episodes.iter().enumerate() {
            if let Some(first) = seen.insert(e.episode_id.as_str(), i) {
                return Err(TranscriptError::DuplicateId {
                    episode_id: e.episode_id.clone(),
                    first_line: first + 1,
                    second_line: i + 1,
                });
            }
        }
        Ok(Corpus { episodes, split })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read transcripts {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate episode_id {episode_id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        episode_id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("{} malformed record(s): {}", .0.len(), join_line_errors(.0))]
    Malformed(Vec<LineError>),
}

fn join_line_errors(errors: &[LineError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Parses a line-delimited transcript document. Blank lines are skipped;
/// every malformed line is reported with its 1-based line number.
pub fn parse_corpus(text: &str, split: Split) -> Result<Corpus, TranscriptError> {
    let mut episodes = Vec::new();
    let mut lines_of = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Episode>(line) {
            Ok(mut episode) => {
                for (pos, turn) in episode.turns.iter_mut().enumerate() {
                    turn.index.get_or_insert(pos);
                }
                episodes.push(episode);
                lines_of.push(line_no);
            }
            Err(e) => errors.push(LineError {
                line: line_no,
                message: e.to_string(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(TranscriptError::Malformed(errors));
    }
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (e, &line) in episodes.iter().zip(&lines_of) {
        if let Some(first) = seen.insert(e.episode_id.clone(), line) {
            return Err(TranscriptError::DuplicateId {
                episode_id: e.episode_id.clone(),
                first_line: first,
                second_line: line,
            });
        }
    }
    Ok(Corpus { episodes, split })
}

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, TranscriptError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, split)
}

pub fn episode_to_line(episode: &Episode) -> String {
    serde_json::to_string(episode).expect("episode serializes")
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for e in &corpus.episodes {
        out.push_str(&episode_to_line(e));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
    let path = path.as_ref();
    fs::write(path, corpus_to_string(corpus)).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Appends episodes to a transcript file, creating it if needed.
pub fn append_episodes(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<(), TranscriptError> {
    let path = path.as_ref();
    let io_err = |source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut buf = String::new();
    for e in episodes {
        buf.push_str(&episode_to_line(e));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io_err)
}
