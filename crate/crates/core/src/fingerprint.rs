//! Nineteen-feature behavioral fingerprint computed from user turns only.
//!
//! Feature order is a public contract: the discriminator, coverage and Dice
//! metrics all index by position.
//!
//! | idx | feature                      | dim |
//! |-----|------------------------------|-----|
//! | 0   | words_per_turn               | D1  |
//! | 1   | short_utterance_rate         | D1  |
//! | 2   | politeness_rate              | D1  |
//! | 3   | formality_rate               | D1  |
//! | 4   | acknowledgment_rate          | D1  |
//! | 5   | verbosity_cv                 | D1  |
//! | 6   | repetition_rate              | D1  |
//! | 7   | identity_confusion_rate      | D1  |
//! | 8   | front_loading_ratio          | D2  |
//! | 9   | identifiers_per_turn         | D2  |
//! | 10  | opening_length               | D2  |
//! | 11  | uncertainty_rate             | D3  |
//! | 12  | certainty_rate               | D3  |
//! | 13  | pushback_rate                | D3  |
//! | 14  | clarification_question_rate  | D3  |
//! | 15  | info_seeking_rate            | D3  |
//! | 16  | emotional_expression_rate    | D4  |
//! | 17  | accusatory_rate              | D4  |
//! | 18  | strategy_pivot_rate          | D4  |

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::{user_turns, Corpus, Episode};

pub const N_FEATURES: usize = 19;

pub type FeatureVector = [f64; N_FEATURES];

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "words_per_turn",
    "short_utterance_rate",
    "politeness_rate",
    "formality_rate",
    "acknowledgment_rate",
    "verbosity_cv",
    "repetition_rate",
    "identity_confusion_rate",
    "front_loading_ratio",
    "identifiers_per_turn",
    "opening_length",
    "uncertainty_rate",
    "certainty_rate",
    "pushback_rate",
    "clarification_question_rate",
    "info_seeking_rate",
    "emotional_expression_rate",
    "accusatory_rate",
    "strategy_pivot_rate",
];

/// Indices of the features bounded to [0, 1]: every rate plus
/// front_loading_ratio. The other four (words_per_turn, verbosity_cv,
/// identifiers_per_turn, opening_length) are only nonnegative.
pub const BOUNDED_FEATURES: [usize; 15] = [1, 2, 3, 4, 6, 7, 8, 11, 12, 13, 14, 15, 16, 17, 18];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    D1,
    D2,
    D3,
    D4,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::D1, Dimension::D2, Dimension::D3, Dimension::D4];

    pub fn range(self) -> Range<usize> {
        match self {
            Dimension::D1 => 0..8,
            Dimension::D2 => 8..11,
            Dimension::D3 => 11..16,
            Dimension::D4 => 16..19,
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        &FEATURE_NAMES[self.range()]
    }
}

/// The marker families a lexicon file must provide.
pub const FAMILIES: [&str; 13] = [
    "politeness",
    "formality",
    "acknowledgment",
    "identity_confusion",
    "uncertainty",
    "certainty",
    "pushback",
    "clarification",
    "info_seeking",
    "emotional",
    "accusatory",
    "pivot",
    "identifiers",
];

// Presence-rate features and the family each one reads.
const MARKER_FEATURES: [(usize, &str); 12] = [
    (2, "politeness"),
    (3, "formality"),
    (4, "acknowledgment"),
    (7, "identity_confusion"),
    (11, "uncertainty"),
    (12, "certainty"),
    (13, "pushback"),
    (14, "clarification"),
    (15, "info_seeking"),
    (16, "emotional"),
    (17, "accusatory"),
    (18, "pivot"),
];

pub const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.toml");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon is not valid TOML: {0}")]
    Parse(String),
    #[error("lexicon is missing marker families: {}", .0.join(", "))]
    MissingFamilies(Vec<String>),
    #[error("pattern {pattern:?} in family {family:?} does not compile: {message}")]
    BadPattern {
        family: String,
        pattern: String,
        message: String,
    },
}

#[derive(Debug, Deserialize)]
struct LexiconFile {
    families: BTreeMap<String, Vec<String>>,
}

/// One marker family, compiled. `combined` is the leftmost-first alternation
/// of all patterns and is what match counting uses.
#[derive(Debug, Clone)]
pub struct MarkerFamily {
    pub name: String,
    pub patterns: Vec<String>,
    combined: Option<Regex>,
}

impl MarkerFamily {
    pub fn is_match(&self, text: &str) -> bool {
        self.combined.as_ref().is_some_and(|r| r.is_match(text))
    }

    pub fn count_matches(&self, text: &str) -> usize {
        self.combined
            .as_ref()
            .map_or(0, |r| r.find_iter(text).count())
    }
}

#[derive(Debug, Clone)]
pub struct LexiconSet {
    families: BTreeMap<String, MarkerFamily>,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Wraps a lexicon pattern in case-insensitive matching with half word
/// boundaries on the sides that start/end with a word character.
pub fn bounded_pattern(pattern: &str) -> String {
    let start = pattern.chars().next().is_some_and(is_word_char);
    let end = pattern.chars().last().is_some_and(is_word_char);
    format!(
        "{}(?:{}){}",
        if start { r"\b{start-half}" } else { "" },
        pattern,
        if end { r"\b{end-half}" } else { "" }
    )
}

impl LexiconSet {
    pub fn from_families(
        families: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, LexiconError> {
        let missing: Vec<String> = FAMILIES
            .iter()
            .filter(|f| !families.contains_key(**f))
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(LexiconError::MissingFamilies(missing));
        }
        let mut compiled = BTreeMap::new();
        for (name, patterns) in families {
            for p in &patterns {
                Regex::new(&format!("(?i){}", bounded_pattern(p))).map_err(|e| {
                    LexiconError::BadPattern {
                        family: name.clone(),
                        pattern: p.clone(),
                        message: e.to_string(),
                    }
                })?;
            }
            let combined = if patterns.is_empty() {
                None
            } else {
                let alternation = patterns
                    .iter()
                    .map(|p| bounded_pattern(p))
                    .collect::<Vec<_>>()
                    .join("|");
                Some(
                    Regex::new(&format!("(?i){alternation}")).map_err(|e| {
                        LexiconError::BadPattern {
                            family: name.clone(),
                            pattern: alternation.clone(),
                            message: e.to_string(),
                        }
                    })?,
                )
            };
            compiled.insert(
                name.clone(),
                MarkerFamily {
                    name,
                    patterns,
                    combined,
                },
            );
        }
        Ok(LexiconSet { families: compiled })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile =
            toml::from_str(text).map_err(|e| LexiconError::Parse(e.to_string()))?;
        Self::from_families(file.families)
    }

    /// The lexicon shipped with the crate.
    pub fn default_set() -> Self {
        Self::from_toml_str(DEFAULT_LEXICON).expect("shipped lexicon is valid")
    }

    pub fn family(&self, name: &str) -> &MarkerFamily {
        self.families
            .get(name)
            .unwrap_or_else(|| panic!("family {name} validated at load"))
    }

    pub fn family_names(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.families.len()
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
    }
}

pub fn load_lexicons(path: impl AsRef<Path>) -> Result<LexiconSet, LexiconError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LexiconSet::from_toml_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Turns with at most this many words count as short.
    pub short_utterance_threshold: usize,
    /// Jaccard overlap at or above which a turn counts as a repeat.
    pub repetition_overlap_threshold: f64,
    /// Number of leading user turns treated as "the first turn" for
    /// front-loading.
    pub front_load_turn_boundary: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            short_utterance_threshold: 3,
            repetition_overlap_threshold: 0.6,
            front_load_turn_boundary: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FingerprintError {
    #[error("episode {0} has no user turns and cannot be scored")]
    Unscorable(String),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        if self.short_utterance_threshold < 1 {
            return Err(FingerprintError::InvalidConfig(
                "short_utterance_threshold must be >= 1".into(),
            ));
        }
        let t = self.repetition_overlap_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(FingerprintError::InvalidConfig(format!(
                "repetition_overlap_threshold {t} outside (0, 1]"
            )));
        }
        if self.front_load_turn_boundary < 1 {
            return Err(FingerprintError::InvalidConfig(
                "front_load_turn_boundary must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint(pub FeatureVector);

impl Fingerprint {
    pub fn values(&self) -> &FeatureVector {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.0[i])
    }
}

pub fn dimension_slice(fingerprint: &Fingerprint, dim: Dimension) -> &[f64] {
    &fingerprint.0[dim.range()]
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased whitespace tokens with surrounding punctuation trimmed.
pub fn normalized_tokens(text: &str) -> HashSet<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    inter / union
}

pub fn extract_fingerprint(
    episode: &Episode,
    lexicons: &LexiconSet,
    config: &FeatureConfig,
) -> Result<Fingerprint, FingerprintError> {
    let turns = user_turns(episode);
    if turns.is_empty() {
        return Err(FingerprintError::Unscorable(episode.episode_id.clone()));
    }
    let n = turns.len() as f64;
    let mut f = [0.0; N_FEATURES];

    let counts: Vec<f64> = turns.iter().map(|t| word_count(t) as f64).collect();
    let mean = counts.iter().sum::<f64>() / n;
    f[0] = mean;
    f[1] = counts
        .iter()
        .filter(|&&c| c <= config.short_utterance_threshold as f64)
        .count() as f64
        / n;
    f[5] = if mean > 0.0 && turns.len() > 1 {
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    } else {
        0.0
    };

    let token_sets: Vec<HashSet<String>> = turns.iter().map(|t| normalized_tokens(t)).collect();
    let repeats = (1..token_sets.len())
        .filter(|&i| {
            token_sets[..i]
                .iter()
                .any(|earlier| jaccard(&token_sets[i], earlier) >= config.repetition_overlap_threshold)
        })
        .count();
    f[6] = repeats as f64 / n;

    let presence = |family: &str| {
        let fam = lexicons.family(family);
        turns.iter().filter(|t| fam.is_match(t)).count() as f64 / n
    };
    for (idx, family) in MARKER_FEATURES {
        f[idx] = presence(family);
    }

    let ids = lexicons.family("identifiers");
    let id_counts: Vec<usize> = turns.iter().map(|t| ids.count_matches(t)).collect();
    let total_ids: usize = id_counts.iter().sum();
    let front = config.front_load_turn_boundary.min(id_counts.len());
    let front_ids: usize = id_counts[..front].iter().sum();
    f[8] = if total_ids == 0 {
        1.0
    } else {
        front_ids as f64 / total_ids as f64
    };
    f[9] = total_ids as f64 / n;
    f[10] = counts[0];

    Ok(Fingerprint(f))
}

/// Fingerprints for a corpus. Unscorable episodes (no user turns, or
/// flagged by an aborted rollout) are listed in `skipped`, never dropped
/// silently.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FingerprintMatrix {
    pub episode_ids: Vec<String>,
    pub rows: Vec<FeatureVector>,
    pub skipped: Vec<String>,
}

impl FingerprintMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn fingerprint_matrix(
    corpus: &Corpus,
    lexicons: &LexiconSet,
    config: &FeatureConfig,
) -> FingerprintMatrix {
    fingerprint_episodes(&corpus.episodes, lexicons, config)
}

pub fn fingerprint_episodes(
    episodes: &[Episode],
    lexicons: &LexiconSet,
    config: &FeatureConfig,
) -> FingerprintMatrix {
    let results: Vec<Option<Fingerprint>> = episodes
        .par_iter()
        .map(|e| {
            if e.is_flagged_unscorable() {
                None
            } else {
                extract_fingerprint(e, lexicons, config).ok()
            }
        })
        .collect();
    let mut out = FingerprintMatrix::default();
    for (e, r) in episodes.iter().zip(results) {
        match r {
            Some(fp) => {
                out.episode_ids.push(e.episode_id.clone());
                out.rows.push(fp.0);
            }
            None => out.skipped.push(e.episode_id.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{Role, Source};
    use proptest::prelude::*;
    use std::sync::LazyLock;

    static LEXICON: LazyLock<LexiconSet> = LazyLock::new(LexiconSet::default_set);

    fn single(text: &str) -> Episode {
        Episode::from_turns("e", "t", Source::Human, [(Role::User, text)])
    }

    fn users(texts: &[&str]) -> Episode {
        let mut turns = Vec::new();
        for t in texts {
            turns.push((Role::User, t.to_string()));
            turns.push((Role::Agent, "Sure, let me check that for you.".to_string()));
        }
        Episode::from_turns("e", "t", Source::Human, turns)
    }

    #[test]
    fn bounded_features_exclude_the_four_unbounded_ones() {
        let unbounded: Vec<usize> = (0..N_FEATURES)
            .filter(|i| !BOUNDED_FEATURES.contains(i))
            .collect();
        assert_eq!(unbounded, vec![0, 5, 9, 10]);
    }

    #[test]
    fn shipped_lexicon_has_all_families() {
        let lex = LexiconSet::default_set();
        assert_eq!(lex.len(), 13);
        for f in FAMILIES {
            assert!(lex.family_names().any(|n| n == f));
        }
    }

    #[test]
    fn missing_family_is_named() {
        let text = DEFAULT_LEXICON.replace("pushback = [", "pushback_x = [");
        let err = LexiconSet::from_toml_str(&text).unwrap_err();
        assert!(matches!(&err, LexiconError::MissingFamilies(v) if v == &["pushback".to_string()]));
        assert!(err.to_string().contains("pushback"));
    }

    #[test]
    fn malformed_pattern_is_named() {
        let text = DEFAULT_LEXICON.replace("\"moreover\",", "\"((\", \"moreover\",");
        let err = LexiconSet::from_toml_str(&text).unwrap_err();
        match err {
            LexiconError::BadPattern { family, pattern, .. } => {
                assert_eq!(family, "formality");
                assert_eq!(pattern, "((");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn boundaries_respect_word_edges() {
        let lex = LexiconSet::default_set();
        let polite = lex.family("politeness");
        assert!(polite.is_match("Please help"));
        assert!(!polite.is_match("I was pleased"));
        assert!(lex.family("certainty").is_match("I'm 100% sure"));
        assert!(lex.family("info_seeking").is_match("status?"));
        assert_eq!(lex.family("identifiers").count_matches("order #W1234567 and W7654321"), 2);
    }

    #[test]
    fn single_ok_turn() {
        let fp = extract_fingerprint(&single("ok"), &LexiconSet::default_set(), &FeatureConfig::default())
            .unwrap();
        let mut expected = [0.0; N_FEATURES];
        expected[0] = 1.0; // words_per_turn
        expected[1] = 1.0; // short_utterance_rate
        expected[4] = 1.0; // acknowledgment_rate
        expected[8] = 1.0; // front_loading_ratio, no identifiers
        expected[10] = 1.0; // opening_length
        assert_eq!(fp.0, expected);
    }

    #[test]
    fn identical_turns_repeat_and_are_polite() {
        let e = users(&["please check order W1234567", "please check order W1234567"]);
        let fp = extract_fingerprint(&e, &LexiconSet::default_set(), &FeatureConfig::default()).unwrap();
        assert_eq!(fp.get("repetition_rate"), Some(0.5));
        assert_eq!(fp.get("politeness_rate"), Some(1.0));
        assert_eq!(fp.get("identifiers_per_turn"), Some(1.0));
        assert_eq!(fp.get("front_loading_ratio"), Some(0.5));
        assert_eq!(fp.get("verbosity_cv"), Some(0.0));
    }

    #[test]
    fn agent_turns_are_ignored() {
        let e = users(&["hello there friend"]);
        let fp = extract_fingerprint(&e, &LexiconSet::default_set(), &FeatureConfig::default()).unwrap();
        // "let me check" lives only on the agent side.
        assert_eq!(fp.get("identity_confusion_rate"), Some(0.0));
    }

    #[test]
    fn zero_user_turns_is_unscorable() {
        let e = Episode::from_turns("x", "t", Source::BaseSim, [(Role::Agent, "hi")]);
        assert_eq!(
            extract_fingerprint(&e, &LexiconSet::default_set(), &FeatureConfig::default()),
            Err(FingerprintError::Unscorable("x".into()))
        );
    }

    #[test]
    fn slices_partition_the_vector() {
        let fp = Fingerprint(std::array::from_fn(|i| i as f64));
        assert_eq!(dimension_slice(&fp, Dimension::D2), &[8.0, 9.0, 10.0]);
        assert_eq!(
            Dimension::D2.feature_names(),
            &["front_loading_ratio", "identifiers_per_turn", "opening_length"]
        );
        let joined: Vec<f64> = Dimension::ALL
            .iter()
            .flat_map(|d| dimension_slice(&fp, *d).to_vec())
            .collect();
        assert_eq!(joined, fp.0.to_vec());
        let lens: Vec<usize> = Dimension::ALL.iter().map(|d| d.range().len()).collect();
        assert_eq!(lens, vec![8, 3, 5, 3]);
    }

    #[test]
    fn matrix_skips_agent_only_episodes() {
        use crate::transcript::Split;
        let mut a = single("hi there");
        a.episode_id = "a".into();
        let mut b = Episode::from_turns("b", "t", Source::BaseSim, [(Role::Agent, "hi")]);
        b.episode_id = "b".into();
        let mut c = single("ok thanks");
        c.episode_id = "c".into();
        let corpus = Corpus::new(vec![a.clone(), b, c.clone()], Split::Train).unwrap();
        let lex = LexiconSet::default_set();
        let cfg = FeatureConfig::default();
        let m = fingerprint_matrix(&corpus, &lex, &cfg);
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.skipped, vec!["b".to_string()]);
        assert_eq!(m.rows[0], extract_fingerprint(&a, &lex, &cfg).unwrap().0);
        assert_eq!(m.rows[1], extract_fingerprint(&c, &lex, &cfg).unwrap().0);
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::default().validate().is_ok());
        let bad = FeatureConfig {
            repetition_overlap_threshold: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn rates_bounded_and_deterministic(
            texts in proptest::collection::vec("[a-zA-Z0-9 ?!.,'#@]{0,60}", 1..8)
        ) {
            let e = users(&texts.iter().map(String::as_str).collect::<Vec<_>>());
            let lex = &*LEXICON;
            let cfg = FeatureConfig::default();
            let fp = extract_fingerprint(&e, lex, &cfg).unwrap();
            for i in BOUNDED_FEATURES {
                prop_assert!((0.0..=1.0).contains(&fp.0[i]), "{} = {}", FEATURE_NAMES[i], fp.0[i]);
            }
            for v in fp.0 {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            prop_assert_eq!(fp, extract_fingerprint(&e, lex, &cfg).unwrap());
        }
    }
}
