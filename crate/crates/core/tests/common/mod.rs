//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use regex::Regex;
use simuser_core::fingerprint::{FeatureVector, DEFAULT_LEXICON, N_FEATURES};
use simuser_core::transcript::{Episode, Role, Source};

/// Presence feature index to lexicon family.
pub const PRESENCE: [(usize, &str); 12] = [
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

fn word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn is_literal(p: &str) -> bool {
    p.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, ' ' | '\'' | '%'))
}

/// One lexicon pattern, matched either by a byte scan (plain phrases) or
/// by its own regex.
enum Matcher {
    Literal { text: String, left: bool, right: bool },
    Pattern(Regex),
}

impl Matcher {
    fn new(p: &str) -> Self {
        let left = p.as_bytes().first().is_some_and(|&b| word_byte(b));
        let right = p.as_bytes().last().is_some_and(|&b| word_byte(b));
        if is_literal(p) {
            Matcher::Literal { text: p.to_ascii_lowercase(), left, right }
        } else {
            let src = format!(
                "(?i){}(?:{}){}",
                if left { r"\b{start-half}" } else { "" },
                p,
                if right { r"\b{end-half}" } else { "" }
            );
            Matcher::Pattern(Regex::new(&src).expect("lexicon pattern compiles"))
        }
    }

    /// Whether the pattern occurs anywhere in an ASCII text.
    fn occurs(&self, text: &str) -> bool {
        match self {
            Matcher::Pattern(r) => r.is_match(text),
            Matcher::Literal { text: pat, left, right } => {
                let hay = text.to_ascii_lowercase();
                let (h, p) = (hay.as_bytes(), pat.as_bytes());
                (0..=h.len().saturating_sub(p.len())).any(|i| {
                    h.len() >= p.len()
                        && &h[i..i + p.len()] == p
                        && (!left || i == 0 || !word_byte(h[i - 1]))
                        && (!right || i + p.len() == h.len() || !word_byte(h[i + p.len()]))
                })
            }
        }
    }

    fn find_at(&self, text: &str, start: usize) -> Option<(usize, usize)> {
        match self {
            Matcher::Pattern(r) => r.find_at(text, start).map(|m| (m.start(), m.end())),
            Matcher::Literal { .. } => unreachable!("identifier patterns are regexes"),
        }
    }
}

pub struct NaiveLexicon {
    families: BTreeMap<String, Vec<Matcher>>,
}

impl NaiveLexicon {
    pub fn default_set() -> Self {
        let doc: toml::Value = toml::from_str(DEFAULT_LEXICON).expect("lexicon toml");
        let families = doc["families"]
            .as_table()
            .expect("families table")
            .iter()
            .map(|(name, list)| {
                let ms = list
                    .as_array()
                    .expect("pattern list")
                    .iter()
                    .map(|p| Matcher::new(p.as_str().expect("pattern string")))
                    .collect();
                (name.clone(), ms)
            })
            .collect();
        NaiveLexicon { families }
    }

    fn present(&self, family: &str, text: &str) -> bool {
        self.families[family].iter().any(|m| m.occurs(text))
    }

    /// Non-overlapping identifier count: at each step the earliest match
    /// over all patterns wins, ties going to the earlier pattern.
    fn count_identifiers(&self, text: &str) -> usize {
        let pats = &self.families["identifiers"];
        let (mut pos, mut count) = (0, 0);
        while pos <= text.len() {
            let mut best: Option<(usize, usize)> = None;
            for m in pats {
                if let Some((s, e)) = m.find_at(text, pos) {
                    if best.is_none_or(|(bs, _)| s < bs) {
                        best = Some((s, e));
                    }
                }
            }
            match best {
                Some((s, e)) => {
                    count += 1;
                    pos = if e > s { e } else { e + 1 };
                }
                None => break,
            }
        }
        count
    }
}

fn tokens(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    for w in text.split_whitespace() {
        let chars: Vec<char> = w.chars().collect();
        let (mut a, mut b) = (0, chars.len());
        while a < b && !chars[a].is_alphanumeric() {
            a += 1;
        }
        while b > a && !chars[b - 1].is_alphanumeric() {
            b -= 1;
        }
        let t: String = chars[a..b].iter().collect::<String>().to_lowercase();
        if !t.is_empty() {
            out.insert(t);
        }
    }
    out
}

/// Direct per-feature computation with default thresholds
/// (short <= 3 words, repeat Jaccard >= 0.6, first turn only for front-loading).
pub fn naive_fingerprint(episode: &Episode, lex: &NaiveLexicon) -> FeatureVector {
    let turns: Vec<&str> = episode
        .turns
        .iter()
        .filter(|t| t.role == Role::User)
        .map(|t| t.text.as_str())
        .collect();
    assert!(!turns.is_empty());
    let n = turns.len() as f64;
    let mut f = [0.0; N_FEATURES];

    let words: Vec<f64> = turns.iter().map(|t| t.split_whitespace().count() as f64).collect();
    let mut total_words = 0.0;
    let mut short = 0.0;
    for &w in &words {
        total_words += w;
        if w <= 3.0 {
            short += 1.0;
        }
    }
    let mean = total_words / n;
    f[0] = mean;
    f[1] = short / n;
    if turns.len() > 1 && mean > 0.0 {
        let mut ss = 0.0;
        for &w in &words {
            ss += (w - mean) * (w - mean);
        }
        f[5] = (ss / n).sqrt() / mean;
    }

    let sets: Vec<HashSet<String>> = turns.iter().map(|t| tokens(t)).collect();
    let mut repeats = 0.0;
    for i in 1..sets.len() {
        let mut hit = false;
        for j in 0..i {
            let inter = sets[i].iter().filter(|t| sets[j].contains(*t)).count() as f64;
            let union = sets[i].len() as f64 + sets[j].len() as f64 - inter;
            if union > 0.0 && inter / union >= 0.6 {
                hit = true;
            }
        }
        if hit {
            repeats += 1.0;
        }
    }
    f[6] = repeats / n;

    for (idx, fam) in PRESENCE {
        let mut hits = 0.0;
        for t in &turns {
            if lex.present(fam, t) {
                hits += 1.0;
            }
        }
        f[idx] = hits / n;
    }

    let ids: Vec<usize> = turns.iter().map(|t| lex.count_identifiers(t)).collect();
    let total: usize = ids.iter().sum();
    f[8] = if total == 0 { 1.0 } else { ids[0] as f64 / total as f64 };
    f[9] = total as f64 / n;
    f[10] = words[0];
    f
}

fn episode(id: &str, turns: &[(Role, &str)]) -> Episode {
    Episode::from_turns(id, "fixture", Source::Human, turns.iter().map(|(r, t)| (*r, t.to_string())))
}

/// Twenty hand-written episodes exercising boundaries, case, identifiers
/// and repetition.
pub fn fixture() -> Vec<Episode> {
    use Role::{Agent as A, User as U};
    vec![
        episode("f01", &[(U, "Hi, I need to return order #W1234567 please."), (A, "Sure."), (U, "Thanks!")]),
        episode("f02", &[(U, "ok"), (A, "What else?"), (U, "ok"), (A, "Anything?"), (U, "OK.")]),
        episode("f03", &[(U, "I was pleased with the okapi book, no markers here")]),
        episode(
            "f04",
            &[
                (A, "Hello, how can I help?"),
                (U, "My email is mia.chen@example.com and zip 90210"),
                (U, "The user id is mia_chen_4821, order W7654321 and W12345678"),
            ],
        ),
        episode(
            "f05",
            &[
                (U, "That's not right. I already told you twice!"),
                (A, "Apologies."),
                (U, "THAT'S WRONG, you're not listening"),
                (U, "ugh this is ridiculous and unacceptable"),
            ],
        ),
        episode("f06", &[(U, "What do you mean? Can you clarify the refund policy?"), (U, "huh")]),
        episode("f07", &[(U, "Moreover, regarding my order, I would like to exchange it. Sincerely.")]),
        episode(
            "f08",
            &[
                (U, "I want to cancel my flight"),
                (U, "i want to cancel my flight!!"),
                (U, "I WANT TO CANCEL MY FLIGHT"),
                (U, "cancel it now"),
            ],
        ),
        episode("f09", &[(U, ""), (A, "Hello?"), (U, "   ")]),
        episode("f10", &[(U, "I am 100% certain. Definitely, absolutely for sure!"), (U, "positive, exactly")]),
        episode(
            "f11",
            &[
                (U, "Let me check how may I help you today"),
                (U, "Is there anything else I can do for you? Thank you for contacting us."),
            ],
        ),
        episode("f12", &[(U, "maybe it was 2024-03-15 or 3/15/24, i'm not sure, idk"), (U, "i guess kind of")]),
        episode(
            "f13",
            &[
                (U, "hello"),
                (U, "the booking code is abc1234 and also xy123"),
                (U, "dates 12/01/2023 and 2023-12-01 and zip 12345"),
            ],
        ),
        episode("f14", &[(U, "Actually, scratch that. How about a different color instead?"), (U, "never mind")]),
        episode("f15", &[(U, "You people are useless, this is a scam and the worst service"), (U, "garbage")]),
        episode(
            "f16",
            &[(U, "k"), (U, "kk thx"), (U, "ty"), (U, "sure thing, sounds good"), (U, "alright, got it, noted")],
        ),
        episode(
            "f17",
            &[
                (U, "Where is my package? When will it arrive? Do you have tracking?"),
                (U, "how do i check that"),
                (U, "what's the status"),
            ],
        ),
        episode(
            "f18",
            &[(U, "I'm so frustrated and annoyed, seriously fed up"), (U, "sigh... argh"), (U, "wtf")],
        ),
        episode(
            "f19",
            &[
                (U, "no no no, not what I asked"),
                (U, "that is incorrect, you misunderstood"),
                (U, "no no no, not what I asked"),
            ],
        ),
        episode(
            "f20",
            &[
                (U, "a@b.co #W0000001 W0000002 W0000003"),
                (U, "orders W0000004"),
                (U, "emails x_y@z.org q@w.io 55555 1/2/2025"),
            ],
        ),
    ]
}

const VOCAB: &[&str] = &[
    "order", "refund", "the", "my", "I", "you", "flight", "please", "PLEASE", "pleased", "thanks", "ok", "okay",
    "okapi", "k", "huh?", "What", "is", "there", "maybe", "definitely", "100%", "useless", "ugh", "actually",
    "instead", "however,", "W1234567", "#W7654321", "mia_chen_4821", "a@b.com", "2024-01-02", "3/4/25", "90210",
    "ab123", "xyz9876", "not", "sure", "right", "that's", "wrong", "no", "no", "?", "!", "...", "sort", "of", "how",
    "about", "let", "me", "check", "can", "clarify", "frustrated", "seriously", "garbage",
];

/// Random episode with 1..=8 user turns drawn from a marker-heavy vocabulary.
pub fn random_episode<R: Rng>(id: usize, rng: &mut R) -> Episode {
    let mut turns = Vec::new();
    for _ in 0..rng.random_range(1..=8) {
        if rng.random_bool(0.4) {
            turns.push((Role::Agent, "How can I help?".to_string()));
        }
        let words: Vec<&str> = (0..rng.random_range(0..=12)).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
        turns.push((Role::User, words.join(" ")));
    }
    Episode::from_turns(format!("r{id}"), "random", Source::BaseSim, turns)
}
