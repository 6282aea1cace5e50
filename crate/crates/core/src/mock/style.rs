//! Parametric user-utterance generator shared by the synthetic corpora and
//! the mock user simulator.

use rand::seq::IndexedRandom;
use rand::Rng;
use regex::Regex;
use std::sync::LazyLock;

/// Knobs of a synthetic user. Probabilities are per turn unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStyle {
    /// Chance a turn carries no filler sentence at all.
    pub brevity: f64,
    pub politeness: f64,
    pub formality: f64,
    pub acknowledgment: f64,
    pub hedging: f64,
    pub certainty: f64,
    pub pushback: f64,
    pub clarification: f64,
    pub questions: f64,
    pub emotion: f64,
    pub accusation: f64,
    pub pivoting: f64,
    /// Per-word chance of a swapped-letter typo.
    pub typos: f64,
    pub lowercase: bool,
    /// All identifiers go into the opening message.
    pub front_load: bool,
    /// Chance of repeating the previous message almost verbatim.
    pub repetition: f64,
    /// Chance of an agent-style phrase leaking into a user turn.
    pub role_slip: f64,
    /// Inclusive bounds on user turns.
    pub min_turns: usize,
    pub max_turns: usize,
}

impl UserStyle {
    /// A polite, verbose, front-loading assistant-like user.
    pub fn base_simulator() -> Self {
        UserStyle {
            brevity: 0.03,
            politeness: 0.85,
            formality: 0.55,
            acknowledgment: 0.4,
            hedging: 0.02,
            certainty: 0.12,
            pushback: 0.0,
            clarification: 0.02,
            questions: 0.25,
            emotion: 0.01,
            accusation: 0.0,
            pivoting: 0.02,
            typos: 0.0,
            lowercase: false,
            front_load: true,
            repetition: 0.0,
            role_slip: 0.06,
            min_turns: 3,
            max_turns: 5,
        }
    }

    /// A draw from the synthetic human population.
    pub fn sample_human<R: Rng>(rng: &mut R) -> Self {
        let min_turns = rng.random_range(2..=4);
        UserStyle {
            brevity: rng.random_range(0.25..0.9),
            politeness: rng.random_range(0.0..0.5),
            formality: rng.random_range(0.0..0.12),
            acknowledgment: rng.random_range(0.1..0.6),
            hedging: rng.random_range(0.0..0.4),
            certainty: rng.random_range(0.0..0.2),
            pushback: rng.random_range(0.0..0.3),
            clarification: rng.random_range(0.0..0.25),
            questions: rng.random_range(0.1..0.5),
            emotion: rng.random_range(0.0..0.4),
            accusation: rng.random_range(0.0..0.15),
            pivoting: rng.random_range(0.0..0.2),
            typos: rng.random_range(0.0..0.08),
            lowercase: rng.random_bool(0.5),
            front_load: rng.random_bool(0.3),
            repetition: rng.random_range(0.0..0.15),
            role_slip: 0.0,
            min_turns,
            max_turns: min_turns + rng.random_range(1..=5),
        }
    }

    /// Shifts the base simulator toward each named trait. Unknown names are
    /// ignored.
    pub fn with_traits<'a>(traits: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = Self::base_simulator();
        for t in traits {
            s.apply_trait(t);
        }
        s
    }

    pub fn apply_trait(&mut self, name: &str) {
        let name = name.to_lowercase();
        let has = |k: &str| name.contains(k);
        if has("terse") {
            self.brevity = 0.8;
            self.politeness = 0.2;
            self.formality = 0.05;
        }
        if has("skeptic") {
            self.pushback = 0.3;
            self.clarification = 0.25;
            self.questions = (self.questions + 0.2).min(1.0);
            self.role_slip = 0.0;
        }
        if has("frustrat") {
            self.emotion = 0.4;
            self.accusation = 0.12;
            self.politeness = self.politeness.min(0.1);
        }
        if has("ambig") {
            self.hedging = 0.4;
            self.front_load = false;
            self.pivoting = 0.15;
        }
        if has("burst") {
            self.repetition = 0.15;
            self.brevity = (self.brevity + 0.3).min(0.95);
            self.max_turns += 2;
        }
        if has("typo") {
            self.typos = 0.06;
            self.lowercase = true;
        }
        if has("casual") {
            self.lowercase = true;
            self.formality = 0.0;
            self.acknowledgment = 0.5;
            self.role_slip = 0.0;
        }
        if has("impatien") {
            self.emotion = (self.emotion + 0.15).min(1.0);
            self.pushback = (self.pushback + 0.1).min(1.0);
            self.max_turns = self.max_turns.saturating_sub(1).max(self.min_turns);
        }
        if has("forget") {
            self.front_load = false;
            self.pivoting = (self.pivoting + 0.2).min(1.0);
            self.hedging = (self.hedging + 0.2).min(1.0);
        }
    }
}

/// Identifiers a user may disclose, in the order they appear.
pub fn identifiers(context: &str) -> Vec<String> {
    static ID: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"#W\d{7}\b|\b[a-z0-9.]+@[a-z0-9.-]+\.[a-z]{2,}\b|\b[a-z]+_[a-z]+_\d{3,5}\b").unwrap()
    });
    let mut out: Vec<String> = Vec::new();
    for m in ID.find_iter(context) {
        if !out.iter().any(|x| x == m.as_str()) {
            out.push(m.as_str().to_string());
        }
    }
    out
}

/// The first known intent word in the context.
pub fn intent(context: &str) -> &'static str {
    let lower = context.to_lowercase();
    ["exchange", "return", "cancel", "address", "refund", "status"]
        .into_iter()
        .find(|w| lower.contains(w))
        .unwrap_or("order")
}

const OPENINGS_LONG: [&str; 4] = [
    "I would like to get some help with my {intent} request for an order I placed recently.",
    "I am reaching out because I need assistance with a {intent} on one of my orders.",
    "I hope you are doing well, I need support with a {intent} for a recent purchase.",
    "I am writing to ask for help with the {intent} of an item from my last order.",
];
const OPENINGS_SHORT: [&str; 5] = ["need help with a {intent}", "{intent} pls", "hi, {intent}", "want to do a {intent}", "{intent} on my order"];
const FILLER: [&str; 8] = [
    "The package arrived last Tuesday and the item does not match what I expected.",
    "I have been a customer for a few years and never had this happen.",
    "It is the blue one from the set, the larger size.",
    "I tried the website first but the button did not work for me.",
    "My partner ordered it for me so I do not have all the details handy.",
    "It would be great if this could be sorted out this week.",
    "The box was a bit damaged when it came in.",
    "I still have the receipt and the original packaging.",
];
const POLITE: [&str; 5] = ["please", "thank you", "thanks", "I appreciate it", "would you mind checking"];
const FORMAL: [&str; 4] = ["Furthermore,", "Additionally,", "However,", "Regarding the order,"];
const ACK: [&str; 6] = ["ok", "okay", "got it", "alright", "sounds good", "cool"];
const HEDGE: [&str; 5] = ["maybe", "I think", "not sure but", "probably", "I guess"];
const CERTAIN: [&str; 4] = ["definitely", "absolutely", "for sure", "of course"];
const PUSHBACK: [&str; 4] = ["that's not right", "I already told you", "that's wrong", "not what I asked"];
const CLARIFY: [&str; 4] = ["what do you mean", "can you clarify", "huh", "I don't understand"];
const QUESTION: [&str; 4] = ["when will this be done?", "is there a fee?", "how long does it take?", "what's the next step?"];
const EMOTION: [&str; 5] = ["this is frustrating", "ugh", "seriously", "I'm so tired of this", "honestly annoyed"];
const ACCUSE: [&str; 4] = ["this is useless", "unacceptable", "terrible service", "you people never get it right"];
const PIVOT: [&str; 4] = ["actually", "never mind that", "on second thought", "how about"];
const SLIP: [&str; 3] = ["let me check", "how can I help", "is there anything else I can"];
const CLOSING: [&str; 5] = ["ok thanks", "that's all", "great, bye", "thanks for the help", "fine"];

fn pick<R: Rng>(rng: &mut R, bank: &[&'static str]) -> &'static str {
    bank.choose(rng).copied().unwrap_or("")
}

fn typo_word<R: Rng>(word: &str, rng: &mut R) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 4 || !chars.iter().all(|c| c.is_ascii_alphabetic()) {
        return word.to_string();
    }
    let i = rng.random_range(1..chars.len() - 2);
    let mut c = chars;
    c.swap(i, i + 1);
    c.into_iter().collect()
}

/// Conversation state the generator needs for the next user turn.
#[derive(Debug, Clone, Default)]
pub struct TurnState<'a> {
    pub turn: usize,
    pub planned_turns: usize,
    pub context: &'a str,
    pub previous: Option<&'a str>,
    /// The agent asked for an order number or account detail.
    pub asked_for_details: bool,
}

/// One user message. The last planned turn ends with `stop_marker`.
pub fn utterance<R: Rng>(style: &UserStyle, state: &TurnState<'_>, stop_marker: &str, rng: &mut R) -> String {
    let last = state.turn + 1 >= state.planned_turns;
    if let Some(prev) = state.previous {
        if !last && state.turn > 0 && rng.random_bool(style.repetition.clamp(0.0, 1.0)) {
            return prev.to_string();
        }
    }
    let ids = identifiers(state.context);
    let verb = intent(state.context);
    let p = |rng: &mut R, x: f64| rng.random_bool(x.clamp(0.0, 1.0));
    let mut parts: Vec<String> = Vec::new();

    if state.turn == 0 {
        let bank: &[&str] = if p(rng, style.brevity) { &OPENINGS_SHORT } else { &OPENINGS_LONG };
        parts.push(pick(rng, bank).replace("{intent}", verb));
    } else if p(rng, style.acknowledgment) {
        parts.push(pick(rng, &ACK).to_string());
    }
    if state.turn > 0 && p(rng, style.pushback) {
        parts.push(pick(rng, &PUSHBACK).to_string());
    }
    if state.turn > 0 && p(rng, style.clarification) {
        parts.push(format!("{}?", pick(rng, &CLARIFY)));
    }
    if p(rng, style.formality) {
        parts.push(pick(rng, &FORMAL).to_string());
    }
    if !p(rng, style.brevity) {
        for _ in 0..rng.random_range(1..=2) {
            parts.push(pick(rng, &FILLER).to_string());
        }
    }
    if p(rng, style.hedging) {
        parts.push(format!("{} it was the wrong size", pick(rng, &HEDGE)));
    }
    if p(rng, style.certainty) {
        parts.push(format!("I {} want this fixed", pick(rng, &CERTAIN)));
    }
    if p(rng, style.emotion) {
        parts.push(pick(rng, &EMOTION).to_string());
    }
    if p(rng, style.accusation) {
        parts.push(pick(rng, &ACCUSE).to_string());
    }
    if state.turn > 0 && p(rng, style.pivoting) {
        parts.push(format!("{} can we do an exchange instead", pick(rng, &PIVOT)));
    }
    if p(rng, style.questions) {
        parts.push(pick(rng, &QUESTION).to_string());
    }
    if p(rng, style.politeness) {
        parts.push(pick(rng, &POLITE).to_string());
    }
    if p(rng, style.role_slip) {
        parts.push(format!("{} on my side", pick(rng, &SLIP)));
    }

    let mut text: String = parts
        .join(" ")
        .split(' ')
        .map(|w| if p(rng, style.typos) { typo_word(w, rng) } else { w.to_string() })
        .collect::<Vec<_>>()
        .join(" ");
    if style.lowercase {
        text = text.to_lowercase();
    }

    let disclose: Vec<&String> = if style.front_load {
        if state.turn == 0 { ids.iter().collect() } else { Vec::new() }
    } else if state.asked_for_details {
        ids.iter().collect()
    } else {
        ids.get(state.turn.wrapping_sub(1)).into_iter().collect()
    };
    for id in disclose {
        text.push_str(&format!(" {id}"));
    }
    if last {
        let close = pick(rng, &CLOSING);
        text = if text.trim().is_empty() { close.to_string() } else { format!("{} {close}", text.trim()) };
        text.push(' ');
        text.push_str(stop_marker);
    }
    let text = text.trim().to_string();
    if text.is_empty() {
        pick(rng, &ACK).to_string()
    } else {
        text
    }
}
