use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::style::{utterance, TurnState, UserStyle};
use crate::rollout::{EnvScript, ScriptState, TaskSpec, Transition};
use crate::transcript::{Episode, Role, Source, Turn};

pub const DEMO_DOMAIN: &str = "retail";
pub const DEMO_SCRIPT: &str = "retail_support";
pub const DEMO_AGENT_PROMPT: &str = "You are a customer support agent for an online store. To act on \
an order, write a line starting with TOOL: followed by the action, for example TOOL: find_order #W1234567. \
Be accurate and concise.";

const FIRST: [&str; 12] = ["ana", "ben", "chen", "dara", "eli", "femi", "gia", "hugo", "ines", "jon", "kai", "lena"];
const LAST: [&str; 10] = ["ruiz", "park", "okafor", "novak", "silva", "khan", "meyer", "tanaka", "jones", "haddad"];
const GOALS: [&str; 6] = [
    "return the desk lamp from order {order} because it flickers, and get the refund on the original card",
    "exchange the running shoes in order {order} for one size larger in the same color",
    "cancel order {order} because it was placed twice by mistake",
    "change the shipping address of order {order} to your new apartment",
    "find out the delivery status of order {order}, which is a week late",
    "return two of the three mugs in order {order} and keep the third",
];

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn scenario<R: Rng>(rng: &mut R) -> String {
    let first = *FIRST.choose(rng).unwrap();
    let last = *LAST.choose(rng).unwrap();
    let order = format!("#W{:07}", rng.random_range(0..10_000_000u32));
    let goal = GOALS.choose(rng).unwrap().replace("{order}", &order);
    format!(
        "You are {} {} (user id {first}_{last}_{}, email {first}.{last}@example.com). You want to {goal}.",
        title(first),
        title(last),
        rng.random_range(1000..10000)
    )
}

/// `n` retail tasks sharing one environment script.
pub fn demo_tasks(n: usize, seed: u64) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| TaskSpec {
            task_id: format!("retail_{i:03}"),
            domain: DEMO_DOMAIN.into(),
            user_context: scenario(&mut rng),
            agent_system_prompt: DEMO_AGENT_PROMPT.into(),
            environment_script: DEMO_SCRIPT.into(),
            success_criteria: "The request in the scenario is carried out.".into(),
        })
        .collect()
}

pub fn demo_env_script() -> EnvScript {
    let t = |pattern: &str, response: &str, next: Option<&str>| Transition {
        pattern: pattern.into(),
        response: response.into(),
        next: next.map(str::to_string),
        done: false,
    };
    let state = |transitions, fallback: &str| ScriptState { transitions, fallback: fallback.into() };
    EnvScript {
        id: DEMO_SCRIPT.into(),
        initial: "start".into(),
        states: BTreeMap::from([
            (
                "start".into(),
                state(vec![t("find_order", "Order located: delivered, eligible for changes", Some("found"))], "ERROR: no order selected"),
            ),
            (
                "found".into(),
                state(
                    vec![
                        t("process_request", "Request processed and confirmation sent", Some("resolved")),
                        t("find_order", "Order already located", None),
                    ],
                    "ERROR: unsupported action",
                ),
            ),
            ("resolved".into(), state(vec![], "Nothing further to process")),
        ]),
    }
}

const AGENT_LINES: [&str; 6] = [
    "Thanks for reaching out. Could you confirm the order number?",
    "I found the order. Let me take care of that for you.",
    "Understood. I have updated the request.",
    "Sorry about the trouble. The change is recorded now.",
    "You will receive a confirmation email shortly.",
    "Is there anything else I can help with?",
];

fn episode<R: Rng>(id: String, task_id: String, source: Source, style: &UserStyle, context: &str, rng: &mut R) -> Episode {
    let planned = rng.random_range(style.min_turns..=style.max_turns);
    let mut turns = Vec::new();
    let mut previous: Option<String> = None;
    let mut asked = false;
    for t in 0..planned {
        let state = TurnState {
            turn: t,
            planned_turns: planned,
            context,
            previous: previous.as_deref(),
            asked_for_details: asked,
        };
        let text = utterance(style, &state, "###STOP###", rng);
        turns.push(Turn::new(Role::User, text.clone(), turns.len()));
        previous = Some(text);
        if t + 1 < planned {
            let reply = AGENT_LINES[(t + rng.random_range(0..2)).min(AGENT_LINES.len() - 1)];
            asked = reply.contains("order number");
            turns.push(Turn::new(Role::Agent, reply, turns.len()));
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("domain".to_string(), DEMO_DOMAIN.to_string());
    Episode { episode_id: id, task_id, source, persona_id: None, turns, metadata }
}

/// Synthetic human dialogues: each episode draws its own style from a
/// broad population.
pub fn synthetic_human_corpus(n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let context = scenario(&mut rng);
            let style = UserStyle::sample_human(&mut rng);
            episode(format!("human_{i:04}"), format!("h_task_{:03}", i % 40), Source::Human, &style, &context, &mut rng)
        })
        .collect()
}

/// Synthetic unconditioned-simulator dialogues with the base style.
pub fn synthetic_base_corpus(n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let style = UserStyle::base_simulator();
    (0..n)
        .map(|i| {
            let context = scenario(&mut rng);
            episode(format!("base_{i:04}"), format!("h_task_{:03}", i % 40), Source::BaseSim, &style, &context, &mut rng)
        })
        .collect()
}
