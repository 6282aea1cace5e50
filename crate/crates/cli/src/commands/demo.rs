use std::path::PathBuf;

use simuser_core::mock::{demo_env_script, demo_tasks, synthetic_base_corpus, synthetic_human_corpus};
use simuser_core::rollout::tasks_to_jsonl;
use simuser_core::transcript::{episode_to_line, Episode};

use crate::error::CliResult;
use crate::manifest::{write_file, RunManifest};

pub struct DemoArgs {
    pub out: PathBuf,
    pub human: usize,
    pub base: usize,
    pub tasks: usize,
    pub validation_tasks: usize,
    pub seed: u64,
}

pub const DEMO_CONFIG: &str = r#"# Offline demo run: every model role is served by the built-in mock.
backend = "mock"

[paths]
human = "human.jsonl"
discriminator = "discriminator.json"
tasks = "tasks.jsonl"
validation_tasks = "validation_tasks.jsonl"
env_scripts = "envs.json"
out_dir = "run"

[evolve]
iterations = 6
islands = 2
migration_interval = 2
minibatch_size = 2
validation_interval = 3
persona_schedule = [5, 8, 10]

[select]
persona_counts = [5, 10]
"#;

fn lines(episodes: &[Episode]) -> String {
    episodes.iter().map(|e| episode_to_line(e) + "\n").collect()
}

pub fn run(args: &DemoArgs) -> CliResult<()> {
    let mut manifest = RunManifest::new("demo-data");
    manifest.seed("demo", args.seed);
    let dir = &args.out;
    let mut put = |name: &str, body: String| -> CliResult<()> {
        let path = dir.join(name);
        write_file(&path, body.as_bytes())?;
        manifest.output(&path)
    };

    put("human.jsonl", lines(&synthetic_human_corpus(args.human, args.seed)))?;
    put("base_sim.jsonl", lines(&synthetic_base_corpus(args.base, args.seed ^ 1)))?;
    let held_out = (args.human / 4).max(2);
    let mut test_h = synthetic_human_corpus(held_out, args.seed ^ 3);
    let mut test_b = synthetic_base_corpus(held_out, args.seed ^ 4);
    for e in test_h.iter_mut().chain(test_b.iter_mut()) {
        e.episode_id = format!("test_{}", e.episode_id);
    }
    put("human_test.jsonl", lines(&test_h))?;
    put("base_sim_test.jsonl", lines(&test_b))?;

    let all = demo_tasks(args.tasks + args.validation_tasks, args.seed ^ 2);
    let (train, val) = all.split_at(args.tasks);
    let mut val = val.to_vec();
    for (i, t) in val.iter_mut().enumerate() {
        t.task_id = format!("retail_val_{i:03}");
    }
    put("tasks.jsonl", tasks_to_jsonl(train))?;
    put("validation_tasks.jsonl", tasks_to_jsonl(&val))?;
    put("envs.json", serde_json::to_string_pretty(&vec![demo_env_script()]).expect("script serializes") + "\n")?;
    put("simuser.toml", DEMO_CONFIG.to_string())?;

    manifest.write(&dir.join("demo.manifest.json"))?;
    println!("demo data written to {}", dir.display());
    Ok(())
}
