use std::collections::BTreeSet;
use std::path::Path;

use simuser_core::discriminator::{Discriminator, ModelTags};
use simuser_core::evolve::{EvalContext, TaskPools};
use simuser_core::fingerprint::{fingerprint_episodes, LexiconSet};
use simuser_core::llm::Gateway;
use simuser_core::metrics::HumanReference;
use simuser_core::rollout::{MockEnvironmentFactory, TaskSpec};

use crate::config::{lexicons, RunConfig};
use crate::error::{Classify, CliError, CliResult, ExitKind};
use crate::io;
use crate::manifest::RunManifest;

/// Everything an evaluation needs, loaded from the paths in a config.
pub struct Pipeline {
    pub gateway: Gateway,
    pub discriminator: Discriminator,
    pub reference: HumanReference,
    pub lexicons: LexiconSet,
    pub envs: MockEnvironmentFactory,
    pub pools: TaskPools,
}

fn task_domain(tasks: &[TaskSpec]) -> Option<String> {
    let domains: BTreeSet<&str> = tasks.iter().map(|t| t.domain.as_str()).filter(|d| !d.is_empty()).collect();
    (domains.len() == 1).then(|| domains.into_iter().next().unwrap().to_string())
}

impl Pipeline {
    pub fn load(config: &RunConfig, manifest: &mut RunManifest) -> CliResult<Self> {
        let p = &config.paths;
        let mut input = |path: &Path| manifest.input(path);

        let lexicon_path = p.lexicon.as_deref();
        let lex = lexicons(lexicon_path)?;
        if let Some(l) = lexicon_path {
            input(l)?;
        }
        let disc_path = config.require(&p.discriminator, "discriminator")?;
        let discriminator = io::discriminator(disc_path)?;
        input(disc_path)?;

        let human_path = config.require(&p.human, "human")?;
        let human = io::episodes(human_path)?;
        input(human_path)?;
        let rows = fingerprint_episodes(&human, &lex, &config.features).rows;
        let reference = HumanReference::build(rows, config.metrics.coverage_space).or_kind(ExitKind::Io)?;

        let tasks_path = config.require(&p.tasks, "tasks")?;
        let train = io::tasks(tasks_path)?;
        input(tasks_path)?;
        let validation = match &p.validation_tasks {
            Some(v) => {
                input(v)?;
                io::tasks(v)?
            }
            None => Vec::new(),
        };
        if train.is_empty() {
            return Err(CliError::new(ExitKind::Io, anyhow::anyhow!("{} holds no tasks", tasks_path.display())));
        }

        let env_path = config.require(&p.env_scripts, "env_scripts")?;
        let envs = MockEnvironmentFactory::load(env_path).or_kind(ExitKind::Io)?;
        input(env_path)?;

        let data = ModelTags { domain: task_domain(&train), simulator_model: None };
        discriminator.tags.check(&data, config.allow_tag_mismatch).map_err(|e| {
            CliError::config(format!("{e}; set allow_tag_mismatch = true to override"))
        })?;

        Ok(Pipeline {
            gateway: config.gateway()?,
            discriminator,
            reference,
            lexicons: lex,
            envs,
            pools: TaskPools { train, validation },
        })
    }

    pub fn context<'a>(&'a self, config: &'a RunConfig) -> EvalContext<'a> {
        EvalContext {
            gateway: &self.gateway,
            discriminator: &self.discriminator,
            reference: &self.reference,
            lexicons: &self.lexicons,
            features: &config.features,
            envs: &self.envs,
            rollout: &config.rollout,
            generation: &config.generation,
            terminal_personas: config.evolve.terminal_personas(),
        }
    }

    /// Appends this process's model calls to `path`.
    pub fn append_calls(&self, path: &Path) -> CliResult<()> {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::new(ExitKind::Io, anyhow::anyhow!("cannot open {}: {e}", path.display())))?;
        let mut text = String::new();
        for record in self.gateway.call_log() {
            text.push_str(&serde_json::to_string(&record).expect("call record serializes"));
            text.push('\n');
        }
        f.write_all(text.as_bytes()).or_kind(ExitKind::Io)
    }
}
