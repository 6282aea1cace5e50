//! Offline stand-ins: a deterministic chat client for every model role,
//! synthetic human and simulator corpora, demo tasks and an environment
//! script. Used by tests and the `demo-data` command.

mod corpus;
mod llm;
pub mod style;

pub use corpus::{
    demo_env_script, demo_tasks, synthetic_base_corpus, synthetic_human_corpus, DEMO_AGENT_PROMPT, DEMO_DOMAIN,
    DEMO_SCRIPT,
};
pub use llm::{hash64, MockLlm, AXIS_BANK, TRAITS_LINE};

use crate::discriminator::{Discriminator, DiscriminatorError, ForestConfig, ModelTags};
use crate::fingerprint::{fingerprint_episodes, FeatureConfig, LexiconSet};
use crate::metrics::{CoverageSpace, HumanReference};
use crate::rollout::{MockEnvironmentFactory, TaskSpec};

/// A ready-to-run offline pipeline built from the synthetic corpora.
pub struct DemoStack {
    pub lexicons: LexiconSet,
    pub features: FeatureConfig,
    pub discriminator: Discriminator,
    pub reference: HumanReference,
    pub tasks: Vec<TaskSpec>,
    pub envs: MockEnvironmentFactory,
}

#[derive(Debug, Clone)]
pub struct DemoSizes {
    pub human: usize,
    pub base: usize,
    pub tasks: usize,
    pub trees: usize,
}

impl Default for DemoSizes {
    fn default() -> Self {
        DemoSizes { human: 200, base: 200, tasks: 12, trees: 200 }
    }
}

impl DemoStack {
    pub fn build(sizes: &DemoSizes, seed: u64) -> Result<Self, DiscriminatorError> {
        let lexicons = LexiconSet::default_set();
        let features = FeatureConfig::default();
        let human = fingerprint_episodes(&synthetic_human_corpus(sizes.human, seed), &lexicons, &features);
        let base = fingerprint_episodes(&synthetic_base_corpus(sizes.base, seed ^ 1), &lexicons, &features);
        let config = ForestConfig { n_estimators: sizes.trees, seed, ..ForestConfig::default() };
        let discriminator = Discriminator::train(&human.rows, &base.rows, &config)?.with_tags(ModelTags {
            domain: Some(DEMO_DOMAIN.into()),
            simulator_model: Some("mock".into()),
        });
        let reference = HumanReference::build(human.rows, CoverageSpace::Raw)
            .expect("synthetic human fingerprints are not all identical");
        Ok(DemoStack {
            lexicons,
            features,
            discriminator,
            reference,
            tasks: demo_tasks(sizes.tasks, seed ^ 2),
            envs: MockEnvironmentFactory::new([demo_env_script()]).expect("demo script is valid"),
        })
    }
}
