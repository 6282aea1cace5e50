use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use simuser_core::discriminator::ForestConfig;
use simuser_core::evolve::EvolutionConfig;
use simuser_core::fingerprint::{load_lexicons, FeatureConfig, LexiconSet};
use simuser_core::genome::GenerationConfig;
use simuser_core::llm::{Gateway, GatewayConfig};
use simuser_core::metrics::CoverageSpace;
use simuser_core::mock::MockLlm;
use simuser_core::rollout::RolloutConfig;

use crate::error::{Classify, CliError, CliResult, ExitKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// OpenAI-compatible HTTP endpoint.
    #[default]
    Http,
    /// Offline deterministic responder.
    Mock,
}

/// File locations; relative paths resolve against the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Human reference corpus.
    pub human: Option<PathBuf>,
    pub discriminator: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub validation_tasks: Option<PathBuf>,
    pub env_scripts: Option<PathBuf>,
    pub seed_genome: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub coverage_space: CoverageSpace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub persona_counts: Vec<usize>,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig { persona_counts: vec![5, 8, 10] }
    }
}

/// One TOML document with a section per concern.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Backend,
    /// Accept a discriminator whose tags disagree with the data.
    pub allow_tag_mismatch: bool,
    pub paths: PathsConfig,
    pub gateway: GatewayConfig,
    pub evolve: EvolutionConfig,
    pub rollout: RolloutConfig,
    pub generation: GenerationConfig,
    pub features: FeatureConfig,
    pub discriminator: ForestConfig,
    pub metrics: MetricsConfig,
    pub select: SelectConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    /// Loads and validates a config file and resolves its paths.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .or_kind(ExitKind::Io)?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.human,
            &mut p.discriminator,
            &mut p.tasks,
            &mut p.validation_tasks,
            &mut p.env_scripts,
            &mut p.seed_genome,
            &mut p.lexicon,
            &mut p.out_dir,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.evolve.validate().or_kind(ExitKind::Config)?;
        self.rollout.validate().map_err(|e| CliError::config(format!("[rollout] {e}")))?;
        self.features.validate().or_kind(ExitKind::Config)?;
        self.discriminator.validate().or_kind(ExitKind::Config)?;
        if self.backend == Backend::Http {
            self.gateway.validate().or_kind(ExitKind::Config)?;
        }
        if self.select.persona_counts.is_empty() || self.select.persona_counts.contains(&0) {
            return Err(CliError::config("[select] persona_counts needs positive entries"));
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
        value.as_deref().ok_or_else(|| CliError::config(format!("missing [paths] {key} in config")))
    }

    pub fn gateway(&self) -> CliResult<Gateway> {
        match self.backend {
            Backend::Mock => Ok(Gateway::new(
                Arc::new(MockLlm::new(self.rollout.stop_marker.clone())),
                self.gateway.models.clone(),
                self.gateway.max_workers,
            )),
            Backend::Http => Gateway::from_config(&self.gateway).or_kind(ExitKind::Config),
        }
    }
}

pub fn lexicons(path: Option<&Path>) -> CliResult<LexiconSet> {
    match path {
        Some(p) => load_lexicons(p).or_kind(ExitKind::Io),
        None => Ok(LexiconSet::default_set()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[evolve]\niterations = 3\nmigration_ratio = 0.1\n").unwrap_err();
        assert_eq!(err.kind, ExitKind::Config);
        assert!(err.to_string().contains("migration_ratio"), "{err}");
        let err = RunConfig::parse("bakend = \"mock\"\n").unwrap_err();
        assert!(err.to_string().contains("bakend"));
    }

    #[test]
    fn sections_parse_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "backend = \"mock\"\n[paths]\ntasks = \"tasks.jsonl\"\nout_dir = \"/abs/out\"\n\
             [evolve]\niterations = 4\n[features]\nshort_utterance_threshold = 2\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.backend, Backend::Mock);
        assert_eq!(cfg.paths.tasks.unwrap(), dir.path().join("tasks.jsonl"));
        assert_eq!(cfg.paths.out_dir.unwrap(), PathBuf::from("/abs/out"));
        assert_eq!(cfg.evolve.iterations, 4);
        assert_eq!(cfg.features.short_utterance_threshold, 2);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let cfg = RunConfig::parse("backend = \"mock\"\n[evolve]\npersona_schedule = [8, 5]\n").unwrap();
        assert_eq!(cfg.validate().unwrap_err().kind, ExitKind::Config);
    }
}
