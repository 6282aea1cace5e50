use std::path::{Path, PathBuf};

use serde::Serialize;
use simuser_core::discriminator::{evaluate_discriminator, Discriminator, EvalMetrics, ModelTags};
use simuser_core::fingerprint::{fingerprint_episodes, FeatureConfig, FeatureVector, LexiconSet};
use simuser_core::transcript::Episode;

use crate::config::{lexicons, RunConfig};
use crate::error::{Classify, CliError, CliResult, ExitKind};
use crate::io::{self, data_tags, meta_values};
use crate::manifest::{file_digest, manifest_path_for, write_file, RunManifest};

pub struct TrainArgs {
    pub human: PathBuf,
    pub sim: PathBuf,
    pub out: PathBuf,
    pub test_human: Option<PathBuf>,
    pub test_sim: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trees: Option<usize>,
    pub domain: Option<String>,
    pub simulator_model: Option<String>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    format: &'static str,
    format_version: u32,
    model_digest: &'a str,
    n_test_human: usize,
    n_test_sim: usize,
    #[serde(flatten)]
    metrics: EvalMetrics,
}

fn rows(
    path: &Path,
    lex: &LexiconSet,
    features: &FeatureConfig,
    manifest: &mut RunManifest,
) -> CliResult<(Vec<Episode>, Vec<FeatureVector>)> {
    let episodes = io::episodes(path)?;
    manifest.input(path)?;
    let m = fingerprint_episodes(&episodes, lex, features);
    manifest.skipped.extend(m.skipped);
    Ok((episodes, m.rows))
}

fn nonempty(rows: &[FeatureVector], path: &Path) -> CliResult<()> {
    if rows.is_empty() {
        return Err(CliError::new(
            ExitKind::Io,
            anyhow::anyhow!("{} has no scorable episodes", path.display()),
        ));
    }
    Ok(())
}

pub fn run(args: &TrainArgs, config: &RunConfig, config_path: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("train-disc");
    if let Some(p) = config_path {
        manifest.config(p)?;
    }
    let lexicon_path = args.lexicon.as_deref().or(config.paths.lexicon.as_deref());
    let lex = lexicons(lexicon_path)?;
    if let Some(p) = lexicon_path {
        manifest.input(p)?;
    }
    let mut forest = config.discriminator.clone();
    if let Some(s) = args.seed {
        forest.seed = s;
    }
    if let Some(t) = args.trees {
        forest.n_estimators = t;
    }
    forest.validate().or_kind(ExitKind::Config)?;
    manifest.seed("forest", forest.seed);

    let (human_eps, human) = rows(&args.human, &lex, &config.features, &mut manifest)?;
    let (sim_eps, sim) = rows(&args.sim, &lex, &config.features, &mut manifest)?;
    nonempty(&human, &args.human)?;
    nonempty(&sim, &args.sim)?;

    let (hd, sd) = (meta_values(&human_eps, "domain"), meta_values(&sim_eps, "domain"));
    if !hd.is_empty() && !sd.is_empty() && hd != sd {
        manifest.warn(format!(
            "corpora disagree on domain: human {:?}, simulator {:?}",
            hd.iter().collect::<Vec<_>>(),
            sd.iter().collect::<Vec<_>>()
        ));
    }
    let inferred = data_tags(&sim_eps);
    let tags = ModelTags {
        domain: args.domain.clone().or(inferred.domain).or_else(|| data_tags(&human_eps).domain),
        simulator_model: args.simulator_model.clone().or(inferred.simulator_model),
    };

    let model = Discriminator::train(&human, &sim, &forest).or_kind(ExitKind::Io)?.with_tags(tags);
    write_file(&args.out, model.to_json().as_bytes())?;
    let digest = file_digest(&args.out)?;
    println!("trained {} trees on {} human / {} simulator rows; model {}", forest.n_estimators, human.len(), sim.len(), args.out.display());
    println!("model digest {digest}");
    manifest.output(&args.out)?;
    manifest.detail("n_human", human.len());
    manifest.detail("n_sim", sim.len());
    manifest.detail("tags", &model.tags);

    match (&args.test_human, &args.test_sim) {
        (Some(th), Some(ts)) => {
            let (_, test_h) = rows(th, &lex, &config.features, &mut manifest)?;
            let (_, test_s) = rows(ts, &lex, &config.features, &mut manifest)?;
            nonempty(&test_h, th)?;
            nonempty(&test_s, ts)?;
            let labels: Vec<bool> = std::iter::repeat_n(true, test_h.len()).chain(std::iter::repeat_n(false, test_s.len())).collect();
            let all: Vec<FeatureVector> = test_h.iter().chain(&test_s).copied().collect();
            let metrics = evaluate_discriminator(&model, &all, &labels).or_kind(ExitKind::Other)?;
            println!("held-out AUC {:.4}  accuracy {:.4}  F1 {:.4}", metrics.roc_auc, metrics.accuracy, metrics.f1);
            let path = args.out.with_file_name(format!(
                "{}.metrics.json",
                args.out.file_name().unwrap_or_default().to_string_lossy()
            ));
            let file = MetricsFile {
                format: "simuser-disc-metrics",
                format_version: 1,
                model_digest: &digest,
                n_test_human: test_h.len(),
                n_test_sim: test_s.len(),
                metrics,
            };
            write_file(&path, (serde_json::to_string_pretty(&file).expect("serializes") + "\n").as_bytes())?;
            manifest.output(&path)?;
            manifest.detail("held_out", metrics);
        }
        (None, None) => {}
        _ => return Err(CliError::config("--test-human and --test-sim must be given together")),
    }
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(())
}
