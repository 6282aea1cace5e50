use std::collections::HashMap;
use std::path::PathBuf;

use simuser_core::evolve::{list_checkpoints, load_checkpoint, select_checkpoint, validation_score, CheckpointCandidate};

use super::evolve::{evolve_error, out_dir};
use super::pipeline::Pipeline;
use crate::config::{Backend, RunConfig};
use crate::error::{CliError, CliResult, ExitKind};
use crate::manifest::{write_file, RunManifest};

pub struct SelectArgs {
    pub config: PathBuf,
    pub checkpoints: Option<PathBuf>,
    pub persona_counts: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub mock: bool,
}

/// Re-scores the best genome of every checkpoint on the validation pool
/// at each persona count and keeps the highest mean.
pub fn run(args: &SelectArgs) -> CliResult<()> {
    let mut config = RunConfig::load(&args.config)?;
    if args.mock {
        config.backend = Backend::Mock;
    }
    if let Some(c) = &args.persona_counts {
        config.select.persona_counts = c.clone();
        config.validate()?;
    }
    let dir = out_dir(args.out.as_deref(), &config);
    let ckpt_root = args.checkpoints.clone().unwrap_or_else(|| dir.join("checkpoints"));

    let mut manifest = RunManifest::new("select");
    manifest.config(&args.config)?;
    let pipeline = Pipeline::load(&config, &mut manifest)?;
    if pipeline.pools.validation.is_empty() {
        return Err(CliError::config("select needs [paths] validation_tasks"));
    }
    let ctx = pipeline.context(&config);

    let mut candidates = Vec::new();
    for path in list_checkpoints(&ckpt_root).map_err(evolve_error)? {
        let state = load_checkpoint(&path).map_err(evolve_error)?;
        let label = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        manifest.input(&path.join(simuser_core::evolve::CHECKPOINT_FILE))?;
        candidates.push(CheckpointCandidate { label, genome: state.best.genome });
    }
    if candidates.is_empty() {
        return Err(CliError::new(ExitKind::Io, anyhow::anyhow!("no checkpoints under {}", ckpt_root.display())));
    }

    let mut cache: HashMap<(String, usize), Option<f64>> = HashMap::new();
    let report = select_checkpoint(&candidates, &config.select.persona_counts, |genome, n| {
        *cache
            .entry((genome.id(), n))
            .or_insert_with(|| validation_score(genome, &pipeline.pools.validation, n, &ctx))
    })
    .map_err(evolve_error)?;

    for (c, mean) in candidates.iter().zip(&report.means) {
        let m = mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "failed".into());
        println!("{:<12} {} mean {m}", c.label, c.genome.id());
    }
    println!("selected {} (genome {})", report.label, report.genome_id);

    let sel = dir.join("selection.json");
    let genome = dir.join("selected_genome.txt");
    let body = serde_json::json!({
        "format": "simuser-selection",
        "format_version": 1,
        "checkpoints": candidates.iter().map(|c| &c.label).collect::<Vec<_>>(),
        "report": report,
    });
    write_file(&sel, (serde_json::to_string_pretty(&body).expect("serializes") + "\n").as_bytes())?;
    write_file(&genome, candidates[report.chosen].genome.serialize().as_bytes())?;
    manifest.output(&sel)?;
    manifest.output(&genome)?;
    manifest.detail("selected", &report.label);
    manifest.write(&dir.join("selection.manifest.json"))?;
    Ok(())
}
