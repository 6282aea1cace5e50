use std::path::{Path, PathBuf};

use simuser_core::fingerprint::{fingerprint_episodes, FEATURE_NAMES};

use crate::config::{lexicons, RunConfig};
use crate::error::CliResult;
use crate::io::{self, num, write_table};
use crate::manifest::{manifest_path_for, RunManifest};

pub struct FingerprintArgs {
    pub transcripts: Vec<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
}

pub const FINGERPRINT_TABLE: &str = "fingerprints";

pub fn run(args: &FingerprintArgs, config: &RunConfig, config_path: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("fingerprint");
    if let Some(p) = config_path {
        manifest.config(p)?;
    }
    let lexicon_path = args.lexicon.as_deref().or(config.paths.lexicon.as_deref());
    let lex = lexicons(lexicon_path)?;
    if let Some(p) = lexicon_path {
        manifest.input(p)?;
    }

    let mut episodes = Vec::new();
    for path in &args.transcripts {
        episodes.extend(io::episodes(path)?);
        manifest.input(path)?;
    }
    let matrix = fingerprint_episodes(&episodes, &lex, &config.features);

    let mut header = vec!["episode_id", "task_id", "source", "persona_id"];
    header.extend(FEATURE_NAMES);
    let by_id: std::collections::HashMap<&str, &simuser_core::transcript::Episode> =
        episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    let rows: Vec<Vec<String>> = matrix
        .episode_ids
        .iter()
        .zip(&matrix.rows)
        .map(|(id, f)| {
            let e = by_id[id.as_str()];
            let mut row = vec![
                id.clone(),
                e.task_id.clone(),
                e.source.to_string(),
                e.persona_id.clone().unwrap_or_default(),
            ];
            row.extend(f.iter().copied().map(num));
            row
        })
        .collect();
    write_table(&args.out, FINGERPRINT_TABLE, &header, &rows)?;

    for id in &matrix.skipped {
        manifest.skipped.push(id.clone());
    }
    if !matrix.skipped.is_empty() {
        eprintln!("skipped {} unscorable episode(s)", matrix.skipped.len());
    }
    manifest.output(&args.out)?;
    manifest.detail("rows", rows.len());
    manifest.write(&manifest_path_for(&args.out))?;
    println!("wrote {} fingerprint row(s) to {}", rows.len(), args.out.display());
    Ok(())
}
