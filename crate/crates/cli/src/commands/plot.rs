use std::path::{Path, PathBuf};

use simuser_core::evolve::HistoryRecord;
use simuser_core::fingerprint::fingerprint_episodes;
use simuser_core::metrics::pca_project;

use super::evolve::HISTORY_HEADER;
use crate::config::{lexicons, RunConfig};
use crate::error::{Classify, CliError, CliResult, ExitKind};
use crate::io::{self, num, opt_num, write_table};
use crate::manifest::{manifest_path_for, RunManifest};

pub const CURVE_TABLE: &str = "curve";
pub const CURVE_COLUMNS: [&str; 4] = ["iter", "score", "hl", "coverage"];
pub const PCA_TABLE: &str = "pca";
pub const PCA_COLUMNS: [&str; 4] = ["episode_id", "label", "pc1", "pc2"];

pub enum PlotInput {
    History(PathBuf),
    Pca { transcripts: Vec<PathBuf>, lexicon: Option<PathBuf> },
}

pub fn read_history(path: &Path) -> CliResult<Vec<HistoryRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(ExitKind::Io, anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
        return Err(CliError::new(
            ExitKind::Io,
            anyhow::anyhow!("{} does not start with the history header {HISTORY_HEADER}", path.display()),
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::new(ExitKind::Io, anyhow::anyhow!("{} line {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

/// Curve rows; failed iterations keep their row with empty metrics.
pub fn curve_rows(history: &[HistoryRecord]) -> Vec<Vec<String>> {
    history
        .iter()
        .map(|h| vec![h.iteration.to_string(), opt_num(h.score), opt_num(h.hl_mean), opt_num(h.cov_mean)])
        .collect()
}

pub fn run(input: &PlotInput, out: &Path, config: &RunConfig, config_path: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("plot");
    if let Some(p) = config_path {
        manifest.config(p)?;
    }
    match input {
        PlotInput::History(path) => {
            let history = read_history(path)?;
            manifest.input(path)?;
            let rows = curve_rows(&history);
            write_table(out, CURVE_TABLE, &CURVE_COLUMNS, &rows)?;
            println!("wrote {} curve row(s) to {}", rows.len(), out.display());
        }
        PlotInput::Pca { transcripts, lexicon } => {
            let lexicon_path = lexicon.as_deref().or(config.paths.lexicon.as_deref());
            let lex = lexicons(lexicon_path)?;
            if let Some(p) = lexicon_path {
                manifest.input(p)?;
            }
            let mut episodes = Vec::new();
            for p in transcripts {
                episodes.extend(io::episodes(p)?);
                manifest.input(p)?;
            }
            let m = fingerprint_episodes(&episodes, &lex, &config.features);
            manifest.skipped.extend(m.skipped.iter().cloned());
            let pca = pca_project(&m.rows, 2).or_kind(ExitKind::Io)?;
            let source: std::collections::HashMap<&str, String> =
                episodes.iter().map(|e| (e.episode_id.as_str(), e.source.to_string())).collect();
            let rows: Vec<Vec<String>> = m
                .episode_ids
                .iter()
                .zip(&pca.coordinates)
                .map(|(id, c)| vec![id.clone(), source[id.as_str()].clone(), num(c[0]), num(c[1])])
                .collect();
            write_table(out, PCA_TABLE, &PCA_COLUMNS, &rows)?;
            println!(
                "explained variance: PC1 {:.4}  PC2 {:.4}",
                pca.explained_variance[0], pca.explained_variance[1]
            );
            manifest.detail("explained_variance", &pca.explained_variance);
        }
    }
    manifest.output(out)?;
    manifest.write(&manifest_path_for(out))?;
    Ok(())
}
