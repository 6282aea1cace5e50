use std::collections::BTreeSet;
use std::path::Path;

use simuser_core::discriminator::{Discriminator, ModelTags};
use simuser_core::rollout::{load_tasks, TaskSpec};
use simuser_core::transcript::{load_corpus, Episode, Split};

use crate::error::{Classify, CliResult, ExitKind};
use crate::manifest::write_file;

pub fn episodes(path: &Path) -> CliResult<Vec<Episode>> {
    Ok(load_corpus(path, Split::Test).or_kind(ExitKind::Io)?.episodes)
}

pub fn tasks(path: &Path) -> CliResult<Vec<TaskSpec>> {
    load_tasks(path).or_kind(ExitKind::Io)
}

pub fn discriminator(path: &Path) -> CliResult<Discriminator> {
    Discriminator::load(path).or_kind(ExitKind::Io)
}

/// Distinct values of a metadata key over a corpus.
pub fn meta_values<'a>(episodes: impl IntoIterator<Item = &'a Episode>, key: &str) -> BTreeSet<String> {
    episodes.into_iter().filter_map(|e| e.metadata.get(key).cloned()).collect()
}

fn single(values: BTreeSet<String>) -> Option<String> {
    if values.len() == 1 {
        values.into_iter().next()
    } else {
        None
    }
}

/// Tags carried by a corpus: a tag is set only when every tagged episode
/// agrees on it.
pub fn data_tags(episodes: &[Episode]) -> ModelTags {
    ModelTags {
        domain: single(meta_values(episodes, "domain")),
        simulator_model: single(meta_values(episodes, "simulator_model")),
    }
}

/// Writes a CSV table preceded by a `# simuser <kind> v1` line.
pub fn write_table(path: &Path, kind: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut out = format!("# simuser {kind} v1\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).or_kind(ExitKind::Other)?;
        for r in rows {
            w.write_record(r).or_kind(ExitKind::Other)?;
        }
        w.flush().or_kind(ExitKind::Io)?;
    }
    write_file(path, &out)
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
