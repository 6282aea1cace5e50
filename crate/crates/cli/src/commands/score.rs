use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use simuser_core::fingerprint::{extract_fingerprint, fingerprint_episodes, FeatureVector};
use simuser_core::metrics::{combined_score, mean_vector, HumanReference};
use simuser_core::transcript::Episode;

use crate::config::{lexicons, RunConfig};
use crate::error::{Classify, CliError, CliResult, ExitKind};
use crate::io::{self, data_tags, num, write_table};
use crate::manifest::{manifest_path_for, RunManifest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupBy {
    Source,
    Task,
    Persona,
    Meta(String),
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "source" => Ok(GroupBy::Source),
            "task" => Ok(GroupBy::Task),
            "persona" => Ok(GroupBy::Persona),
            _ => match s.strip_prefix("meta:") {
                Some(k) if !k.is_empty() => Ok(GroupBy::Meta(k.to_string())),
                _ => Err(format!("unknown grouping {s:?}; use source, task, persona or meta:<key>")),
            },
        }
    }
}

impl GroupBy {
    fn key(&self, e: &Episode) -> String {
        match self {
            GroupBy::Source => e.source.to_string(),
            GroupBy::Task => e.task_id.clone(),
            GroupBy::Persona => e.persona_id.clone().unwrap_or_else(|| "-".into()),
            GroupBy::Meta(k) => e.metadata.get(k).cloned().unwrap_or_else(|| "-".into()),
        }
    }
}

pub struct ScoreArgs {
    pub transcripts: Vec<PathBuf>,
    pub model: PathBuf,
    pub reference: PathBuf,
    pub group_by: GroupBy,
    pub allow_tag_mismatch: bool,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
}

pub const SCORE_TABLE: &str = "scores";
pub const SCORE_COLUMNS: [&str; 10] = ["group", "n", "hl", "coverage", "score", "d1", "d2", "d3", "d4", "usi"];

/// Per-group metrics at the terminal weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub group: String,
    pub n: usize,
    pub hl: f64,
    pub coverage: f64,
    pub score: f64,
    pub dims: [f64; 4],
    pub usi: f64,
}

/// HL is the mean human probability of the group's episodes; coverage the
/// mean over the group's tasks of each task's coverage of the reference.
pub fn score_group(
    group: &str,
    rows: &[(String, FeatureVector, f64)],
    reference: &HumanReference,
) -> CliResult<GroupScore> {
    let n = rows.len();
    let hl = rows.iter().map(|r| r.2).sum::<f64>() / n as f64;
    let mut by_task: BTreeMap<&str, Vec<FeatureVector>> = BTreeMap::new();
    for (task, f, _) in rows {
        by_task.entry(task).or_default().push(*f);
    }
    let mut cov = 0.0;
    for points in by_task.values() {
        cov += reference.coverage(points).or_kind(ExitKind::Other)?;
    }
    let coverage = cov / by_task.len() as f64;
    let score = combined_score(hl, coverage, 0.5, 0.5).or_kind(ExitKind::Other)?;
    let all: Vec<FeatureVector> = rows.iter().map(|r| r.1).collect();
    let dice = reference.dice(&mean_vector(&all).expect("nonempty group"));
    Ok(GroupScore { group: group.to_string(), n, hl, coverage, score, dims: dice.dims, usi: dice.usi })
}

pub fn run(args: &ScoreArgs, config: &RunConfig, config_path: Option<&Path>) -> CliResult<()> {
    let mut manifest = RunManifest::new("score");
    if let Some(p) = config_path {
        manifest.config(p)?;
    }
    let lexicon_path = args.lexicon.as_deref().or(config.paths.lexicon.as_deref());
    let lex = lexicons(lexicon_path)?;
    if let Some(p) = lexicon_path {
        manifest.input(p)?;
    }
    let model = io::discriminator(&args.model)?;
    manifest.input(&args.model)?;

    let human = io::episodes(&args.reference)?;
    manifest.input(&args.reference)?;
    let human_rows = fingerprint_episodes(&human, &lex, &config.features).rows;
    let reference = HumanReference::build(human_rows, config.metrics.coverage_space).or_kind(ExitKind::Io)?;

    let mut episodes = Vec::new();
    for path in &args.transcripts {
        episodes.extend(io::episodes(path)?);
        manifest.input(path)?;
    }
    let allow = args.allow_tag_mismatch || config.allow_tag_mismatch;
    model.tags.check(&data_tags(&episodes), allow).map_err(|e| CliError::config(format!("{e}; pass --allow-tag-mismatch to override")))?;

    let mut groups: BTreeMap<String, Vec<(String, FeatureVector, f64)>> = BTreeMap::new();
    for e in &episodes {
        if e.is_flagged_unscorable() {
            manifest.skipped.push(e.episode_id.clone());
            continue;
        }
        match extract_fingerprint(e, &lex, &config.features) {
            Ok(fp) => {
                let p = model.predict_human_prob(&fp.0);
                groups.entry(args.group_by.key(e)).or_default().push((e.task_id.clone(), fp.0, p));
            }
            Err(_) => manifest.skipped.push(e.episode_id.clone()),
        }
    }
    if groups.is_empty() {
        return Err(CliError::new(ExitKind::Io, anyhow::anyhow!("no scorable episodes in the given transcripts")));
    }

    let mut table = Vec::new();
    for (name, rows) in &groups {
        let g = score_group(name, rows, &reference)?;
        println!(
            "{:<20} n={:<5} HL {:.4}  Coverage {:.4}  Score {:.4}  USI {:.4}",
            g.group, g.n, g.hl, g.coverage, g.score, g.usi
        );
        let mut row = vec![g.group.clone(), g.n.to_string(), num(g.hl), num(g.coverage), num(g.score)];
        row.extend(g.dims.iter().copied().map(num));
        row.push(num(g.usi));
        table.push(row);
    }
    write_table(&args.out, SCORE_TABLE, &SCORE_COLUMNS, &table)?;
    manifest.output(&args.out)?;
    manifest.detail("reference_d_ref", reference.d_ref);
    manifest.write(&manifest_path_for(&args.out))?;
    Ok(())
}
