//! The evolvable generator: behavioral axes plus the population and
//! roleplay prompts, stored as a sectioned text document and interpreted
//! by a fixed two-phase generation pipeline.

mod generate;
pub mod template;

pub use generate::{
    active_traits, axes_description, generate_personas, parse_population_response,
    render_population_prompt, render_roleplay_prompt, GenerationConfig, GenerationError, PersonaRecord,
    PersonaSet, PopulationError, TaskContext,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use template::TemplateError;

pub const SEED_GENOME_DOCUMENT: &str = include_str!("../../data/seed_genome.txt");

/// Placeholders the population template may use.
pub const POPULATION_PLACEHOLDERS: [&str; 3] = ["N", "axes_description", "task_context"];
/// Placeholders the roleplay template may use.
pub const ROLEPLAY_PLACEHOLDERS: [&str; 6] =
    ["N", "axes_description", "task_context", "persona_id", "description", "active_traits"];

pub const SECTION_NAMES: [&str; 6] = [
    "AXES",
    "POPULATION_SYSTEM",
    "POPULATION_PROMPT",
    "ROLEPLAY_SYSTEM",
    "ROLEPLAY_PROMPT",
    "META",
];

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GenomeError {
    #[error("document has no section headers")]
    NoSections,
    #[error("section {0} appears twice")]
    DuplicateSection(String),
    #[error("unknown section {0}")]
    UnknownSection(String),
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("AXES line {line}: {message}")]
    AxisSyntax { line: usize, message: String },
    #[error("META: {0}")]
    Meta(String),
    #[error("genome has no axes")]
    NoAxes,
    #[error("duplicate axis {0:?}")]
    DuplicateAxis(String),
    #[error("axis {axis:?}: {message}")]
    InvalidAxis { axis: String, message: String },
    #[error("{section}: {message}")]
    InvalidSection { section: &'static str, message: String },
    #[error("{section} template: {source}")]
    Template {
        section: &'static str,
        #[source]
        source: TemplateError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub behavior: String,
    pub definition: String,
    pub presence_true: String,
    pub presence_false: String,
}

impl AxisSpec {
    fn validate(&self) -> Result<(), GenomeError> {
        let invalid = |message: &str| GenomeError::InvalidAxis {
            axis: self.behavior.clone(),
            message: message.to_string(),
        };
        let b = &self.behavior;
        if b.is_empty()
            || !b.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(invalid("behavior must be a nonempty identifier of [A-Za-z0-9_-]"));
        }
        for (name, v) in [
            ("definition", &self.definition),
            ("presence_true", &self.presence_true),
            ("presence_false", &self.presence_false),
        ] {
            if v.trim().is_empty() {
                return Err(invalid(&format!("{name} is empty")));
            }
            if v.trim() != v || v.lines().any(|l| l.trim().is_empty()) {
                return Err(invalid(&format!(
                    "{name} has leading/trailing whitespace or blank lines"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorGenome {
    pub axes: Vec<AxisSpec>,
    pub population_system: String,
    pub population_template: String,
    pub roleplay_system: String,
    pub roleplay_template: String,
    pub generation: u32,
    pub parent: Option<String>,
}

fn header(name: &str) -> String {
    format!("=== {name} ===")
}

fn header_name(line: &str) -> Option<&str> {
    line.strip_prefix("=== ")
        .and_then(|r| r.strip_suffix(" ==="))
        .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_uppercase() || c == '_'))
}

fn serialize_axes(axes: &[AxisSpec]) -> String {
    let field = |key: &str, value: &str| {
        let mut lines = value.split('\n');
        let mut s = format!("{key}: {}", lines.next().unwrap_or(""));
        for l in lines {
            s.push_str("\n  ");
            s.push_str(l);
        }
        s
    };
    axes.iter()
        .map(|a| {
            [
                field("behavior", &a.behavior),
                field("definition", &a.definition),
                field("presence_true", &a.presence_true),
                field("presence_false", &a.presence_false),
            ]
            .join("\n")
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn parse_axes(text: &str) -> Result<Vec<AxisSpec>, GenomeError> {
    #[derive(Default)]
    struct Partial {
        fields: [Option<String>; 4],
        line: usize,
    }
    const KEYS: [&str; 4] = ["behavior", "definition", "presence_true", "presence_false"];
    let finish = |p: Partial| -> Result<AxisSpec, GenomeError> {
        let [b, d, t, f] = p.fields;
        let missing = |k: &str| GenomeError::AxisSyntax {
            line: p.line,
            message: format!("axis block is missing {k}"),
        };
        Ok(AxisSpec {
            behavior: b.ok_or_else(|| missing("behavior"))?,
            definition: d.ok_or_else(|| missing("definition"))?,
            presence_true: t.ok_or_else(|| missing("presence_true"))?,
            presence_false: f.ok_or_else(|| missing("presence_false"))?,
        })
    };

    let mut axes = Vec::new();
    let mut current: Option<Partial> = None;
    let mut last_key: Option<usize> = None;
    for (i, line) in text.split('\n').enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            last_key = None;
            continue;
        }
        if let Some(cont) = line.strip_prefix("  ") {
            let (Some(p), Some(k)) = (current.as_mut(), last_key) else {
                return Err(GenomeError::AxisSyntax {
                    line: lineno,
                    message: "continuation line without a field".into(),
                });
            };
            let v = p.fields[k].as_mut().expect("field set before continuation");
            v.push('\n');
            v.push_str(cont);
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            return Err(GenomeError::AxisSyntax {
                line: lineno,
                message: format!("expected `key: value`, got {line:?}"),
            });
        };
        let key = key.trim();
        let Some(k) = KEYS.iter().position(|x| *x == key) else {
            return Err(GenomeError::AxisSyntax { line: lineno, message: format!("unknown key {key:?}") });
        };
        let value = value.strip_prefix(' ').unwrap_or(value).to_string();
        if k == 0 {
            if let Some(p) = current.take() {
                axes.push(finish(p)?);
            }
            current = Some(Partial { line: lineno, ..Partial::default() });
        }
        let Some(p) = current.as_mut() else {
            return Err(GenomeError::AxisSyntax {
                line: lineno,
                message: "axis block must start with behavior".into(),
            });
        };
        if p.fields[k].is_some() {
            return Err(GenomeError::AxisSyntax { line: lineno, message: format!("{key} given twice") });
        }
        p.fields[k] = Some(value);
        last_key = Some(k);
    }
    if let Some(p) = current.take() {
        axes.push(finish(p)?);
    }
    Ok(axes)
}

/// Removes a surrounding Markdown code fence and any prose before the
/// first section header; normalizes CRLF.
fn clean_document(text: &str) -> String {
    let text = text.replace("\r\n", "\n");
    let lines: Vec<&str> = text.split('\n').collect();
    let Some(first) = lines.iter().position(|l| header_name(l).is_some()) else {
        return text;
    };
    let mut body: Vec<&str> = lines[first..].to_vec();
    // With an opening fence before the first header, the last closing
    // fence and anything after it belong to the wrapper.
    let fenced = lines[..first].iter().any(|l| l.trim_start().starts_with("```"));
    if let Some(fence) = body.iter().rposition(|l| l.trim_start().starts_with("```")).filter(|_| fenced) {
        body.truncate(fence);
        body.push("");
    }
    body.join("\n")
}

impl GeneratorGenome {
    /// The seed generator with the four initial axes.
    pub fn initial() -> Self {
        Self::parse(SEED_GENOME_DOCUMENT).expect("seed genome document is valid")
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|a| a.behavior.as_str()).collect()
    }

    pub fn axis(&self, behavior: &str) -> Option<&AxisSpec> {
        self.axes.iter().find(|a| a.behavior == behavior)
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        if self.axes.is_empty() {
            return Err(GenomeError::NoAxes);
        }
        for (i, a) in self.axes.iter().enumerate() {
            a.validate()?;
            if self.axes[..i].iter().any(|b| b.behavior == a.behavior) {
                return Err(GenomeError::DuplicateAxis(a.behavior.clone()));
            }
        }
        for (section, text) in [
            ("POPULATION_SYSTEM", &self.population_system),
            ("POPULATION_PROMPT", &self.population_template),
            ("ROLEPLAY_SYSTEM", &self.roleplay_system),
            ("ROLEPLAY_PROMPT", &self.roleplay_template),
        ] {
            if text.trim().is_empty() {
                return Err(GenomeError::InvalidSection { section, message: "empty".into() });
            }
            if text.split('\n').any(|l| header_name(l).is_some()) {
                return Err(GenomeError::InvalidSection {
                    section,
                    message: "contains a section header line".into(),
                });
            }
        }
        let pop = template::check(&self.population_template, &POPULATION_PLACEHOLDERS)
            .map_err(|source| GenomeError::Template { section: "POPULATION_PROMPT", source })?;
        let role = template::check(&self.roleplay_template, &ROLEPLAY_PLACEHOLDERS)
            .map_err(|source| GenomeError::Template { section: "ROLEPLAY_PROMPT", source })?;
        for (section, names, required) in [
            ("POPULATION_PROMPT", &pop, &["N", "task_context"][..]),
            ("ROLEPLAY_PROMPT", &role, &["task_context"][..]),
        ] {
            if let Some(missing) = required.iter().find(|r| !names.iter().any(|n| n == *r)) {
                return Err(GenomeError::InvalidSection {
                    section,
                    message: format!("template must use {{{missing}}}"),
                });
            }
        }
        if let Some(p) = &self.parent {
            if p.is_empty() || p == "none" || p.contains(char::is_whitespace) {
                return Err(GenomeError::Meta(format!("invalid parent id {p:?}")));
            }
        }
        Ok(())
    }

    fn content_document(&self) -> String {
        let mut doc = String::new();
        for (name, text) in [
            ("AXES", serialize_axes(&self.axes)),
            ("POPULATION_SYSTEM", self.population_system.clone()),
            ("POPULATION_PROMPT", self.population_template.clone()),
            ("ROLEPLAY_SYSTEM", self.roleplay_system.clone()),
            ("ROLEPLAY_PROMPT", self.roleplay_template.clone()),
        ] {
            doc.push_str(&header(name));
            doc.push('\n');
            doc.push_str(&text);
            doc.push('\n');
        }
        doc
    }

    /// The full document: content sections followed by META.
    pub fn serialize(&self) -> String {
        let mut doc = self.content_document();
        doc.push_str(&header("META"));
        doc.push('\n');
        doc.push_str(&format!(
            "generation: {}\nparent: {}\n",
            self.generation,
            self.parent.as_deref().unwrap_or("none")
        ));
        doc
    }

    /// Content hash over everything except META, so lineage does not
    /// change identity.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.content_document().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Strict parse of a document; see [`GeneratorGenome::parse_lenient`]
    /// for LLM output.
    pub fn parse(doc: &str) -> Result<Self, GenomeError> {
        let lines: Vec<&str> = doc.split('\n').collect();
        let mut sections: Vec<(String, String)> = Vec::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let end = if doc.ends_with('\n') { lines.len() - 1 } else { lines.len() };
        for line in &lines[..end] {
            if let Some(name) = header_name(line) {
                if let Some((n, body)) = current.take() {
                    sections.push((n, body.join("\n")));
                }
                if sections.iter().any(|(n, _)| n == name) {
                    return Err(GenomeError::DuplicateSection(name.to_string()));
                }
                if !SECTION_NAMES.contains(&name) {
                    return Err(GenomeError::UnknownSection(name.to_string()));
                }
                current = Some((name.to_string(), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !line.trim().is_empty() {
                return Err(GenomeError::NoSections);
            }
        }
        if let Some((n, body)) = current.take() {
            sections.push((n, body.join("\n")));
        }
        if sections.is_empty() {
            return Err(GenomeError::NoSections);
        }
        let take = |name: &'static str| -> Result<String, GenomeError> {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or(GenomeError::MissingSection(name))
        };

        let axes = parse_axes(&take("AXES")?)?;
        let meta = take("META")?;
        let mut generation = 0;
        let mut parent = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            match line.split_once(':') {
                Some(("generation", v)) => {
                    generation = v
                        .trim()
                        .parse()
                        .map_err(|_| GenomeError::Meta(format!("bad generation {:?}", v.trim())))?;
                }
                Some(("parent", v)) => {
                    let v = v.trim();
                    parent = (v != "none" && !v.is_empty()).then(|| v.to_string());
                }
                _ => {}
            }
        }
        let genome = GeneratorGenome {
            axes,
            population_system: take("POPULATION_SYSTEM")?,
            population_template: take("POPULATION_PROMPT")?,
            roleplay_system: take("ROLEPLAY_SYSTEM")?,
            roleplay_template: take("ROLEPLAY_PROMPT")?,
            generation,
            parent,
        };
        genome.validate()?;
        Ok(genome)
    }

    /// Tolerates code fences, leading prose and CRLF line endings. A
    /// missing META section is filled with defaults.
    pub fn parse_lenient(text: &str) -> Result<Self, GenomeError> {
        let mut doc = clean_document(text);
        if !doc.split('\n').any(|l| header_name(l) == Some("META")) {
            if !doc.ends_with('\n') {
                doc.push('\n');
            }
            doc.push_str("=== META ===\ngeneration: 0\nparent: none\n");
        }
        Self::parse(&doc)
    }

    /// A child of `self`: one generation later, with `self` as parent.
    pub fn child(&self, mut content: GeneratorGenome) -> GeneratorGenome {
        content.generation = self.generation + 1;
        content.parent = Some(self.id());
        content
    }
}

pub fn initial_genome() -> GeneratorGenome {
    GeneratorGenome::initial()
}
