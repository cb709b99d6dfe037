//! Prompt templates and rendering for the four agents.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fewshot::FewShotExample;
use crate::llm::{estimate_tokens, ChatMessage};
use crate::sql::SchemaCatalog;

pub const DEFAULT_TEMPLATE: &str = include_str!("../../assets/templates/default.txt");
pub const TEMPLATE_FILE: &str = "default.txt";
pub const DEFAULT_FEWSHOT_SLOTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    ProjectManager,
    SqlEngineer,
    QualityAnalyst,
    DataAnalyst,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] =
        [AgentRole::ProjectManager, AgentRole::SqlEngineer, AgentRole::QualityAnalyst, AgentRole::DataAnalyst];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentRole::ProjectManager => "project_manager",
            AgentRole::SqlEngineer => "sql_engineer",
            AgentRole::QualityAnalyst => "quality_analyst",
            AgentRole::DataAnalyst => "data_analyst",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| format!("unknown agent role '{s}'"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template section '{section}' is empty or missing")]
    TemplateIncomplete { section: String },
    #[error("unknown template section '{0}'")]
    UnknownSection(String),
    #[error("{given} few-shot examples exceed the {slots} available slots")]
    TooManyExamples { given: usize, slots: usize },
    #[error("cannot read template: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub role_instructions: BTreeMap<AgentRole, String>,
    pub schema_description: String,
    pub domain_knowledge: String,
    pub output_format: BTreeMap<AgentRole, String>,
    pub fewshot_slots: usize,
}

impl PromptTemplate {
    /// The bundled template with the schema section rendered from `catalog`.
    pub fn default_for(catalog: &SchemaCatalog) -> Self {
        Self::parse(DEFAULT_TEMPLATE, catalog).expect("bundled template parses")
    }

    /// Parses a template file. Sections are `[[domain_knowledge]]`,
    /// `[[role:<agent>]]` and `[[output_format:<agent>]]`.
    pub fn parse(text: &str, catalog: &SchemaCatalog) -> Result<Self, PromptError> {
        let mut template = PromptTemplate {
            role_instructions: BTreeMap::new(),
            schema_description: describe_schema(catalog),
            domain_knowledge: String::new(),
            output_format: BTreeMap::new(),
            fewshot_slots: DEFAULT_FEWSHOT_SLOTS,
        };
        let mut current: Option<&mut String> = None;
        for line in text.lines() {
            if let Some(name) = line.trim().strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
                current = Some(match name.split_once(':') {
                    None if name == "domain_knowledge" => &mut template.domain_knowledge,
                    Some(("role", agent)) => template
                        .role_instructions
                        .entry(agent.parse().map_err(|_| PromptError::UnknownSection(name.into()))?)
                        .or_default(),
                    Some(("output_format", agent)) => template
                        .output_format
                        .entry(agent.parse().map_err(|_| PromptError::UnknownSection(name.into()))?)
                        .or_default(),
                    _ => return Err(PromptError::UnknownSection(name.into())),
                });
                continue;
            }
            if let Some(body) = current.as_deref_mut() {
                body.push_str(line);
                body.push('\n');
            }
        }
        for body in template.role_instructions.values_mut().chain(template.output_format.values_mut()) {
            *body = body.trim().to_string();
        }
        template.domain_knowledge = template.domain_knowledge.trim().to_string();
        Ok(template)
    }

    /// Loads `default.txt` from `dir`.
    pub fn load_dir(dir: &Path, catalog: &SchemaCatalog) -> Result<Self, PromptError> {
        let path = dir.join(TEMPLATE_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        let template = Self::parse(&text, catalog)?;
        template.check()?;
        Ok(template)
    }

    pub fn with_fewshot_slots(mut self, slots: usize) -> Self {
        self.fewshot_slots = slots;
        self
    }

    /// Every section must be non-empty for every agent.
    pub fn check(&self) -> Result<(), PromptError> {
        let missing = |section: String| Err(PromptError::TemplateIncomplete { section });
        if self.schema_description.trim().is_empty() {
            return missing("schema".into());
        }
        if self.domain_knowledge.trim().is_empty() {
            return missing("domain_knowledge".into());
        }
        for role in AgentRole::ALL {
            if self.role_instructions.get(&role).map_or(true, |s| s.trim().is_empty()) {
                return missing(format!("role:{role}"));
            }
            if self.output_format.get(&role).map_or(true, |s| s.trim().is_empty()) {
                return missing(format!("output_format:{role}"));
            }
        }
        Ok(())
    }
}

/// Human-readable listing of every table and column.
pub fn describe_schema(catalog: &SchemaCatalog) -> String {
    let mut out = String::new();
    for table in &catalog.tables {
        out.push_str(&format!("Table {}: {}\n", table.name, table.description));
        for column in &table.columns {
            out.push_str(&format!("  - {} ({:?})", column.name, column.ty));
            if !column.description.is_empty() {
                out.push_str(&format!(": {}", column.description));
            }
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Role,
    Schema,
    DomainKnowledge,
    Examples,
    Scratchpad,
    Question,
    OutputFormat,
}

impl SectionKind {
    fn heading(&self) -> &'static str {
        match self {
            SectionKind::Role => "Role",
            SectionKind::Schema => "Database",
            SectionKind::DomainKnowledge => "Domain knowledge",
            SectionKind::Examples => "Examples",
            SectionKind::Scratchpad => "Progress so far",
            SectionKind::Question => "Question",
            SectionKind::OutputFormat => "Output format",
        }
    }

    /// Sections up to the examples go in the system message.
    fn in_system_message(&self) -> bool {
        matches!(self, SectionKind::Role | SectionKind::Schema | SectionKind::DomainKnowledge | SectionKind::Examples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSection {
    pub kind: SectionKind,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    pub sections: Vec<PromptSection>,
    pub token_estimate: u32,
}

impl RenderedPrompt {
    pub fn section(&self, kind: SectionKind) -> Option<&str> {
        self.sections.iter().find(|s| s.kind == kind).map(|s| s.body.as_str())
    }

    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n\n")
    }

    fn assemble(sections: Vec<PromptSection>) -> Self {
        let join = |system: bool| {
            sections
                .iter()
                .filter(|s| s.kind.in_system_message() == system)
                .map(|s| format!("### {}\n{}", s.kind.heading(), s.body))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let mut messages = Vec::new();
        let system = join(true);
        if !system.is_empty() {
            messages.push(ChatMessage::system(system));
        }
        messages.push(ChatMessage::user(join(false)));
        let token_estimate = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        RenderedPrompt { messages, sections, token_estimate }
    }
}

/// Full prompt for one agent turn. `fewshot` is expected in descending
/// similarity order and is rendered as given.
pub fn render(
    template: &PromptTemplate,
    question: &str,
    fewshot: &[FewShotExample],
    scratchpad_digest: &str,
    role: AgentRole,
) -> Result<RenderedPrompt, PromptError> {
    template.check()?;
    if fewshot.len() > template.fewshot_slots {
        return Err(PromptError::TooManyExamples { given: fewshot.len(), slots: template.fewshot_slots });
    }
    let section = |kind, body: &str| PromptSection { kind, body: body.trim_end().to_string() };
    let mut sections = vec![
        section(SectionKind::Role, &template.role_instructions[&role]),
        section(SectionKind::Schema, &template.schema_description),
        section(SectionKind::DomainKnowledge, &template.domain_knowledge),
    ];
    if !fewshot.is_empty() {
        let body = fewshot
            .iter()
            .enumerate()
            .map(|(i, ex)| format!("Example {}\nQuestion: {}\nSQL: {}", i + 1, ex.question, ex.sql))
            .collect::<Vec<_>>()
            .join("\n\n");
        sections.push(section(SectionKind::Examples, &body));
    }
    if !scratchpad_digest.trim().is_empty() {
        sections.push(section(SectionKind::Scratchpad, scratchpad_digest));
    }
    sections.push(section(SectionKind::Question, question));
    sections.push(section(SectionKind::OutputFormat, &template.output_format[&role]));
    Ok(RenderedPrompt::assemble(sections))
}

/// Bare prompt: table and column names plus the question.
pub fn render_minimal(question: &str, catalog: &SchemaCatalog) -> RenderedPrompt {
    let schema = catalog
        .tables
        .iter()
        .map(|t| format!("{}({})", t.name, t.column_names().join(", ")))
        .collect::<Vec<_>>()
        .join("\n");
    RenderedPrompt::assemble(vec![
        PromptSection { kind: SectionKind::Schema, body: schema },
        PromptSection { kind: SectionKind::Question, body: question.trim_end().to_string() },
    ])
}
