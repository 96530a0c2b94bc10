//! Instruction strings handed to embedding providers alongside the record
//! text, and the Yes/No prompt for decoder scoring.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::model::{TaskGroup, TaskSpec};

pub const DEFAULT_PREFIX: &str =
    "Given a patient's electronic healthcare record (EHR) in Markdown format, retrieve relevant passages that answer the query:";
pub const GENERIC_QUERY: &str = "what are the key clinical features of the patient to predict future medical events";
pub const DECODER_SUFFIX: &str = "Answer STRICTLY with a single token: Yes or No. No punctuation, no extra words.";

/// Bundled task table: `task_id<TAB>query<TAB>group`.
pub const DEFAULT_INSTRUCTIONS_TSV: &str = include_str!("../data/instructions.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionMode {
    #[default]
    TaskSpecific,
    Generic,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionConfig {
    pub mode: InstructionMode,
    pub prefix: String,
    pub generic_query: String,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        InstructionConfig { mode: InstructionMode::TaskSpecific, prefix: DEFAULT_PREFIX.into(), generic_query: GENERIC_QUERY.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstructionError {
    #[error("task {0} has no instruction query")]
    MissingQuery(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("instruction file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// The instruction for `task` under `config.mode`.
pub fn build_prompt(task: &TaskSpec, config: &InstructionConfig) -> Result<String, InstructionError> {
    match config.mode {
        InstructionMode::Empty => Ok(String::new()),
        InstructionMode::Generic => Ok(join(&config.prefix, &config.generic_query)),
        InstructionMode::TaskSpecific => {
            let query = task.instruction_query.trim();
            if query.is_empty() {
                return Err(InstructionError::MissingQuery(task.task_id.clone()));
            }
            Ok(join(&config.prefix, query))
        }
    }
}

fn join(prefix: &str, query: &str) -> String {
    match (prefix.trim_end(), query) {
        ("", q) => q.to_string(),
        (p, q) => format!("{p} {q}"),
    }
}

/// Chat-style prompt for Yes/No decoder scoring: task instruction, the
/// record verbatim, then the answer-format line.
pub fn decoder_prompt(task: &TaskSpec, record_text: &str, config: &InstructionConfig) -> Result<String, InstructionError> {
    let instruction = build_prompt(task, config)?;
    let mut prompt = String::with_capacity(instruction.len() + record_text.len() + DECODER_SUFFIX.len() + 4);
    if !instruction.is_empty() {
        prompt.push_str(&instruction);
        prompt.push_str("\n\n");
    }
    prompt.push_str(record_text);
    if !record_text.ends_with('\n') {
        prompt.push('\n');
    }
    prompt.push('\n');
    prompt.push_str(DECODER_SUFFIX);
    Ok(prompt)
}

/// Tasks keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskTable {
    tasks: BTreeMap<String, TaskSpec>,
}

impl TaskTable {
    pub fn with_defaults() -> Self {
        TaskTable::parse(DEFAULT_INSTRUCTIONS_TSV, &TaskTable::default()).expect("bundled instruction table parses")
    }

    /// Parse `task_id<TAB>query[<TAB>group]`. A missing group is looked up in
    /// `known`; unknown tasks then need the third column.
    pub fn parse(tsv: &str, known: &TaskTable) -> Result<Self, InstructionError> {
        let mut tasks = BTreeMap::new();
        for (i, raw) in tsv.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| InstructionError::Parse { line: i + 1, reason: reason.into() };
            let mut cols = line.split('\t');
            let task_id = cols.next().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(|| err("missing task id"))?;
            let query = cols.next().map(str::trim).ok_or_else(|| err("expected task_id<TAB>query"))?;
            let group = match cols.next().map(str::trim) {
                Some(g) => TaskGroup::parse(g).ok_or_else(|| err("unknown task group"))?,
                None => known.get(task_id).map(|t| t.task_group).ok_or_else(|| err("task group required for new tasks"))?,
            };
            if cols.next().is_some() {
                return Err(err("too many columns"));
            }
            tasks.insert(
                task_id.to_string(),
                TaskSpec { task_id: task_id.to_string(), task_group: group, instruction_query: query.to_string() },
            );
        }
        Ok(TaskTable { tasks })
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.get(task_id)
    }

    pub fn require(&self, task_id: &str) -> Result<&TaskSpec, InstructionError> {
        self.get(task_id).ok_or_else(|| InstructionError::UnknownTask(task_id.to_string()))
    }

    pub fn insert(&mut self, task: TaskSpec) {
        self.tasks.insert(task.task_id.clone(), task);
    }

    /// Entries of `other` replace entries with the same id.
    pub fn merge(&mut self, other: TaskTable) {
        self.tasks.extend(other.tasks);
    }

    pub fn iter(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
