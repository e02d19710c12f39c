//! Turning iteration history into design experience, and retrieving it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingProvider;
use super::store::{StoreEntry, VectorStore};
use super::KnowledgeError;
use crate::agents::{ask_parsed, block_definition, block_regions, render, tagged_spans, Attempt, LlmClient, TemplateId, Usage};
use crate::dsl::Block;
use crate::history::{HistoryEntry, HistoryLog};
use crate::modtree::ModTree;
use crate::validate::Role;

pub const SUGGESTION_WORD_LIMIT: usize = 50;
pub const EXPERIENCE_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Failure,
    FailureToSuccess,
    Success,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Failure => "failure",
            Category::FailureToSuccess => "failure-to-success",
            Category::Success => "success",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Category::Failure, Category::FailureToSuccess, Category::Success]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown experience category '{s}'"))
    }
}

/// Tips help blocks pass validation; suggestions help them perform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceKind {
    Tip,
    Suggestion,
}

impl AdviceKind {
    pub fn name(self) -> &'static str {
        match self {
            AdviceKind::Tip => "tip",
            AdviceKind::Suggestion => "suggestion",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceRecord {
    pub id: String,
    pub category: Category,
    pub kind: AdviceKind,
    pub role: Role,
    pub advice: String,
    pub key_embedding: Vec<f32>,
}

impl ExperienceRecord {
    fn from_entry(entry: &StoreEntry) -> Option<ExperienceRecord> {
        let meta = |k: &str| entry.metadata.get(k).map(String::as_str);
        Some(ExperienceRecord {
            id: entry.id.clone(),
            category: meta("category")?.parse().ok()?,
            kind: if meta("kind")? == "tip" { AdviceKind::Tip } else { AdviceKind::Suggestion },
            role: meta("role")?.parse().ok()?,
            advice: entry.payload.clone(),
            key_embedding: entry.vector.clone(),
        })
    }
}

/// One thing worth learning from a history entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Lesson {
    /// Validation kept failing; `block` is the last rejected reply's block text.
    Unfixed { role: Role, block: String, error: String },
    /// Validation failed, then a later reply passed.
    Fixed { role: Role, block: String, error: String },
    /// The trained child scored below its parent.
    Degraded { parent_accuracy: f64, accuracy: f64 },
    /// The trained child matched or beat its parent.
    Improved { accuracy: f64 },
}

impl Lesson {
    pub fn category(&self) -> Category {
        match self {
            Lesson::Unfixed { .. } | Lesson::Degraded { .. } => Category::Failure,
            Lesson::Fixed { .. } => Category::FailureToSuccess,
            Lesson::Improved { .. } => Category::Success,
        }
    }

    pub fn kind(&self) -> AdviceKind {
        match self {
            Lesson::Unfixed { .. } | Lesson::Fixed { .. } => AdviceKind::Tip,
            _ => AdviceKind::Suggestion,
        }
    }

    pub fn role(&self) -> Role {
        match self {
            Lesson::Unfixed { role, .. } | Lesson::Fixed { role, .. } => *role,
            _ => Role::Cell,
        }
    }
}

fn attempt_lesson(attempts: &[Attempt], role_of: impl Fn(&str) -> Role) -> Option<Lesson> {
    let failed = attempts.iter().rev().find(|a| a.error.is_some())?;
    let error = failed.error.clone().unwrap_or_default();
    let block = block_regions(&failed.reply).into_iter().next().map_or_else(|| failed.reply.clone(), |r| r.text);
    let role = role_of(&error);
    if attempts.last().is_some_and(Attempt::succeeded) {
        Some(Lesson::Fixed { role, block, error })
    } else {
        Some(Lesson::Unfixed { role, block, error })
    }
}

/// The lessons in a history entry, in a fixed order. Pure: depends only on the entry.
pub fn classify(entry: &HistoryEntry) -> Vec<Lesson> {
    let mut lessons = Vec::new();
    lessons.extend(attempt_lesson(&entry.attempts, |_| Role::Cell));
    lessons.extend(attempt_lesson(&entry.companion_attempts, |error| {
        if error.starts_with("downsample block") {
            Role::Downsample
        } else {
            Role::Stem
        }
    }));
    if let (Some(_), Some(accuracy), Some(parent_accuracy)) = (entry.trained_node(), entry.accuracy, entry.parent_accuracy) {
        if accuracy < parent_accuracy {
            lessons.push(Lesson::Degraded { parent_accuracy, accuracy });
        } else {
            lessons.push(Lesson::Improved { accuracy });
        }
    }
    lessons
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Advice {
    pub text: String,
    /// The reply exceeded the word limit and was cut.
    pub truncated: bool,
    pub usage: Usage,
}

fn single_span(tag: &'static str) -> impl Fn(&str) -> Option<String> {
    move |reply| tagged_spans(reply, tag).into_iter().map(|s| s.trim().to_string()).find(|s| !s.is_empty())
}

/// Asks for a general tip that avoids the validation error `finding` seen in `block`.
pub fn reflect_error(block: &str, finding: &str, llm: &dyn LlmClient) -> Result<Advice, KnowledgeError> {
    if finding.trim().is_empty() {
        return Err(KnowledgeError::InvalidInput("finding must not be empty".into()));
    }
    let prompt = render(
        TemplateId::ReflectorError,
        &[("definition", block_definition()), ("block", block), ("error", finding)],
    )?;
    let requirement = "Wrap the tip with <tip> and </tip>.";
    let (text, dialogue) = ask_parsed(llm, TemplateId::ReflectorError, prompt, requirement, single_span("tip"))?;
    Ok(Advice { text, truncated: false, usage: dialogue.usage })
}

/// Cuts `text` to at most `limit` words, preferring the last sentence end inside the limit.
pub fn limit_words(text: &str, limit: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= limit {
        return (words.join(" "), false);
    }
    let kept = &words[..limit];
    let sentence_end = kept.iter().rposition(|w| w.ends_with(['.', '!', '?']));
    let cut = match sentence_end {
        Some(i) => kept[..=i].join(" "),
        None => format!("{}.", kept.join(" ").trim_end_matches([',', ';', ':'])),
    };
    (cut, true)
}

fn percent(acc: f64) -> String {
    format!("{:.2}%", acc * 100.0)
}

/// Asks why `new` scored below `old` and for a suggestion that avoids the drop.
pub fn reflect_performance(
    old: &Block,
    old_acc: f64,
    new: &Block,
    new_acc: f64,
    llm: &dyn LlmClient,
) -> Result<Advice, KnowledgeError> {
    if new_acc >= old_acc {
        return Err(KnowledgeError::InvalidInput(format!(
            "performance reflection needs a drop, got {new_acc} after {old_acc}"
        )));
    }
    let (old_text, new_text) = (old.print(), new.print());
    let prompt = render(
        TemplateId::ReflectorPerf,
        &[
            ("definition", block_definition()),
            ("raw_block", &old_text),
            ("raw_accuracy", &percent(old_acc)),
            ("new_block", &new_text),
            ("new_accuracy", &percent(new_acc)),
        ],
    )?;
    let requirement = "Wrap the suggestion with <suggestion> and </suggestion>.";
    let (raw, dialogue) = ask_parsed(llm, TemplateId::ReflectorPerf, prompt, requirement, single_span("suggestion"))?;
    let (text, truncated) = limit_words(&raw, SUGGESTION_WORD_LIMIT);
    if truncated {
        log::info!("suggestion cut to {SUGGESTION_WORD_LIMIT} words");
    }
    Ok(Advice { text, truncated, usage: dialogue.usage })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReflectionReport {
    pub added: usize,
    /// `(history position, reason)` of lessons that could not be turned into advice.
    pub skipped: Vec<(usize, String)>,
    pub usage: Usage,
}

/// Record id for lesson `slot` of history entry `position`.
pub fn record_id(position: usize, slot: usize) -> String {
    format!("h{position}.{slot}")
}

fn advise(lesson: &Lesson, entry: &HistoryEntry, tree: &ModTree, llm: &dyn LlmClient) -> Result<Advice, KnowledgeError> {
    match lesson {
        Lesson::Unfixed { block, error, .. } | Lesson::Fixed { block, error, .. } => reflect_error(block, error, llm),
        Lesson::Degraded { parent_accuracy, accuracy } => {
            let parent = tree
                .node(entry.proposal.candidate)
                .ok_or_else(|| KnowledgeError::InvalidInput(format!("unknown node {}", entry.proposal.candidate)))?;
            let new = entry.block.as_ref().ok_or_else(|| KnowledgeError::InvalidInput("trained entry without a block".into()))?;
            reflect_performance(&parent.arch.cell, *parent_accuracy, new, *accuracy, llm)
        }
        Lesson::Improved { .. } => Ok(Advice { text: entry.proposal.suggestion.clone(), truncated: false, usage: Usage::default() }),
    }
}

/// Reflects on every history lesson not yet in `store`, keyed by the proposal embedding.
/// Failures are logged and skipped; they are retried on the next call.
pub fn reflect_history(
    history: &HistoryLog,
    tree: &ModTree,
    llm: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    store: &mut VectorStore,
) -> ReflectionReport {
    let mut report = ReflectionReport::default();
    for (position, entry) in history.entries().iter().enumerate() {
        for (slot, lesson) in classify(entry).iter().enumerate() {
            let id = record_id(position, slot);
            if store.get(&id).is_some() {
                continue;
            }
            let result = advise(lesson, entry, tree, llm).and_then(|advice| {
                report.usage += advice.usage;
                let vector = embedder.embed(&entry.proposal.suggestion)?;
                let metadata = BTreeMap::from([
                    ("category".to_string(), lesson.category().to_string()),
                    ("kind".to_string(), lesson.kind().name().to_string()),
                    ("role".to_string(), lesson.role().to_string()),
                    ("history".to_string(), position.to_string()),
                ]);
                store.add(StoreEntry { id, vector, payload: advice.text, metadata })?;
                Ok(())
            });
            match result {
                Ok(()) => report.added += 1,
                Err(e) => {
                    log::warn!("history entry {position} lesson {slot} skipped: {e}");
                    report.skipped.push((position, e.to_string()));
                }
            }
        }
    }
    report
}

/// The five records whose proposal keys are most similar to `proposal`.
pub fn retrieve_experience(
    store: &VectorStore,
    embedder: &dyn EmbeddingProvider,
    proposal: &str,
) -> Result<Vec<ExperienceRecord>, KnowledgeError> {
    if store.is_empty() {
        return Ok(Vec::new());
    }
    let q = embedder.embed(proposal)?;
    Ok(store
        .top_k(&q, EXPERIENCE_TOP_K)
        .into_iter()
        .filter_map(|(i, _)| ExperienceRecord::from_entry(&store.entries()[i]))
        .collect())
}
