//! The modifier's bounded repair dialogue: generate a block, validate it, feed the
//! validator's verdict back, and retry until the block passes or attempts run out.

use serde::{Deserialize, Serialize};

use super::extract::{block_regions, extract_block, ExtractError};
use super::{block_definition, render, AgentError, Dialogue, LlmClient, TemplateId};
use crate::dsl::{parse_block, Block, VarBinding};
use crate::modtree::ArchSet;
use crate::validate::{default_bindings, validate, Role, ValidationReport};

/// One assistant reply and the verdict sent back about it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    pub reply: String,
    /// The feedback object, e.g. `{"status":"success"}`.
    pub feedback: String,
    /// Error context when the attempt failed.
    pub error: Option<String>,
}

impl Attempt {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModifyOutcome {
    /// The validated block, or `None` when every attempt failed.
    pub block: Option<Block>,
    pub dialogue: Dialogue,
    pub attempts: Vec<Attempt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanionOutcome {
    pub blocks: Option<(Block, Block)>,
    pub dialogue: Dialogue,
    pub attempts: Vec<Attempt>,
}

pub struct ModifyRequest<'a> {
    pub base: &'a Block,
    pub suggestion: &'a str,
    /// Advice on producing blocks that pass validation.
    pub correctness_advice: &'a [String],
    /// Advice on producing better-performing blocks.
    pub performance_advice: &'a [String],
    pub role: Role,
    pub max_retry: u32,
    /// Validation bindings; the role defaults when empty.
    pub bindings: &'a [VarBinding],
}

fn numbered(advice: &[String]) -> String {
    if advice.is_empty() {
        return "None.".to_string();
    }
    advice.iter().enumerate().map(|(i, a)| format!("{}. {}", i + 1, a)).collect::<Vec<_>>().join("\n")
}

fn error_feedback(context: &str) -> String {
    serde_json::json!({"status": "error", "context": context}).to_string()
}

fn check_reply(reply: &str, role: Role, bindings: &[VarBinding]) -> Result<Block, String> {
    let block = match extract_block(reply) {
        Ok(block) => block,
        Err(ExtractError::NoBlockFound) => return Err("no block found; the block must start with ##block_name##".into()),
        Err(ExtractError::Parse(e)) => return Err(format!("line {} error: {}", e.line, e.kind)),
    };
    let report = validate(&block, role, bindings);
    if report.is_success() {
        Ok(block)
    } else {
        Err(report.context())
    }
}

/// Runs the generate-validate-repair loop for one block.
pub fn modifier_dialogue(request: &ModifyRequest<'_>, llm: &dyn LlmClient) -> Result<ModifyOutcome, AgentError> {
    if request.max_retry == 0 {
        return Err(AgentError::InvalidRequest("max_retry must be >= 1".into()));
    }
    let defaults;
    let bindings = if request.bindings.is_empty() {
        defaults = default_bindings(request.role);
        &defaults[..]
    } else {
        request.bindings
    };
    let base = request.base.print();
    let correctness = numbered(request.correctness_advice);
    let performance = numbered(request.performance_advice);
    let prompt = render(
        TemplateId::ModifierGenerate,
        &[
            ("definition", block_definition()),
            ("block", &base),
            ("inspiration", request.suggestion),
            ("correctness_experience", &correctness),
            ("performance_experience", &performance),
        ],
    )?;
    let mut dialogue = Dialogue::new(prompt);
    let mut attempts = Vec::new();
    for turn in 0..request.max_retry {
        let reply = dialogue.step(llm)?;
        match check_reply(&reply, request.role, bindings) {
            Ok(block) => {
                attempts.push(Attempt { reply, feedback: ValidationReport::default().feedback_json(), error: None });
                return Ok(ModifyOutcome { block: Some(block), dialogue, attempts });
            }
            Err(context) => {
                let feedback = error_feedback(&context);
                if turn + 1 < request.max_retry {
                    dialogue.push_user(render(TemplateId::ModifierFollowup, &[("feedback", &feedback)])?);
                }
                attempts.push(Attempt { reply, feedback, error: Some(context) });
            }
        }
    }
    Ok(ModifyOutcome { block: None, dialogue, attempts })
}

fn companion_example(example: &ArchSet) -> String {
    let named = |b: &Block, name: &str| b.clone().with_name(name).expect("valid name").print();
    format!(
        "{}\n\n{}\n\n{}",
        named(&example.cell, "cell"),
        named(&example.stem, "stem"),
        named(&example.downsample, "downsample")
    )
}

fn check_companions(reply: &str) -> Result<(Block, Block), String> {
    let regions = block_regions(reply);
    let mut parsed = Vec::new();
    let mut errors = Vec::new();
    for region in &regions {
        match parse_block(&region.text) {
            Ok(block) => parsed.push(block),
            Err(e) => errors.push(format!("line {} error: {}", e.line + region.line - 1, e.kind)),
        }
    }
    if !errors.is_empty() {
        return Err(errors.join("; "));
    }
    let pick = |name: &str, fallback: usize| {
        parsed.iter().find(|b| b.name() == name).or_else(|| parsed.get(fallback)).cloned()
    };
    let (Some(stem), Some(downsample)) = (pick("stem", 0), pick("downsample", 1)) else {
        return Err("the reply must contain a ##stem## block and a ##downsample## block".into());
    };
    let mut contexts = Vec::new();
    for (block, role) in [(&stem, Role::Stem), (&downsample, Role::Downsample)] {
        let report = validate(block, role, &default_bindings(role));
        if !report.is_success() {
            contexts.push(format!("{role} block: {}", report.context()));
        }
    }
    if contexts.is_empty() {
        Ok((stem, downsample))
    } else {
        Err(contexts.join("; "))
    }
}

/// One dialogue that produces the stem and downsample blocks matching a cell.
pub fn modifier_companion_blocks(
    cell: &Block,
    examples: &[ArchSet],
    llm: &dyn LlmClient,
    max_retry: u32,
) -> Result<CompanionOutcome, AgentError> {
    if max_retry == 0 {
        return Err(AgentError::InvalidRequest("max_retry must be >= 1".into()));
    }
    let cell_text = cell.clone().with_name("cell").expect("valid name").print();
    let examples_text = examples.iter().map(companion_example).collect::<Vec<_>>().join("\n\n");
    let prompt = render(
        TemplateId::ModifierStem,
        &[("definition", block_definition()), ("cell", &cell_text), ("examples", &examples_text)],
    )?;
    let mut dialogue = Dialogue::new(prompt);
    let mut attempts = Vec::new();
    for turn in 0..max_retry {
        let reply = dialogue.step(llm)?;
        match check_companions(&reply) {
            Ok(blocks) => {
                attempts.push(Attempt { reply, feedback: ValidationReport::default().feedback_json(), error: None });
                return Ok(CompanionOutcome { blocks: Some(blocks), dialogue, attempts });
            }
            Err(context) => {
                let feedback = error_feedback(&context);
                if turn + 1 < max_retry {
                    dialogue.push_user(render(TemplateId::ModifierFollowup, &[("feedback", &feedback)])?);
                }
                attempts.push(Attempt { reply, feedback, error: Some(context) });
            }
        }
    }
    Ok(CompanionOutcome { blocks: None, dialogue, attempts })
}
