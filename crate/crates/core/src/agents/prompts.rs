//! Prompt templates. The text lives in `prompts/*.txt`; slots are written `{{name}}`.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    ReaderRelevance,
    ReaderExtract,
    ProposerRank,
    ModifierGenerate,
    ModifierStem,
    ModifierFollowup,
    ReflectorError,
    ReflectorPerf,
    Reprompt,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::ReaderRelevance,
        TemplateId::ReaderExtract,
        TemplateId::ProposerRank,
        TemplateId::ModifierGenerate,
        TemplateId::ModifierStem,
        TemplateId::ModifierFollowup,
        TemplateId::ReflectorError,
        TemplateId::ReflectorPerf,
        TemplateId::Reprompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::ReaderRelevance => "reader-relevance",
            TemplateId::ReaderExtract => "reader-extract",
            TemplateId::ProposerRank => "proposer-rank",
            TemplateId::ModifierGenerate => "modifier-generate",
            TemplateId::ModifierStem => "modifier-stem",
            TemplateId::ModifierFollowup => "modifier-followup",
            TemplateId::ReflectorError => "reflector-error",
            TemplateId::ReflectorPerf => "reflector-perf",
            TemplateId::Reprompt => "reprompt",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::ReaderRelevance => include_str!("../../prompts/reader_relevance.txt"),
            TemplateId::ReaderExtract => include_str!("../../prompts/reader_extract.txt"),
            TemplateId::ProposerRank => include_str!("../../prompts/proposer_rank.txt"),
            TemplateId::ModifierGenerate => include_str!("../../prompts/modifier_generate.txt"),
            TemplateId::ModifierStem => include_str!("../../prompts/modifier_stem.txt"),
            TemplateId::ModifierFollowup => include_str!("../../prompts/modifier_followup.txt"),
            TemplateId::ReflectorError => include_str!("../../prompts/reflector_error.txt"),
            TemplateId::ReflectorPerf => include_str!("../../prompts/reflector_perf.txt"),
            TemplateId::Reprompt => include_str!("../../prompts/reprompt.txt"),
        }
    }

    /// Slot names in order of first appearance.
    pub fn slots(self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        let mut rest = self.text();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else { break };
            let name = &after[..end];
            if !out.contains(&name) {
                out.push(name);
            }
            rest = &after[end + 2..];
        }
        out
    }
}

/// The block-language definition embedded in modifier and reflector prompts.
pub fn block_definition() -> &'static str {
    include_str!("../../prompts/block_definition.txt").trim_end()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template} needs slot '{slot}'")]
    MissingSlot { template: &'static str, slot: String },
    #[error("template {template} has no slot '{slot}'")]
    UnknownSlot { template: &'static str, slot: String },
}

/// Substitutes every `{{slot}}` in one pass, so slot values are never re-scanned.
pub fn render(id: TemplateId, values: &[(&str, &str)]) -> Result<String, PromptError> {
    for (slot, _) in values {
        if !id.slots().contains(slot) {
            return Err(PromptError::UnknownSlot { template: id.name(), slot: slot.to_string() });
        }
    }
    let text = id.text().trim_end();
    let mut out = String::with_capacity(text.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").expect("templates close every slot");
        let name = &after[..end];
        let value = values
            .iter()
            .find(|(slot, _)| *slot == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingSlot { template: id.name(), slot: name.to_string() })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
