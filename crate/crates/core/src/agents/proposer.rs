//! Ranking candidate inspirations for a block.

use serde::{Deserialize, Serialize};

use super::extract::tagged_spans;
use super::{ask_parsed, render, AgentError, LlmClient, TemplateId, Usage};
use crate::dsl::Block;
use crate::modtree::NodeId;

pub const EXPERT_SOURCE: &str = "expert";

/// A tree node to modify and the suggestion to apply to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub candidate: NodeId,
    pub suggestion: String,
    /// Knowledge item id, or [`EXPERT_SOURCE`] for hand-written suggestions.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    /// A permutation of the candidate indexes, most useful first.
    pub order: Vec<usize>,
    /// Indexes in the reply that were not candidates (or repeated), ignored.
    pub dropped: Vec<usize>,
    /// Candidates the reply omitted, appended in their original order.
    pub appended: Vec<usize>,
    pub usage: Usage,
}

impl Ranking {
    pub fn repaired(&self) -> bool {
        !self.dropped.is_empty() || !self.appended.is_empty()
    }
}

fn parse_indexes(reply: &str) -> Option<Vec<usize>> {
    let span = tagged_spans(reply, "response").into_iter().next()?;
    let indexes: Vec<usize> = span
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter_map(|t| t.trim().trim_matches(|c: char| !c.is_ascii_digit()).parse().ok())
        .collect();
    (!indexes.is_empty()).then_some(indexes)
}

/// Asks the model to order the candidates by usefulness for improving `block` and repairs
/// the answer into a permutation of the candidate indexes.
pub fn proposer_rank(block: &Block, candidates: &[(usize, &str)], llm: &dyn LlmClient) -> Result<Ranking, AgentError> {
    match candidates {
        [] => return Err(AgentError::InvalidRequest("proposer needs at least one candidate".into())),
        [(only, _)] => {
            return Ok(Ranking { order: vec![*only], dropped: Vec::new(), appended: Vec::new(), usage: Usage::default() })
        }
        _ => {}
    }
    let listing = candidates.iter().map(|(i, text)| format!("{i}:{text}")).collect::<Vec<_>>().join("\n");
    let block_text = block.print();
    let prompt = render(TemplateId::ProposerRank, &[("block", &block_text), ("candidates", &listing)])?;
    let requirement = "Wrap the comma-separated inspiration indexes with <response> and </response>.";
    let (indexes, dialogue) = ask_parsed(llm, TemplateId::ProposerRank, prompt, requirement, parse_indexes)?;

    let mut order = Vec::with_capacity(candidates.len());
    let mut dropped = Vec::new();
    for index in indexes {
        if candidates.iter().any(|(i, _)| *i == index) && !order.contains(&index) {
            order.push(index);
        } else {
            dropped.push(index);
        }
    }
    let mut appended = Vec::new();
    for (index, _) in candidates {
        if !order.contains(index) {
            order.push(*index);
            appended.push(*index);
        }
    }
    Ok(Ranking { order, dropped, appended, usage: dialogue.usage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ReplayClient, TranscriptEntry};
    use crate::agents::Message;
    use crate::dsl::parse_block;

    fn block() -> Block {
        parse_block("##id##\n0:input\n1:output\n0->1").unwrap()
    }

    fn prompt(cands: &[(usize, &str)]) -> String {
        let listing = cands.iter().map(|(i, t)| format!("{i}:{t}")).collect::<Vec<_>>().join("\n");
        render(TemplateId::ProposerRank, &[("block", &block().print()), ("candidates", &listing)]).unwrap()
    }

    fn replay(cands: &[(usize, &str)], reply: &str) -> ReplayClient {
        let messages = vec![Message::user(prompt(cands))];
        ReplayClient::new(vec![TranscriptEntry {
            model: "m".into(),
            messages,
            response: reply.into(),
            input_tokens: 10,
            output_tokens: 5,
        }])
    }

    const CANDS: [(usize, &str); 3] = [(1, "a"), (2, "b"), (3, "c")];

    #[test]
    fn single_candidate_needs_no_call() {
        let client = ReplayClient::new(Vec::new());
        let r = proposer_rank(&block(), &[(7, "x")], &client).unwrap();
        assert_eq!(r.order, vec![7]);
        assert_eq!(r.usage.calls, 0);
    }

    #[test]
    fn parses_permutation() {
        let client = replay(&CANDS, "<response>3,1,2</response>");
        let r = proposer_rank(&block(), &CANDS, &client).unwrap();
        assert_eq!(r.order, vec![3, 1, 2]);
        assert!(!r.repaired());
    }

    #[test]
    fn repairs_unknown_and_missing() {
        let client = replay(&CANDS, "<response>3,9</response>");
        let r = proposer_rank(&block(), &CANDS, &client).unwrap();
        assert_eq!(r.order, vec![3, 1, 2]);
        assert_eq!(r.dropped, vec![9]);
        assert_eq!(r.appended, vec![1, 2]);
    }
}
