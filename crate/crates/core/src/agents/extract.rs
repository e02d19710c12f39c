//! Pulling protocol payloads out of free-form model replies.

use thiserror::Error;

use crate::dsl::{parse_block, Block, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("reply contains no ##name## block header")]
    NoBlockFound,
    #[error("block in reply does not parse: {0}")]
    Parse(ParseError),
}

/// Trimmed, non-empty contents of every `<tag>...</tag>` span, in order.
pub fn tagged_spans(text: &str, tag: &str) -> Vec<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        let Some(end) = after.find(&close) else { break };
        let inner = after[..end].trim();
        if !inner.is_empty() {
            out.push(inner.to_string());
        }
        rest = &after[end + close.len()..];
    }
    out
}

/// The yes/no answer following the last `##response##` marker.
pub fn response_marker(text: &str) -> Option<bool> {
    let (_, tail) = text.rsplit_once("##response##")?;
    let word: String = tail
        .trim_start_matches(|c: char| c.is_whitespace() || c == ':' || c == '*')
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn is_header(line: &str) -> bool {
    let t = line.trim();
    t.len() > 4
        && t.starts_with("##")
        && t.ends_with("##")
        && t[2..t.len() - 2].chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn belongs_to_block(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with("//") || t.starts_with(|c: char| c.is_ascii_digit())
}

/// A headed region of a reply: its first line number (1-based) and text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRegion {
    pub line: usize,
    pub text: String,
}

/// Every `##name##`-headed region. A region runs until the first line that is not blank,
/// a comment, or a node/edge line, so surrounding prose and code fences are dropped.
pub fn block_regions(reply: &str) -> Vec<BlockRegion> {
    let lines: Vec<&str> = reply.lines().collect();
    let mut regions = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if !is_header(lines[i]) {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < lines.len() && !is_header(lines[i]) && belongs_to_block(lines[i]) {
            i += 1;
        }
        regions.push(BlockRegion { line: start + 1, text: lines[start..i].join("\n") });
    }
    regions
}

fn parse_region(region: &BlockRegion) -> Result<Block, ExtractError> {
    parse_block(&region.text).map_err(|e| {
        ExtractError::Parse(ParseError { line: e.line + region.line - 1, kind: e.kind })
    })
}

/// Parses the first block in a reply. Error lines are relative to the reply.
pub fn extract_block(reply: &str) -> Result<Block, ExtractError> {
    let regions = block_regions(reply);
    let first = regions.first().ok_or(ExtractError::NoBlockFound)?;
    parse_region(first)
}

/// Parses every block in a reply, keeping per-block results.
pub fn extract_blocks(reply: &str) -> Vec<Result<Block, ExtractError>> {
    block_regions(reply).iter().map(parse_region).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ID: &str = "##id##\n0:input\n1:output\n0->1";

    #[test]
    fn exact_reply() {
        assert_eq!(extract_block(ID).unwrap().print(), ID);
    }

    #[test]
    fn fenced_with_prose() {
        let reply = format!("Here is the modified block:\n```\n{ID}\n```\nIt keeps the channels at C.");
        assert_eq!(extract_block(&reply).unwrap().print(), ID);
    }

    #[test]
    fn no_header() {
        assert_eq!(extract_block("0:input\n1:output\n0->1"), Err(ExtractError::NoBlockFound));
        assert_eq!(extract_block("###block###\nnothing"), Err(ExtractError::NoBlockFound));
    }

    #[test]
    fn error_lines_are_reply_relative() {
        let reply = "Sure.\n\n##b##\n0:input\n0:output";
        match extract_block(reply) {
            Err(ExtractError::Parse(e)) => assert_eq!(e.line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spans_and_marker() {
        let text = "<inspiration> a </inspiration>,<inspiration>b</inspiration><inspiration> </inspiration>";
        assert_eq!(tagged_spans(text, "inspiration"), vec!["a", "b"]);
        assert_eq!(response_marker("analysis... ##response## Yes."), Some(true));
        assert_eq!(response_marker("##response##: no"), Some(false));
        assert_eq!(response_marker("yes"), None);
    }

    #[test]
    fn two_blocks() {
        let reply = format!("{}\n\n{}", ID.replace("id", "stem"), ID.replace("id", "downsample"));
        let blocks: Vec<_> = extract_blocks(&reply).into_iter().map(|b| b.unwrap().name().to_string()).collect();
        assert_eq!(blocks, vec!["stem", "downsample"]);
    }
}
