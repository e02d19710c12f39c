//! A rule-based offline model that answers every prompt template deterministically.
//!
//! It is a stand-in for development and for producing replay transcripts; replies are a
//! pure function of the request. Behaviour worth knowing when writing fixtures:
//! - relevance: "yes" when title or abstract mention an architecture keyword;
//! - extraction: up to three body sentences with architecture keywords;
//! - ranking: candidates ordered by keyword hits, then index;
//! - modification: an edit chosen by keywords in the inspiration (attention, depthwise,
//!   dilated, activation; a 1x1 bottleneck otherwise). Inspirations mentioning "region"
//!   get an undefined `ROIAlign` node on the first reply, and ones mentioning
//!   "hypergraph" always get a block with an indivisible `groups` value;
//! - companions: the first example stem and downsample blocks are copied.

use std::collections::{BTreeMap, BTreeSet};

use super::extract::block_regions;
use super::llm::{ChatRole, Completion, LlmClient, LlmError, Message};
use crate::dsl::{parse_block, parse_expr, Block, NodeIndex, OpInstance, OpKind};

const KEYWORDS: &[&str] = &[
    "block",
    "convolution",
    "attention",
    "residual",
    "backbone",
    "architecture",
    "layer",
    "channel",
    "kernel",
    "branch",
];

const DEFAULT_STEM: &str = "##stem##\n0:input\n1:Conv2d(dim,3,2)\n2:BN\n3:ReLU\n4:output\n0->1\n1->2\n2->3\n3->4";
const DEFAULT_DOWNSAMPLE: &str = "##downsample##\n0:input\n1:Conv2d(dim,3,2)\n2:BN\n3:output\n0->1\n1->2\n2->3";

pub struct ScriptedClient {
    model: String,
}

impl Default for ScriptedClient {
    fn default() -> Self {
        ScriptedClient { model: "scripted-v1".to_string() }
    }
}

impl ScriptedClient {
    pub fn new() -> ScriptedClient {
        ScriptedClient::default()
    }
}

fn tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

fn section<'a>(text: &'a str, start: &str, end: &str) -> &'a str {
    let Some(pos) = text.find(start) else { return "" };
    let rest = &text[pos + start.len()..];
    let stop = rest.find(end).unwrap_or(rest.len());
    rest[..stop].trim()
}

fn keyword_hits(text: &str) -> usize {
    let lower = text.to_lowercase();
    KEYWORDS.iter().filter(|k| lower.contains(*k)).count()
}

impl LlmClient for ScriptedClient {
    fn chat(&self, messages: &[Message]) -> Result<Completion, LlmError> {
        let prompt = messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let turn = messages.iter().filter(|m| m.role == ChatRole::Assistant).count();
        let text = if prompt.contains("###Title###") {
            relevance(prompt)
        } else if prompt.contains("The following is the content of the paper:") {
            extraction(prompt)
        } else if prompt.contains("###Candidate inspirations###") {
            ranking(prompt)
        } else if prompt.contains("###inspiration###") {
            modification(prompt, turn)
        } else if prompt.contains("###Examples###") {
            companions(prompt)
        } else if prompt.contains("Error reason:") {
            tip(prompt)
        } else if prompt.contains("<suggestion>") {
            suggestion(prompt)
        } else {
            "I am not sure what is being asked.".to_string()
        };
        let input_chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
        Ok(Completion { input_tokens: tokens(input_chars), output_tokens: tokens(text.chars().count()), text })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

fn relevance(prompt: &str) -> String {
    let title = section(prompt, "###Title###", "###Abstract###");
    let abstract_ = section(prompt, "###Abstract###", "###Output###");
    let relevant = keyword_hits(title) + keyword_hits(abstract_) > 0;
    format!(
        "The paper \"{title}\" {} the design of backbone blocks. ##response## {}",
        if relevant { "bears on" } else { "does not bear on" },
        if relevant { "yes" } else { "no" }
    )
}

fn extraction(prompt: &str) -> String {
    let body = section(prompt, "The following is the content of the paper:", "###Output###");
    let picked: Vec<String> = body
        .split('.')
        .map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty() && keyword_hits(s) > 0)
        .take(3)
        .map(|s| format!("<inspiration>{s}.</inspiration>"))
        .collect();
    if picked.is_empty() {
        "The paper does not describe block design.".to_string()
    } else {
        picked.join(",")
    }
}

fn ranking(prompt: &str) -> String {
    let listing = section(prompt, "'inspiration index:inspiration'.", "###Output###");
    let mut scored: Vec<(usize, usize)> = listing
        .lines()
        .filter_map(|line| {
            let (index, text) = line.split_once(':')?;
            Some((index.trim().parse().ok()?, keyword_hits(text)))
        })
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let order: Vec<String> = scored.iter().map(|(i, _)| i.to_string()).collect();
    format!("<response>{}</response>", order.join(","))
}

/// Mutable view of a block for applying edits.
struct Editor {
    name: String,
    nodes: BTreeMap<NodeIndex, OpInstance>,
    edges: BTreeSet<(NodeIndex, NodeIndex)>,
}

fn op(kind: OpKind, args: &[&str]) -> OpInstance {
    let raw = args.iter().map(|a| match a.split_once('=') {
        Some((name, value)) => (Some(name.to_string()), parse_expr(value).expect("scripted expression")),
        None => (None, parse_expr(a).expect("scripted expression")),
    });
    OpInstance::new(kind, raw.collect()).expect("scripted arguments")
}

impl Editor {
    fn new(block: &Block) -> Editor {
        let (name, nodes, edges) = block.clone().into_parts();
        Editor { name, nodes, edges }
    }

    fn add(&mut self, op: OpInstance) -> NodeIndex {
        let index = self.nodes.keys().next_back().map_or(0, |i| i + 1);
        self.nodes.insert(index, op);
        index
    }

    fn output(&self) -> NodeIndex {
        *self.nodes.iter().find(|(_, op)| op.kind() == Some(OpKind::Output)).expect("block has output").0
    }

    /// Detaches the output node and returns its former single input.
    fn detach_output(&mut self) -> Option<NodeIndex> {
        let out = self.output();
        let preds: Vec<_> = self.edges.iter().filter(|(_, d)| *d == out).map(|(s, _)| *s).collect();
        let [p] = preds[..] else { return None };
        self.edges.remove(&(p, out));
        Some(p)
    }

    fn chain(&mut self, from: NodeIndex, ops: Vec<OpInstance>) -> NodeIndex {
        let mut last = from;
        for op in ops {
            let next = self.add(op);
            self.edges.insert((last, next));
            last = next;
        }
        last
    }

    fn finish(mut self, last: NodeIndex) -> Block {
        let out = self.output();
        self.edges.insert((last, out));
        Block::from_parts(self.name, self.nodes, self.edges).expect("edit keeps block invariants")
    }
}

fn edit(block: &Block, inspiration: &str) -> Block {
    let lower = inspiration.to_lowercase();
    let mut e = Editor::new(block);
    if lower.contains("activation") || lower.contains("gelu") {
        let relus: Vec<NodeIndex> =
            e.nodes.iter().filter(|(_, op)| op.kind() == Some(OpKind::ReLU)).map(|(i, _)| *i).collect();
        if !relus.is_empty() {
            for i in relus {
                e.nodes.insert(i, OpInstance::simple(OpKind::GELU));
            }
            return Block::from_parts(e.name, e.nodes, e.edges).expect("swap keeps invariants");
        }
    }
    let Some(p) = e.detach_output() else { return block.clone() };
    let last = if lower.contains("attention") {
        let gate = e.chain(
            p,
            vec![
                op(OpKind::AdaptiveAvgPool2d, &["1"]),
                op(OpKind::Conv2d, &["C/4", "1"]),
                OpInstance::simple(OpKind::ReLU),
                op(OpKind::Conv2d, &["C", "1"]),
                OpInstance::simple(OpKind::Sigmoid),
            ],
        );
        let mul = e.add(OpInstance::simple(OpKind::Mul));
        e.edges.insert((p, mul));
        e.edges.insert((gate, mul));
        mul
    } else if lower.contains("depthwise") || lower.contains("separable") || lower.contains("dilat") {
        let conv = if lower.contains("dilat") {
            op(OpKind::Conv2d, &["C", "3", "dilation=2"])
        } else {
            op(OpKind::Conv2d, &["C", "3", "groups=C"])
        };
        let branch = e.chain(p, vec![conv, OpInstance::simple(OpKind::BN)]);
        let add = e.add(OpInstance::simple(OpKind::Add));
        e.edges.insert((p, add));
        e.edges.insert((branch, add));
        add
    } else {
        e.chain(p, vec![op(OpKind::Conv2d, &["C", "1"]), OpInstance::simple(OpKind::BN), OpInstance::simple(OpKind::GELU)])
    };
    e.finish(last)
}

fn modification(prompt: &str, turn: usize) -> String {
    let block_text = section(prompt, "###block###", "###inspiration###");
    let inspiration = section(prompt, "###inspiration###", "###Design Experience###");
    let Ok(base) = parse_block(block_text) else {
        return "The given block could not be read.".to_string();
    };
    let lower = inspiration.to_lowercase();
    let mut block = edit(&base, inspiration);
    if lower.contains("hypergraph") {
        let mut e = Editor::new(&block);
        if let Some(p) = e.detach_output() {
            let last = e.chain(p, vec![op(OpKind::Conv2d, &["C", "3", "groups=5"])]);
            block = e.finish(last);
        }
    } else if lower.contains("region") && turn == 0 {
        let mut e = Editor::new(&block);
        if let Some(p) = e.detach_output() {
            let raw = OpInstance::unknown("ROIAlign", Some("output_size=7".to_string()));
            let last = e.chain(p, vec![raw]);
            block = e.finish(last);
        }
    }
    if block == base {
        return block.print();
    }
    format!("Here is the modified block:\n```\n{}\n```", block.print())
}

fn companions(prompt: &str) -> String {
    let examples = section(prompt, "###Examples###", "###Output###");
    let mut stem = None;
    let mut downsample = None;
    for region in block_regions(examples) {
        if let Ok(block) = parse_block(&region.text) {
            match block.name() {
                "stem" if stem.is_none() => stem = Some(block.print()),
                "downsample" if downsample.is_none() => downsample = Some(block.print()),
                _ => {}
            }
        }
    }
    format!(
        "{}\n\n{}",
        stem.unwrap_or_else(|| DEFAULT_STEM.to_string()),
        downsample.unwrap_or_else(|| DEFAULT_DOWNSAMPLE.to_string())
    )
}

fn tip(prompt: &str) -> String {
    let error = section(prompt, "Error reason:", "###output###").to_lowercase();
    let advice = if error.contains("undefined computation") {
        "Only use operations from the listed catalog; express unsupported layers such as region pooling through listed pooling and convolution operations."
    } else if error.contains("groups") {
        "Choose the groups of every Conv2d as a common divisor of its input channels and out_channels, for example a divisor of C."
    } else if error.contains("broadcasting") || error.contains("concat") {
        "Keep every branch that meets at Add, Mul or concat at the same spatial size by using stride 1 with same-size kernels or adaptive pooling to 1x1 for gating weights."
    } else if error.contains("channels") || error.contains("cell output") {
        "End every path of the block with an operation whose out_channels is C so the block keeps C channels."
    } else {
        "Trace the tensor shape along every path from input to output before emitting the block."
    };
    format!("The error comes from a mismatch with the block definition. <tip>{advice}</tip>")
}

fn suggestion(prompt: &str) -> String {
    const SUGGESTIONS: [&str; 3] = [
        "Keep the original residual path intact and add new operations as parallel branches that are merged back with the identity.",
        "Avoid stacking several new layers at the end of the block; place normalization right after each added convolution.",
        "Prefer lightweight gating or attention branches over extra full convolutions so the parameter budget still allows a wide network.",
    ];
    let pick = prompt.bytes().fold(0usize, |acc, b| acc.wrapping_mul(31).wrapping_add(b as usize)) % SUGGESTIONS.len();
    format!("The modified block lost accuracy. <suggestion>{}</suggestion>", SUGGESTIONS[pick])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{extract_block, render, response_marker, tagged_spans, TemplateId};
    use crate::validate::{validate_role, Role};

    const RESNET: &str = "##cell##\n0:input\n1:Conv2d(C,3)\n2:BN\n3:ReLU\n4:Conv2d(C,3)\n5:BN\n6:Add\n7:ReLU\n8:output\n0->1\n1->2\n2->3\n3->4\n4->5\n5->6\n0->6\n6->7\n7->8";

    fn ask(prompt: String) -> String {
        ScriptedClient::new().chat(&[Message::user(prompt)]).unwrap().text
    }

    fn modify(inspiration: &str) -> String {
        ask(render(
            TemplateId::ModifierGenerate,
            &[
                ("definition", "def"),
                ("block", RESNET),
                ("inspiration", inspiration),
                ("correctness_experience", "None."),
                ("performance_experience", "None."),
            ],
        )
        .unwrap())
    }

    #[test]
    fn edits_produce_valid_cells() {
        for insp in ["Use channel attention", "Use depthwise convolution", "Use dilated kernels", "Use GELU activation", "Widen"] {
            let block = extract_block(&modify(insp)).unwrap();
            let report = validate_role(&block, Role::Cell);
            assert!(report.is_success(), "{insp}: {}", report.context());
            assert_ne!(block.print(), RESNET);
        }
    }

    #[test]
    fn region_and_hypergraph_triggers() {
        let block = extract_block(&modify("Use region features")).unwrap();
        assert!(validate_role(&block, Role::Cell).context().contains("Undefined computation ROIAlign is used"));
        let block = extract_block(&modify("hypergraph mixing")).unwrap();
        assert!(!validate_role(&block, Role::Cell).is_success());
    }

    #[test]
    fn reader_replies_follow_protocol() {
        let yes = ask(render(TemplateId::ReaderRelevance, &[("title", "Residual attention"), ("abstract", "x")]).unwrap());
        assert_eq!(response_marker(&yes), Some(true));
        let no = ask(render(TemplateId::ReaderRelevance, &[("title", "Crop yields"), ("abstract", "soil")]).unwrap());
        assert_eq!(response_marker(&no), Some(false));
        let spans = ask(render(TemplateId::ReaderExtract, &[("paper", "We add attention to each block. Results improve.")]).unwrap());
        assert_eq!(tagged_spans(&spans, "inspiration"), vec!["We add attention to each block."]);
    }
}
