//! Blocks: named DAGs of catalog operations, with the line-oriented text format
//!
//! ```text
//! ##resnet_basic##
//! 0:input
//! 1:Conv2d(out_channels=C,kernel_size=3)
//! 2:output
//! 0->1
//! 1->2
//! ```
//!
//! Parsing normalizes arguments: positional arguments are named after the catalog,
//! arguments equal to their default are dropped. Printing therefore emits a canonical
//! form and `parse(print(b)) == b` for every block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::catalog::{OpKind, ParamDefault};
use super::expr::{parse_expr, EvalError, Expr, VarBinding};

pub type NodeIndex = u32;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operation {
    Known(OpKind),
    /// An operation outside the catalog. Kept so the validator can name it.
    Unknown { name: String, raw_args: Option<String> },
}

impl Operation {
    pub fn name(&self) -> &str {
        match self {
            Operation::Known(kind) => kind.name(),
            Operation::Unknown { name, .. } => name,
        }
    }

    pub fn kind(&self) -> Option<OpKind> {
        match self {
            Operation::Known(kind) => Some(*kind),
            Operation::Unknown { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Arg {
    /// Catalog parameter name; `None` for the positional list of variadic ops.
    pub name: Option<&'static str>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OpInstance {
    pub op: Operation,
    args: Vec<Arg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArgError {
    #[error("{op} has no parameter named '{name}'")]
    UnknownParameter { op: &'static str, name: String },
    #[error("parameter '{0}' given more than once")]
    DuplicateParameter(&'static str),
    #[error("{op} takes at most {max} arguments, got {got}")]
    TooManyArguments { op: &'static str, max: usize, got: usize },
    #[error("{op} is missing required parameter '{name}'")]
    MissingParameter { op: &'static str, name: &'static str },
    #[error("positional argument follows a named argument")]
    PositionalAfterNamed,
    #[error("{0} takes positional arguments only")]
    NamedInVariadic(&'static str),
    #[error("{0} needs at least one argument")]
    EmptyVariadic(&'static str),
}

impl OpInstance {
    /// Builds a catalog operation from positional/named arguments, normalizing them.
    pub fn new(kind: OpKind, raw: Vec<(Option<String>, Expr)>) -> Result<OpInstance, ArgError> {
        let spec = kind.spec();
        if spec.variadic {
            if raw.is_empty() {
                return Err(ArgError::EmptyVariadic(spec.name));
            }
            let mut args = Vec::with_capacity(raw.len());
            for (name, value) in raw {
                if name.is_some() {
                    return Err(ArgError::NamedInVariadic(spec.name));
                }
                args.push(Arg { name: None, value });
            }
            return Ok(OpInstance { op: Operation::Known(kind), args });
        }

        let mut slots: Vec<Option<Expr>> = vec![None; spec.params.len()];
        let mut seen_named = false;
        for (position, (name, value)) in raw.into_iter().enumerate() {
            let index = match name {
                Some(name) => {
                    seen_named = true;
                    kind.param_index(&name).ok_or(ArgError::UnknownParameter { op: spec.name, name })?
                }
                None => {
                    if seen_named {
                        return Err(ArgError::PositionalAfterNamed);
                    }
                    if position >= spec.params.len() {
                        return Err(ArgError::TooManyArguments {
                            op: spec.name,
                            max: spec.params.len(),
                            got: position + 1,
                        });
                    }
                    position
                }
            };
            if slots[index].is_some() {
                return Err(ArgError::DuplicateParameter(spec.params[index].name));
            }
            slots[index] = Some(value);
        }

        for (param, slot) in spec.params.iter().zip(&slots) {
            if slot.is_none() && param.default.is_none() {
                return Err(ArgError::MissingParameter { op: spec.name, name: param.name });
            }
        }

        let mut args = Vec::new();
        for (i, param) in spec.params.iter().enumerate() {
            let Some(value) = &slots[i] else { continue };
            let is_default = match param.default {
                Some(ParamDefault::Const(v)) => *value == Expr::Int(v),
                Some(ParamDefault::SameAs(j)) => slots[j].as_ref() == Some(value),
                None => false,
            };
            if !is_default {
                args.push(Arg { name: Some(param.name), value: value.clone() });
            }
        }
        Ok(OpInstance { op: Operation::Known(kind), args })
    }

    /// Operation without parameters (`ReLU`, `Add`, `input`, ...).
    pub fn simple(kind: OpKind) -> OpInstance {
        OpInstance::new(kind, Vec::new()).expect("operation takes no required parameters")
    }

    pub fn unknown(name: impl Into<String>, raw_args: Option<String>) -> OpInstance {
        OpInstance { op: Operation::Unknown { name: name.into(), raw_args }, args: Vec::new() }
    }

    pub fn kind(&self) -> Option<OpKind> {
        self.op.kind()
    }

    /// Explicit arguments after normalization (defaults omitted).
    pub fn args(&self) -> &[Arg] {
        &self.args
    }

    /// Arguments with every default filled in, in catalog order. Empty for unknown ops.
    pub fn full_args(&self) -> Vec<(Option<&'static str>, Expr)> {
        let Operation::Known(kind) = self.op else {
            return Vec::new();
        };
        let spec = kind.spec();
        if spec.variadic {
            return self.args.iter().map(|a| (None, a.value.clone())).collect();
        }
        let mut values: Vec<Option<Expr>> = spec
            .params
            .iter()
            .map(|p| self.args.iter().find(|a| a.name == Some(p.name)).map(|a| a.value.clone()))
            .collect();
        for (i, param) in spec.params.iter().enumerate() {
            if values[i].is_none() {
                values[i] = Some(match param.default {
                    Some(ParamDefault::Const(v)) => Expr::Int(v),
                    Some(ParamDefault::SameAs(j)) => values[j].clone().expect("referenced param precedes"),
                    None => unreachable!("required parameters are always present"),
                });
            }
        }
        spec.params.iter().zip(values).map(|(p, v)| (Some(p.name), v.expect("filled"))).collect()
    }

    /// Evaluates every (defaulted) argument under a binding.
    pub fn resolve(&self, binding: &VarBinding) -> Result<Vec<i64>, EvalError> {
        self.full_args().iter().map(|(_, e)| e.eval(binding)).collect()
    }
}

impl fmt::Display for OpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.op {
            Operation::Unknown { name, raw_args } => match raw_args {
                Some(raw) => write!(f, "{name}({raw})"),
                None => f.write_str(name),
            },
            Operation::Known(kind) => {
                f.write_str(kind.name())?;
                if self.args.is_empty() {
                    return Ok(());
                }
                f.write_str("(")?;
                for (i, arg) in self.args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match arg.name {
                        Some(name) => write!(f, "{name}={}", arg.value)?,
                        None => write!(f, "{}", arg.value)?,
                    }
                }
                f.write_str(")")
            }
        }
    }
}

/// A named DAG of operations with exactly one `input` and one `output` node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    name: String,
    nodes: BTreeMap<NodeIndex, OpInstance>,
    edges: BTreeSet<(NodeIndex, NodeIndex)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("block name '{0}' is not a valid identifier")]
    InvalidName(String),
    #[error("edge {0}->{1} refers to a missing node")]
    DanglingEdge(NodeIndex, NodeIndex),
    #[error("block has no input node")]
    MissingInput,
    #[error("block has no output node")]
    MissingOutput,
    #[error("block has more than one input node ({0} and {1})")]
    MultipleInputs(NodeIndex, NodeIndex),
    #[error("block has more than one output node ({0} and {1})")]
    MultipleOutputs(NodeIndex, NodeIndex),
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Block {
    pub fn from_parts(
        name: impl Into<String>,
        nodes: BTreeMap<NodeIndex, OpInstance>,
        edges: BTreeSet<(NodeIndex, NodeIndex)>,
    ) -> Result<Block, BlockError> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(BlockError::InvalidName(name));
        }
        for &(a, b) in &edges {
            if !nodes.contains_key(&a) || !nodes.contains_key(&b) {
                return Err(BlockError::DanglingEdge(a, b));
            }
        }
        let find = |kind: OpKind| -> Vec<NodeIndex> {
            nodes.iter().filter(|(_, op)| op.kind() == Some(kind)).map(|(i, _)| *i).collect()
        };
        match find(OpKind::Input).as_slice() {
            [] => return Err(BlockError::MissingInput),
            [_] => {}
            [a, b, ..] => return Err(BlockError::MultipleInputs(*a, *b)),
        }
        match find(OpKind::Output).as_slice() {
            [] => return Err(BlockError::MissingOutput),
            [_] => {}
            [a, b, ..] => return Err(BlockError::MultipleOutputs(*a, *b)),
        }
        Ok(Block { name, nodes, edges })
    }

    pub fn into_parts(self) -> (String, BTreeMap<NodeIndex, OpInstance>, BTreeSet<(NodeIndex, NodeIndex)>) {
        (self.name, self.nodes, self.edges)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Result<Block, BlockError> {
        let name = name.into();
        if !valid_name(&name) {
            return Err(BlockError::InvalidName(name));
        }
        self.name = name;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeIndex, &OpInstance)> + '_ {
        self.nodes.iter().map(|(i, op)| (*i, op))
    }

    pub fn node(&self, index: NodeIndex) -> Option<&OpInstance> {
        self.nodes.get(&index)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeIndex, NodeIndex)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, src: NodeIndex, dst: NodeIndex) -> bool {
        self.edges.contains(&(src, dst))
    }

    /// Predecessors in ascending index order, which is also operand order.
    pub fn predecessors(&self, index: NodeIndex) -> Vec<NodeIndex> {
        let mut preds: Vec<_> = self.edges.iter().filter(|(_, d)| *d == index).map(|(s, _)| *s).collect();
        preds.sort_unstable();
        preds
    }

    pub fn successors(&self, index: NodeIndex) -> Vec<NodeIndex> {
        self.edges.range((index, 0)..=(index, NodeIndex::MAX)).map(|(_, d)| *d).collect()
    }

    pub fn input_index(&self) -> NodeIndex {
        self.index_of(OpKind::Input)
    }

    pub fn output_index(&self) -> NodeIndex {
        self.index_of(OpKind::Output)
    }

    fn index_of(&self, kind: OpKind) -> NodeIndex {
        self.nodes.iter().find(|(_, op)| op.kind() == Some(kind)).map(|(i, _)| *i).expect("block invariant")
    }

    /// Canonical text form.
    pub fn print(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "##{}##", self.name)?;
        for (index, op) in &self.nodes {
            write!(f, "\n{index}:{op}")?;
        }
        for (src, dst) in &self.edges {
            write!(f, "\n{src}->{dst}")?;
        }
        Ok(())
    }
}

impl serde::Serialize for Block {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.print())
    }
}

impl<'de> serde::Deserialize<'de> for Block {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_block(&text).map_err(serde::de::Error::custom)
    }
}

/// Located parse failure. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("missing block header ##name##")]
    MissingHeader,
    #[error("malformed header '{0}'")]
    MalformedHeader(String),
    #[error("unexpected second header '{0}'")]
    SecondHeader(String),
    #[error("malformed node definition '{0}'")]
    MalformedNode(String),
    #[error("duplicate node index {0}")]
    DuplicateIndex(NodeIndex),
    #[error("malformed edge '{0}'")]
    MalformedEdge(String),
    #[error("duplicate edge {0}->{1}")]
    DuplicateEdge(NodeIndex, NodeIndex),
    #[error("edge {0}->{1} refers to an undefined node")]
    UndefinedEndpoint(NodeIndex, NodeIndex),
    #[error("unparseable parameter expression '{text}': {reason}")]
    BadExpression { text: String, reason: String },
    #[error("{0}")]
    BadArguments(ArgError),
    #[error("unrecognized line '{0}'")]
    UnrecognizedLine(String),
    #[error("{0}")]
    Structure(BlockError),
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

/// Parses one block. Blank lines and `//` or single-`#` comment lines are ignored.
pub fn parse_block(text: &str) -> Result<Block, ParseError> {
    let mut name: Option<String> = None;
    let mut nodes: BTreeMap<NodeIndex, OpInstance> = BTreeMap::new();
    let mut edges: BTreeSet<(NodeIndex, NodeIndex)> = BTreeSet::new();
    let mut edge_lines: Vec<(usize, NodeIndex, NodeIndex)> = Vec::new();
    let mut last_line = 1;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with("//") || (line.starts_with('#') && !line.starts_with("##")) {
            continue;
        }
        last_line = line_no;
        if line.starts_with("##") {
            let header = parse_header(line).ok_or_else(|| err(line_no, ParseErrorKind::MalformedHeader(line.to_string())))?;
            if name.is_some() {
                return Err(err(line_no, ParseErrorKind::SecondHeader(line.to_string())));
            }
            name = Some(header);
            continue;
        }
        if name.is_none() {
            return Err(err(line_no, ParseErrorKind::MissingHeader));
        }
        let content = strip_comment(line);
        if content.contains("->") {
            let (src, dst) = parse_edge(content).ok_or_else(|| err(line_no, ParseErrorKind::MalformedEdge(content.to_string())))?;
            if !edges.insert((src, dst)) {
                return Err(err(line_no, ParseErrorKind::DuplicateEdge(src, dst)));
            }
            edge_lines.push((line_no, src, dst));
        } else if content.contains(':') {
            let (index, op) = parse_node(content).map_err(|kind| err(line_no, kind))?;
            if nodes.insert(index, op).is_some() {
                return Err(err(line_no, ParseErrorKind::DuplicateIndex(index)));
            }
        } else {
            return Err(err(line_no, ParseErrorKind::UnrecognizedLine(content.to_string())));
        }
    }

    let Some(name) = name else {
        return Err(err(1, ParseErrorKind::MissingHeader));
    };
    for (line_no, src, dst) in edge_lines {
        if !nodes.contains_key(&src) || !nodes.contains_key(&dst) {
            return Err(err(line_no, ParseErrorKind::UndefinedEndpoint(src, dst)));
        }
    }
    Block::from_parts(name, nodes, edges).map_err(|e| err(last_line, ParseErrorKind::Structure(e)))
}

fn parse_header(line: &str) -> Option<String> {
    let inner = line.strip_prefix("##")?.strip_suffix("##")?.trim();
    valid_name(inner).then(|| inner.to_string())
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find("//"), line.find('#')].into_iter().flatten().min();
    match cut {
        Some(pos) => line[..pos].trim_end(),
        None => line,
    }
}

fn parse_index(s: &str) -> Option<NodeIndex> {
    let s = s.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_edge(content: &str) -> Option<(NodeIndex, NodeIndex)> {
    let (src, dst) = content.split_once("->")?;
    Some((parse_index(src)?, parse_index(dst)?))
}

fn parse_node(content: &str) -> Result<(NodeIndex, OpInstance), ParseErrorKind> {
    let malformed = || ParseErrorKind::MalformedNode(content.to_string());
    let (index, rest) = content.split_once(':').ok_or_else(malformed)?;
    let index = parse_index(index).ok_or_else(malformed)?;
    let rest = rest.trim();

    let name_len = rest
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
        .map(|(i, _)| i)
        .unwrap_or(rest.len());
    let name = &rest[..name_len];
    if name.is_empty() || !name.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        return Err(malformed());
    }
    let tail = rest[name_len..].trim();
    let inner = if tail.is_empty() {
        None
    } else {
        let inner = tail.strip_prefix('(').and_then(|t| t.strip_suffix(')')).ok_or_else(malformed)?;
        Some(inner)
    };

    let Some(kind) = OpKind::from_name(name) else {
        return Ok((index, OpInstance::unknown(name, inner.map(|s| s.trim().to_string()))));
    };

    let raw_args = match inner {
        None => Vec::new(),
        Some(inner) => split_args(inner).ok_or_else(malformed)?,
    };
    let mut parsed = Vec::with_capacity(raw_args.len());
    for raw in raw_args {
        let (arg_name, expr_text) = split_named(raw);
        let expr = parse_expr(expr_text).map_err(|e| ParseErrorKind::BadExpression {
            text: expr_text.to_string(),
            reason: e.to_string(),
        })?;
        parsed.push((arg_name.map(str::to_string), expr));
    }
    let op = OpInstance::new(kind, parsed).map_err(ParseErrorKind::BadArguments)?;
    Ok((index, op))
}

/// Splits on commas at parenthesis depth 0. `None` on unbalanced parentheses.
fn split_args(inner: &str) -> Option<Vec<&str>> {
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut depth: i32 = 0;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ',' if depth == 0 => {
                out.push(inner[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    out.push(inner[start..].trim());
    Some(out)
}

fn split_named(arg: &str) -> (Option<&str>, &str) {
    if let Some((lhs, rhs)) = arg.split_once('=') {
        let lhs = lhs.trim();
        if !lhs.is_empty() && lhs.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !rhs.starts_with('=') {
            return (Some(lhs), rhs.trim());
        }
    }
    (None, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RESNET: &str = "##resnet_basic##
0:input
1:Conv2d(C,3)
2:BN
3:ReLU
4:Conv2d(C,3)
5:BN
6:Add
7:ReLU
8:output
0->1
1->2
2->3
3->4
4->5
5->6
0->6
6->7
7->8";

    #[test]
    fn identity_block() {
        let b = parse_block("##id##\n0:input\n1:output\n0->1").unwrap();
        assert_eq!(b.name(), "id");
        assert_eq!(b.len(), 2);
        assert_eq!(b.edge_count(), 1);
        assert_eq!(b.print(), "##id##\n0:input\n1:output\n0->1");
    }

    #[test]
    fn resnet_cell_counts_match_line_counts() {
        let node_lines = RESNET.lines().filter(|l| l.contains(':')).count();
        let edge_lines = RESNET.lines().filter(|l| l.contains("->")).count();
        let b = parse_block(RESNET).unwrap();
        assert_eq!((b.len(), b.edge_count()), (node_lines, edge_lines));
        assert_eq!(b.len(), 9);
        assert_eq!(b.predecessors(6), vec![0, 5]);
    }

    #[test]
    fn duplicate_index_is_located() {
        let e = parse_block("##b##\n0:input\n0:output").unwrap_err();
        assert_eq!(e, ParseError { line: 3, kind: ParseErrorKind::DuplicateIndex(0) });
    }

    #[test]
    fn positional_args_print_named_without_defaults() {
        let b = parse_block("##c##\n0:input\n1:Conv2d(C,3)\n2:output\n0->1\n1->2").unwrap();
        assert_eq!(b.node(1).unwrap().to_string(), "Conv2d(out_channels=C,kernel_size=3)");
        let explicit = parse_block("##c##\n0:input\n1:Conv2d(out_channels=C,kernel_size=3,stride=1)\n2:output\n0->1\n1->2").unwrap();
        assert_eq!(b, explicit);
        let strided = parse_block("##c##\n0:input\n1:Conv2d(C, 3, 2)\n2:output\n0->1\n1->2").unwrap();
        assert_eq!(strided.node(1).unwrap().to_string(), "Conv2d(out_channels=C,kernel_size=3,stride=2)");
    }

    #[test]
    fn pool_stride_defaults_to_kernel() {
        let b = parse_block("##p##\n0:input\n1:MaxPool2d(3,3)\n2:AvgPool2d(kernel_size=2)\n3:output\n0->1\n1->2\n2->3").unwrap();
        assert_eq!(b.node(1).unwrap().to_string(), "MaxPool2d(kernel_size=3)");
        let full = b.node(2).unwrap().full_args();
        assert_eq!(full[1], (Some("stride"), Expr::Int(2)));
    }

    #[test]
    fn edge_whitespace_and_comments() {
        let b = parse_block("// leading comment\n##id##\n\n0:input   # the input\n1 : output\n0 -> 1 // edge").unwrap();
        assert_eq!(b.print(), "##id##\n0:input\n1:output\n0->1");
    }

    #[test]
    fn unknown_ops_are_kept() {
        let b = parse_block("##u##\n0:input\n8:ROIAlign(output_size=(7,7))\n1:output\n0->8\n8->1").unwrap();
        assert_eq!(b.node(8).unwrap().op.name(), "ROIAlign");
        assert!(b.print().contains("8:ROIAlign(output_size=(7,7))"));
        assert_eq!(parse_block(&b.print()).unwrap(), b);
    }

    #[test]
    fn located_errors() {
        let cases: &[(&str, usize)] = &[
            ("0:input", 1),
            ("##bad name##\n0:input", 1),
            ("##b##\n0:input\n1:output\n0->x", 4),
            ("##b##\n0:input\n1:output\n0->1\n0->1", 5),
            ("##b##\n0:input\n1:Conv2d(C,3.5)\n2:output", 3),
            ("##b##\n0:input\n1:Conv2d(C)\n2:output", 3),
            ("##b##\n0:input\n1:Conv2d(C,3,padding=1)\n2:output", 3),
            ("##b##\n0:input\n1:output\n0->7", 4),
            ("##b##\n0:input\n1:output\n##c##", 4),
            ("##b##\n0:input\n1:output\nhello", 4),
            ("##b##\n0:input\n1:ReLU", 3),
            ("##b##\n0:input\n1:input\n2:output", 4),
            ("##b##\n0:input\n1:permute()\n2:output", 3),
            ("##b##\n0:input\n1:Conv2d(C,3\n2:output", 3),
        ];
        for (text, line) in cases {
            let e = parse_block(text).unwrap_err();
            assert_eq!(e.line, *line, "{text:?} -> {e}");
        }
    }

    #[test]
    fn variadic_ops_keep_positional_lists() {
        let b = parse_block("##v##\n0:input\n1:permute(0,2,3,1)\n2:reshape(B,-1,C)\n3:output\n0->1\n1->2\n2->3").unwrap();
        assert_eq!(b.node(1).unwrap().to_string(), "permute(0,2,3,1)");
        assert_eq!(b.node(2).unwrap().to_string(), "reshape(B,-1,C)");
        let binding = VarBinding::new(2, 16, 16, 8, 8).unwrap();
        assert_eq!(b.node(2).unwrap().resolve(&binding).unwrap(), vec![2, -1, 16]);
    }

    #[test]
    fn dim_named_argument_and_variable_coexist() {
        let b = parse_block("##d##\n0:input\n1:concat(dim=1)\n2:Linear(dim)\n3:output\n0->1\n1->2\n2->3").unwrap();
        assert_eq!(b.node(1).unwrap().to_string(), "concat(dim=1)");
        assert_eq!(b.node(2).unwrap().to_string(), "Linear(out_channels=dim)");
    }
}
