//! Structural checks and shape inference for blocks.
//!
//! Findings are data: a report with no findings is a success. The JSON feedback
//! object produced by [`ValidationReport::feedback_json`] is what the modifier
//! dialogue sends back to the model.

mod shape;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

pub use shape::{broadcast, output_shape, same_padding, window_out, Shape, ShapeError};

use crate::dsl::{Arity, Block, NodeIndex, OpKind, Operation, VarBinding};

/// The class of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UndefinedOp,
    Cycle,
    DeadNode,
    InputHasInputs,
    OutputInputs,
    Arity,
    InvalidArgument,
    RankMismatch,
    Broadcast,
    GroupsDivisibility,
    SpatialUnderflow,
    MatmulMismatch,
    ConcatMismatch,
    InvalidDim,
    PermuteRank,
    RepeatRank,
    ReshapeCount,
    CellContract,
    StemFactor,
    RoleChannels,
    DownsampleContract,
}

/// One problem found in a block. `message` is the full "node <i> error: ..." text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub node: NodeIndex,
    pub kind: FindingKind,
    pub message: String,
}

impl Finding {
    fn new(node: NodeIndex, kind: FindingKind, reason: impl fmt::Display) -> Finding {
        Finding { node, kind, message: format!("node {node} error: {reason}") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Error,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Shapes inferred under the last binding examined, up to the first failure.
    pub inferred: BTreeMap<NodeIndex, Shape>,
}

impl ValidationReport {
    pub fn status(&self) -> Status {
        if self.findings.is_empty() {
            Status::Success
        } else {
            Status::Error
        }
    }

    pub fn is_success(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    /// All finding messages joined with "; ".
    pub fn context(&self) -> String {
        self.findings.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; ")
    }

    /// `{"status":"error","context":"..."}` or `{"status":"success"}`.
    pub fn feedback_json(&self) -> String {
        let value = match self.status() {
            Status::Success => serde_json::json!({"status": "success"}),
            Status::Error => serde_json::json!({"status": "error", "context": self.context()}),
        };
        value.to_string()
    }

    fn push_unique(&mut self, finding: Finding) {
        if !self.findings.iter().any(|f| f.node == finding.node && f.kind == finding.kind) {
            self.findings.push(finding);
        }
    }
}

/// Where a block sits in the macro skeleton; decides its output contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Cell,
    Stem,
    Downsample,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Cell, Role::Stem, Role::Downsample];

    pub fn name(self) -> &'static str {
        match self {
            Role::Cell => "cell",
            Role::Stem => "stem",
            Role::Downsample => "downsample",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| format!("unknown role '{s}'"))
    }
}

/// The two bindings each role is checked under. Channel counts and spatial sizes differ
/// between them so hard-coded dimensions are caught.
pub fn default_bindings(role: Role) -> Vec<VarBinding> {
    let b = |b, c, dim, hw| VarBinding::new(b, c, dim, hw, hw).expect("positive");
    match role {
        Role::Cell => vec![b(2, 16, 16, 32), b(3, 24, 24, 16)],
        Role::Stem => vec![b(2, 3, 16, 32), b(3, 3, 24, 16)],
        Role::Downsample => vec![b(2, 16, 32, 32), b(3, 24, 48, 16)],
    }
}

fn incoming(block: &Block) -> BTreeMap<NodeIndex, Vec<NodeIndex>> {
    let mut map: BTreeMap<NodeIndex, Vec<NodeIndex>> = block.nodes().map(|(i, _)| (i, Vec::new())).collect();
    for (src, dst) in block.edges() {
        map.get_mut(&dst).expect("edge endpoints exist").push(src);
    }
    map
}

fn reachable(start: NodeIndex, adjacency: &BTreeMap<NodeIndex, Vec<NodeIndex>>) -> HashSet<NodeIndex> {
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in &adjacency[&n] {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}

/// Structural checks: undefined operations, cycles, dead nodes, input/output degree,
/// and per-operation arity. Every finding is reported.
pub fn check_structure(block: &Block) -> ValidationReport {
    let mut report = ValidationReport::default();
    let preds = incoming(block);
    let mut succs: BTreeMap<NodeIndex, Vec<NodeIndex>> = block.nodes().map(|(i, _)| (i, Vec::new())).collect();
    for (src, dst) in block.edges() {
        succs.get_mut(&src).expect("edge endpoints exist").push(dst);
    }

    for (index, op) in block.nodes() {
        if let Operation::Unknown { name, .. } = &op.op {
            report.findings.push(Finding::new(index, FindingKind::UndefinedOp, format_args!("Undefined computation {name} is used")));
        }
    }

    let mut graph: DiGraphMap<NodeIndex, ()> = DiGraphMap::new();
    for (index, _) in block.nodes() {
        graph.add_node(index);
    }
    for (src, dst) in block.edges() {
        graph.add_edge(src, dst, ());
    }
    let mut cycles: Vec<Vec<NodeIndex>> = tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || block.has_edge(scc[0], scc[0]))
        .map(|mut scc| {
            scc.sort_unstable();
            scc
        })
        .collect();
    cycles.sort();
    for scc in cycles {
        let members = scc.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
        report.findings.push(Finding::new(scc[0], FindingKind::Cycle, format_args!("cycle detected among nodes {members}")));
    }

    let input = block.input_index();
    let output = block.output_index();
    let from_input = reachable(input, &succs);
    let to_output = reachable(output, &preds);
    for (index, _) in block.nodes() {
        if !(from_input.contains(&index) && to_output.contains(&index)) {
            report.findings.push(Finding::new(index, FindingKind::DeadNode, "node is not on any path from input to output"));
        }
    }

    if !preds[&input].is_empty() {
        report.findings.push(Finding::new(input, FindingKind::InputHasInputs, "input node cannot have incoming edges"));
    }
    let output_inputs = preds[&output].len();
    if output_inputs != 1 {
        report.findings.push(Finding::new(
            output,
            FindingKind::OutputInputs,
            format_args!("output node can have only one input, got {output_inputs}"),
        ));
    }

    for (index, op) in block.nodes() {
        let Some(kind) = op.kind() else { continue };
        if matches!(kind, OpKind::Input | OpKind::Output) {
            continue;
        }
        let got = preds[&index].len();
        let ok = match kind.spec().arity {
            Arity::Zero => got == 0,
            Arity::One => got == 1,
            Arity::AtLeastTwo => got >= 2,
        };
        if !ok {
            report.findings.push(Finding::new(
                index,
                FindingKind::Arity,
                format_args!("{kind} expects {}, got {got}", kind.spec().arity),
            ));
        }
    }
    report
}

/// Topological order, smallest ready index first. `None` if the graph has a cycle.
pub fn topological_order(block: &Block) -> Option<Vec<NodeIndex>> {
    let preds = incoming(block);
    let mut remaining: BTreeMap<NodeIndex, usize> = preds.iter().map(|(i, p)| (*i, p.len())).collect();
    let mut ready: BTreeSet<NodeIndex> = remaining.iter().filter(|(_, d)| **d == 0).map(|(i, _)| *i).collect();
    let mut order = Vec::with_capacity(block.len());
    while let Some(n) = ready.pop_first() {
        order.push(n);
        for m in block.successors(n) {
            let d = remaining.get_mut(&m).expect("node exists");
            *d -= 1;
            if *d == 0 {
                ready.insert(m);
            }
        }
    }
    (order.len() == block.len()).then_some(order)
}

/// Propagates concrete shapes from input (B, C, H, W). Runs the structural checks first and
/// returns their findings if any; otherwise stops at the first node whose shape rule fails.
pub fn infer_shapes(block: &Block, binding: &VarBinding) -> ValidationReport {
    let structure = check_structure(block);
    if !structure.is_success() {
        return structure;
    }
    let mut report = ValidationReport::default();
    let order = topological_order(block).expect("structure check rules out cycles");
    for index in order {
        let op = block.node(index).expect("ordered node exists");
        let kind = op.kind().expect("structure check rules out unknown ops");
        if kind == OpKind::Input {
            report.inferred.insert(index, Shape(vec![binding.b, binding.c, binding.h, binding.w]));
            continue;
        }
        let args = match op.resolve(binding) {
            Ok(args) => args,
            Err(e) => {
                let reason = format!("cannot evaluate arguments of {op} under {binding}: {e}");
                report.findings.push(Finding::new(index, FindingKind::InvalidArgument, reason));
                return report;
            }
        };
        let inputs: Vec<&Shape> = block.predecessors(index).iter().map(|p| &report.inferred[p]).collect();
        match output_shape(kind, &args, &inputs) {
            Ok(shape) => {
                report.inferred.insert(index, shape);
            }
            Err(e) => {
                report.findings.push(Finding::new(index, e.kind, e.reason));
                return report;
            }
        }
    }
    report
}

fn role_contract(block: &Block, role: Role, binding: &VarBinding, out: &Shape) -> Option<Finding> {
    let node = block.output_index();
    let input = Shape(vec![binding.b, binding.c, binding.h, binding.w]);
    match role {
        Role::Cell => {
            let expected = Shape(vec![binding.b, binding.c, binding.h, binding.w]);
            (*out != expected).then(|| {
                Finding::new(
                    node,
                    FindingKind::CellContract,
                    format_args!("cell output shape {out} must equal its input shape {expected}; input and output channels are both C"),
                )
            })
        }
        Role::Stem => {
            if out.rank() != 4 {
                return Some(Finding::new(node, FindingKind::RankMismatch, format_args!("stem output {out} must be rank 4")));
            }
            if out.0[2] * 2 > binding.h || out.0[3] * 2 > binding.w {
                return Some(Finding::new(
                    node,
                    FindingKind::StemFactor,
                    format_args!("stem must downsample by at least 2x, input {input} gives output {out}"),
                ));
            }
            (out.0[0] != binding.b || out.0[1] != binding.dim).then(|| {
                Finding::new(
                    node,
                    FindingKind::RoleChannels,
                    format_args!("stem output {out} must have dim={} channels and batch {}", binding.dim, binding.b),
                )
            })
        }
        Role::Downsample => {
            let expected = Shape(vec![binding.b, binding.dim, binding.h / 2, binding.w / 2]);
            (*out != expected).then(|| {
                Finding::new(
                    node,
                    FindingKind::DownsampleContract,
                    format_args!("downsample block must halve the spatial size and output dim channels: input {input} expects {expected}, got {out}"),
                )
            })
        }
    }
}

/// Full check for a block in a role: structure, then shapes and the role's output
/// contract under every binding. Findings are deduplicated by (node, kind).
pub fn validate(block: &Block, role: Role, bindings: &[VarBinding]) -> ValidationReport {
    let structure = check_structure(block);
    if !structure.is_success() {
        return structure;
    }
    let mut report = ValidationReport::default();
    for binding in bindings {
        let inferred = infer_shapes(block, binding);
        for finding in inferred.findings.iter().cloned() {
            report.push_unique(finding);
        }
        if inferred.is_success() {
            let out = &inferred.inferred[&block.output_index()];
            if let Some(finding) = role_contract(block, role, binding, out) {
                report.push_unique(finding);
            }
        }
        report.inferred = inferred.inferred;
    }
    report
}

/// [`validate`] under [`default_bindings`].
pub fn validate_role(block: &Block, role: Role) -> ValidationReport {
    validate(block, role, &default_bindings(role))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_block;

    fn block(body: &str) -> Block {
        parse_block(&format!("##t##\n{body}")).unwrap()
    }

    #[test]
    fn identity_passes() {
        let b = block("0:input\n1:output\n0->1");
        assert!(check_structure(&b).is_success());
        assert!(validate_role(&b, Role::Cell).is_success());
        assert_eq!(validate_role(&b, Role::Cell).feedback_json(), r#"{"status":"success"}"#);
    }

    #[test]
    fn undefined_op_message() {
        let b = block("0:input\n8:ROIAlign(output_size=7)\n9:output\n0->8\n8->9");
        let r = check_structure(&b);
        assert_eq!(r.context(), "node 8 error: Undefined computation ROIAlign is used");
        assert_eq!(
            r.feedback_json(),
            r#"{"status":"error","context":"node 8 error: Undefined computation ROIAlign is used"}"#
        );
    }

    #[test]
    fn cycle_names_members() {
        let b = block("0:input\n1:ReLU\n2:ReLU\n3:Add\n4:output\n0->1\n1->2\n2->3\n3->1\n0->3\n3->4");
        let r = check_structure(&b);
        let cycle: Vec<_> = r.findings.iter().filter(|f| f.kind == FindingKind::Cycle).collect();
        assert_eq!(cycle.len(), 1);
        assert_eq!(cycle[0].message, "node 1 error: cycle detected among nodes 1, 2, 3");
    }

    #[test]
    fn all_structural_findings_reported() {
        let b = block("0:input\n1:ReLU\n2:Foo\n3:Add\n4:output\n0->1\n1->4\n0->4\n2->3");
        let r = check_structure(&b);
        assert!(r.has(FindingKind::UndefinedOp));
        assert!(r.has(FindingKind::DeadNode));
        assert!(r.has(FindingKind::OutputInputs));
        assert!(r.has(FindingKind::Arity));
    }

    #[test]
    fn stops_at_first_shape_failure() {
        let b = block("0:input\n1:MaxPool2d(3,1)\n2:Add\n3:Conv2d(C,3,groups=5)\n4:output\n0->1\n1->2\n0->2\n2->3\n3->4");
        let binding = VarBinding::new(2, 16, 16, 32, 32).unwrap();
        let r = infer_shapes(&b, &binding);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].kind, FindingKind::Broadcast);
        assert!(r.findings[0].message.contains("(2, 16, 30, 30)"));
        assert!(r.findings[0].message.contains("(2, 16, 32, 32)"));
        assert!(!r.inferred.contains_key(&2));
    }

    #[test]
    fn stem_factor() {
        let stem = block("0:input\n1:Conv2d(dim,3)\n2:output\n0->1\n1->2");
        let r = validate_role(&stem, Role::Stem);
        assert!(r.findings[0].message.contains("stem must downsample by at least 2x"));
        let good = block("0:input\n1:Conv2d(dim,3,2)\n2:output\n0->1\n1->2");
        assert!(validate_role(&good, Role::Stem).is_success());
    }

    #[test]
    fn hard_coded_channels_caught_by_second_binding() {
        let b = block("0:input\n1:Conv2d(16,3)\n2:output\n0->1\n1->2");
        let r = validate_role(&b, Role::Cell);
        assert!(r.has(FindingKind::CellContract));
        assert!(r.findings[0].message.contains("(3, 16, 16, 16)"));
    }
}
