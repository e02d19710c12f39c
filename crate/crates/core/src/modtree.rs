//! The modification tree: every designed architecture, the suggestion that produced it,
//! and its accuracy; plus candidate selection for the next proposal.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::Block;
use crate::graphops::BlockDigest;

pub const TREE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('n')
            .unwrap_or(s)
            .parse()
            .map(NodeId)
            .map_err(|_| format!("invalid node id '{s}'"))
    }
}

/// The three blocks that make up one network design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSet {
    pub cell: Block,
    pub stem: Block,
    pub downsample: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Trained,
    FailedTraining,
    Pending,
}

/// Result of dispatching a design to training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainOutcome {
    Trained { accuracy_val: f64, accuracy_test: f64 },
    FailedTraining,
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub suggestion: Option<String>,
    pub depth: u32,
    pub digest: BlockDigest,
    pub arch: ArchSet,
    pub status: NodeStatus,
    /// Validation accuracy; drives selection.
    pub accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Every `bfs_period`-th iteration is a breadth step.
    pub bfs_period: u32,
    /// Nodes with this many children are skipped while any node has spare capacity.
    pub max_children: u32,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { bfs_period: 4, max_children: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("unknown parent node {0}")]
    UnknownParent(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no trained node in the tree")]
    NoTrainedNodes,
    #[error("accuracy {0} is outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("selection policy values must be >= 1")]
    InvalidPolicy,
    #[error("inconsistent tree document: {0}")]
    Inconsistent(String),
    #[error("tree JSON: {0}")]
    Json(String),
}

/// What [`ModTree::add_result`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Added {
    pub id: NodeId,
    /// The cell matched an existing non-failed node; no node was added.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TreeDocument {
    schema_version: u32,
    nodes: Vec<TreeNode>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModTree {
    nodes: Vec<TreeNode>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

fn check_accuracy(outcome: &TrainOutcome) -> Result<(), TreeError> {
    if let TrainOutcome::Trained { accuracy_val, accuracy_test } = *outcome {
        for a in [accuracy_val, accuracy_test] {
            if !(0.0..=1.0).contains(&a) {
                return Err(TreeError::AccuracyOutOfRange(a));
            }
        }
    }
    Ok(())
}

fn apply(node: &mut TreeNode, outcome: TrainOutcome) {
    match outcome {
        TrainOutcome::Trained { accuracy_val, accuracy_test } => {
            node.status = NodeStatus::Trained;
            node.accuracy = Some(accuracy_val);
            node.test_accuracy = Some(accuracy_test);
        }
        TrainOutcome::FailedTraining => {
            node.status = NodeStatus::FailedTraining;
            node.accuracy = None;
            node.test_accuracy = None;
        }
        TrainOutcome::Pending => {
            node.status = NodeStatus::Pending;
            node.accuracy = None;
            node.test_accuracy = None;
        }
    }
}

fn by_accuracy(a: &TreeNode, b: &TreeNode) -> Ordering {
    a.accuracy.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.accuracy.unwrap_or(f64::NEG_INFINITY))
}

impl ModTree {
    /// A tree holding only the base architecture.
    pub fn new(arch: ArchSet, digest: BlockDigest, outcome: TrainOutcome) -> Result<ModTree, TreeError> {
        check_accuracy(&outcome)?;
        let mut root = TreeNode {
            id: NodeId(0),
            parent: None,
            suggestion: None,
            depth: 0,
            digest,
            arch,
            status: NodeStatus::Pending,
            accuracy: None,
            test_accuracy: None,
        };
        apply(&mut root, outcome);
        Ok(ModTree { nodes: vec![root], children: BTreeMap::from([(NodeId(0), Vec::new())]) })
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0 as usize)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Existing node whose cell has this digest, ignoring failed-training nodes.
    pub fn find_duplicate(&self, digest: &BlockDigest) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.digest == *digest && n.status != NodeStatus::FailedTraining)
            .map(|n| n.id)
    }

    pub fn add_result(
        &mut self,
        parent: NodeId,
        suggestion: &str,
        arch: ArchSet,
        digest: BlockDigest,
        outcome: TrainOutcome,
    ) -> Result<Added, TreeError> {
        let parent_depth = self.node(parent).ok_or(TreeError::UnknownParent(parent))?.depth;
        check_accuracy(&outcome)?;
        if let Some(existing) = self.find_duplicate(&digest) {
            return Ok(Added { id: existing, duplicate: true });
        }
        let id = NodeId(self.nodes.len() as u32);
        let mut node = TreeNode {
            id,
            parent: Some(parent),
            suggestion: Some(suggestion.to_string()),
            depth: parent_depth + 1,
            digest,
            arch,
            status: NodeStatus::Pending,
            accuracy: None,
            test_accuracy: None,
        };
        apply(&mut node, outcome);
        self.nodes.push(node);
        self.children.entry(parent).or_default().push(id);
        self.children.insert(id, Vec::new());
        Ok(Added { id, duplicate: false })
    }

    /// Records a training result for an existing node.
    pub fn set_outcome(&mut self, id: NodeId, outcome: TrainOutcome) -> Result<(), TreeError> {
        check_accuracy(&outcome)?;
        let node = self.nodes.get_mut(id.0 as usize).ok_or(TreeError::UnknownNode(id))?;
        apply(node, outcome);
        Ok(())
    }

    /// Chooses the node to modify next. Iterations where `iteration % bfs_period == 0`
    /// take the shallowest node with fewest children; the others take the most accurate
    /// node. Both prefer nodes below the child cap and fall back to all trained nodes.
    pub fn select_candidate(&self, policy: SelectionPolicy, iteration: u64) -> Result<NodeId, TreeError> {
        if policy.bfs_period == 0 || policy.max_children == 0 {
            return Err(TreeError::InvalidPolicy);
        }
        let trained: Vec<&TreeNode> = self.nodes.iter().filter(|n| n.status == NodeStatus::Trained).collect();
        if trained.is_empty() {
            return Err(TreeError::NoTrainedNodes);
        }
        let open: Vec<&TreeNode> = trained
            .iter()
            .copied()
            .filter(|n| self.children(n.id).len() < policy.max_children as usize)
            .collect();
        let pool = if open.is_empty() { trained } else { open };
        let child_count = |n: &TreeNode| self.children(n.id).len();

        let chosen = if iteration.is_multiple_of(u64::from(policy.bfs_period)) {
            pool.into_iter().min_by(|a, b| {
                (a.depth, child_count(a))
                    .cmp(&(b.depth, child_count(b)))
                    .then_with(|| by_accuracy(b, a))
                    .then_with(|| a.id.cmp(&b.id))
            })
        } else {
            pool.into_iter().min_by(|a, b| {
                by_accuracy(b, a).then_with(|| Reverse(a.depth).cmp(&Reverse(b.depth))).then_with(|| a.id.cmp(&b.id))
            })
        };
        Ok(chosen.expect("pool is non-empty").id)
    }

    /// Most accurate trained node; ties go to the earliest id.
    pub fn best(&self) -> Result<NodeId, TreeError> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Trained)
            .min_by(|a, b| by_accuracy(b, a).then_with(|| a.id.cmp(&b.id)))
            .map(|n| n.id)
            .ok_or(TreeError::NoTrainedNodes)
    }

    pub fn to_json(&self) -> String {
        let doc = TreeDocument {
            schema_version: TREE_SCHEMA_VERSION,
            nodes: self.nodes.clone(),
            children: self.children.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<ModTree, TreeError> {
        let doc: TreeDocument = serde_json::from_str(text).map_err(|e| TreeError::Json(e.to_string()))?;
        if doc.schema_version != TREE_SCHEMA_VERSION {
            return Err(TreeError::Inconsistent(format!("unsupported schema version {}", doc.schema_version)));
        }
        let tree = ModTree { nodes: doc.nodes, children: doc.children };
        tree.check_consistency()?;
        Ok(tree)
    }

    fn check_consistency(&self) -> Result<(), TreeError> {
        let bad = |msg: String| Err(TreeError::Inconsistent(msg));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 as usize != i {
                return bad(format!("node at position {i} has id {}", node.id));
            }
            if (node.status == NodeStatus::Trained) != node.accuracy.is_some() {
                return bad(format!("node {} accuracy does not match its status", node.id));
            }
            match node.parent {
                None if i != 0 => return bad(format!("node {} has no parent", node.id)),
                Some(_) if i == 0 => return bad("root has a parent".into()),
                Some(p) => {
                    let Some(parent) = self.node(p) else {
                        return bad(format!("node {} has unknown parent {p}", node.id));
                    };
                    if p >= node.id || parent.depth + 1 != node.depth || !self.children(p).contains(&node.id) {
                        return bad(format!("node {} is not linked to parent {p}", node.id));
                    }
                }
                None => {}
            }
        }
        let linked: usize = self.children.values().map(Vec::len).sum();
        if linked != self.nodes.len() - 1 || self.children.keys().any(|k| self.node(*k).is_none()) {
            return bad("children map does not match parent links".into());
        }
        Ok(())
    }

    /// GraphViz rendering: one box per node with its accuracy, edges labelled by suggestion.
    pub fn to_dot(&self) -> String {
        let escape = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        let mut out = String::from("digraph modtree {\n  node [shape=box];\n");
        for node in &self.nodes {
            let score = match (node.status, node.accuracy) {
                (NodeStatus::Trained, Some(a)) => format!("{:.2}%", a * 100.0),
                (NodeStatus::FailedTraining, _) => "failed".to_string(),
                _ => "pending".to_string(),
            };
            out.push_str(&format!("  {} [label=\"{}\\n{}\"];\n", node.id, node.id, score));
        }
        for node in &self.nodes {
            if let Some(parent) = node.parent {
                let mut label: String = node.suggestion.as_deref().unwrap_or("").chars().take(60).collect();
                if node.suggestion.as_ref().is_some_and(|s| s.chars().count() > 60) {
                    label.push_str("...");
                }
                out.push_str(&format!("  {} -> {} [label=\"{}\"];\n", parent, node.id, escape(&label)));
            }
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_block;

    fn arch(tag: &str) -> ArchSet {
        let b = parse_block(&format!("##{tag}##\n0:input\n1:output\n0->1")).unwrap();
        ArchSet { cell: b.clone(), stem: b.clone(), downsample: b }
    }

    fn digest(n: u8) -> BlockDigest {
        BlockDigest([n; 32])
    }

    fn trained(acc: f64) -> TrainOutcome {
        TrainOutcome::Trained { accuracy_val: acc, accuracy_test: acc }
    }

    fn chain() -> ModTree {
        let mut t = ModTree::new(arch("r"), digest(0), trained(0.70)).unwrap();
        let a = t.add_result(NodeId(0), "a", arch("a"), digest(1), trained(0.74)).unwrap().id;
        t.add_result(a, "b", arch("b"), digest(2), trained(0.72)).unwrap();
        t
    }

    #[test]
    fn chain_selection() {
        let t = chain();
        let p = SelectionPolicy::default();
        assert_eq!(t.select_candidate(p, 1).unwrap(), NodeId(1));
        assert_eq!(t.select_candidate(p, 4).unwrap(), NodeId(0));
        assert_eq!(t.best().unwrap(), NodeId(1));
    }

    #[test]
    fn duplicates_and_unknown_parent() {
        let mut t = chain();
        let added = t.add_result(NodeId(2), "dup", arch("x"), digest(1), trained(0.9)).unwrap();
        assert_eq!(added, Added { id: NodeId(1), duplicate: true });
        assert_eq!(t.len(), 3);
        assert_eq!(
            t.add_result(NodeId(42), "s", arch("x"), digest(9), TrainOutcome::Pending),
            Err(TreeError::UnknownParent(NodeId(42)))
        );
        assert!("zzz".parse::<NodeId>().is_err());
    }

    #[test]
    fn failed_nodes_are_not_duplicates_or_candidates() {
        let mut t = ModTree::new(arch("r"), digest(0), trained(0.5)).unwrap();
        let f = t.add_result(NodeId(0), "s", arch("f"), digest(5), TrainOutcome::FailedTraining).unwrap();
        assert!(!f.duplicate);
        assert_eq!(t.find_duplicate(&digest(5)), None);
        assert_eq!(t.select_candidate(SelectionPolicy::default(), 1).unwrap(), NodeId(0));
    }

    #[test]
    fn child_cap_falls_back() {
        let mut t = ModTree::new(arch("r"), digest(0), trained(0.5)).unwrap();
        for i in 1..=3u8 {
            t.add_result(NodeId(0), "s", arch("c"), digest(i), TrainOutcome::FailedTraining).unwrap();
        }
        assert_eq!(t.select_candidate(SelectionPolicy::default(), 1).unwrap(), NodeId(0));
    }

    #[test]
    fn json_round_trip_and_dot() {
        let t = chain();
        let back = ModTree::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let dot = t.to_dot();
        assert!(dot.contains("n0 -> n1"));
        assert!(dot.contains("74.00%"));
    }

    #[test]
    fn tie_on_best_goes_to_earlier_id() {
        let mut t = ModTree::new(arch("r"), digest(0), trained(0.74)).unwrap();
        t.add_result(NodeId(0), "s", arch("c"), digest(1), trained(0.74)).unwrap();
        assert_eq!(t.best().unwrap(), NodeId(0));
    }
}
