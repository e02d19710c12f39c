//! Flattening stem, cells, downsample blocks and a head into one resolved graph.

use std::collections::BTreeMap;

use super::{CodegenError, MacroConfig};
use crate::dsl::{Block, Expr, NodeIndex, OpKind, Var, VarBinding};
use crate::validate::{output_shape, validate_role, Role, Shape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetNode {
    pub id: usize,
    pub op: OpKind,
    /// Resolved arguments in catalog order; variadic ops use keys "0", "1", ...
    pub args: Vec<(String, i64)>,
    /// Arguments that depend on the batch size, as expressions in `B` alone.
    pub batch_args: BTreeMap<String, String>,
    /// Operand node ids in operand order.
    pub inputs: Vec<usize>,
    pub section: String,
    pub shape: Shape,
}

impl NetNode {
    pub fn arg(&self, name: &str) -> Option<i64> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn values(&self) -> Vec<i64> {
        self.args.iter().map(|(_, v)| *v).collect()
    }
}

/// A fully resolved network. Node ids equal positions and every operand precedes its user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    pub nodes: Vec<NetNode>,
    pub width: i64,
    pub macro_config: MacroConfig,
}

impl NetworkGraph {
    pub fn input_shape(&self) -> &Shape {
        &self.nodes[0].shape
    }

    pub fn output_shape(&self) -> &Shape {
        &self.nodes.last().expect("network has nodes").shape
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes.iter().flat_map(|n| n.inputs.iter().map(move |&i| (i, n.id))).collect()
    }

    /// Re-derives every shape from the inputs and arguments and checks the layout invariants.
    pub fn check(&self) -> Result<(), CodegenError> {
        let bad = |node: &NetNode, reason: String| CodegenError::Assembly { section: node.section.clone(), node: node.id, reason };
        let Some(first) = self.nodes.first() else {
            return Err(CodegenError::Json("network has no nodes".into()));
        };
        if first.op != OpKind::Input || !first.inputs.is_empty() {
            return Err(bad(first, "node 0 must be the input".into()));
        }
        for (pos, node) in self.nodes.iter().enumerate().skip(1) {
            if node.id != pos {
                return Err(bad(node, format!("id {} at position {pos}", node.id)));
            }
            if node.inputs.is_empty() || node.inputs.iter().any(|&i| i >= pos) || node.op == OpKind::Input {
                return Err(bad(node, "operands must be earlier nodes".into()));
            }
            let inputs: Vec<&Shape> = node.inputs.iter().map(|&i| &self.nodes[i].shape).collect();
            let shape = output_shape(node.op, &node.values(), &inputs).map_err(|e| bad(node, e.reason))?;
            if shape != node.shape {
                return Err(bad(node, format!("recorded shape {} but operands give {shape}", node.shape)));
            }
        }
        let last = self.nodes.last().expect("non-empty");
        if last.op != OpKind::Output || self.nodes.iter().filter(|n| n.op == OpKind::Output).count() != 1 {
            return Err(bad(last, "the last node must be the only output".into()));
        }
        Ok(())
    }
}

/// Substitutes every variable except `B`, leaving a batch-only expression.
fn batch_expr(expr: &Expr, binding: &VarBinding) -> Expr {
    match expr {
        Expr::Var(Var::B) | Expr::Int(_) => expr.clone(),
        Expr::Var(v) => Expr::Int(binding.get(*v)),
        Expr::Neg(inner) => Expr::Neg(Box::new(batch_expr(inner, binding))),
        Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(batch_expr(a, binding)), Box::new(batch_expr(b, binding))),
    }
}

struct Builder {
    nodes: Vec<NetNode>,
}

impl Builder {
    fn push(&mut self, op: OpKind, args: Vec<(String, i64)>, inputs: Vec<usize>, section: &str) -> Result<usize, CodegenError> {
        let id = self.nodes.len();
        let values: Vec<i64> = args.iter().map(|(_, v)| *v).collect();
        let operands: Vec<&Shape> = inputs.iter().map(|&i| &self.nodes[i].shape).collect();
        let shape = output_shape(op, &values, &operands)
            .map_err(|e| CodegenError::Assembly { section: section.into(), node: id, reason: e.reason })?;
        self.nodes.push(NetNode { id, op, args, batch_args: BTreeMap::new(), inputs, section: section.into(), shape });
        Ok(id)
    }

    /// Splices a block after `tail`, returning the node feeding the block's output.
    fn splice(&mut self, block: &Block, binding: &VarBinding, tail: usize, section: &str) -> Result<usize, CodegenError> {
        let mut map: BTreeMap<NodeIndex, usize> = BTreeMap::new();
        map.insert(block.input_index(), tail);
        let order = crate::validate::topological_order(block).expect("validated block is acyclic");
        for index in order {
            let op = block.node(index).expect("ordered node exists");
            let kind = op.kind().expect("validated block has known ops");
            if matches!(kind, OpKind::Input | OpKind::Output) {
                continue;
            }
            let fail = |reason: String| CodegenError::Assembly { section: section.into(), node: index as usize, reason };
            let full = op.full_args();
            let mut args = Vec::with_capacity(full.len());
            let mut batch_args = BTreeMap::new();
            for (pos, (name, expr)) in full.iter().enumerate() {
                let key = name.map_or_else(|| pos.to_string(), str::to_string);
                let value = expr.eval(binding).map_err(|e| fail(format!("cannot evaluate {expr} under {binding}: {e}")))?;
                if expr.mentions(Var::B) {
                    batch_args.insert(key.clone(), batch_expr(expr, binding).normalize().to_string());
                }
                args.push((key, value));
            }
            let inputs = block.predecessors(index).iter().map(|p| map[p]).collect();
            let id = self.push(kind, args, inputs, section).map_err(|e| match e {
                CodegenError::Assembly { reason, .. } => fail(reason),
                other => other,
            })?;
            self.nodes[id].batch_args = batch_args;
            map.insert(index, id);
        }
        let feeding = block.predecessors(block.output_index());
        Ok(map[&feeding[0]])
    }

    fn shape(&self, id: usize) -> &Shape {
        &self.nodes[id].shape
    }
}

fn checked(block: &Block, role: Role) -> Result<(), CodegenError> {
    let report = validate_role(block, role);
    if report.is_success() {
        Ok(())
    } else {
        Err(CodegenError::InvalidBlock { role, context: report.context() })
    }
}

fn binding(b: i64, c: i64, dim: i64, shape: &Shape) -> Result<VarBinding, CodegenError> {
    VarBinding::new(b, c, dim, shape.0[2], shape.0[3]).map_err(|e| CodegenError::Assembly {
        section: "binding".into(),
        node: 0,
        reason: e.to_string(),
    })
}

/// Builds the network: stem, then `stacks` groups of `cells_per_stack` cells joined by
/// downsample blocks that double channels and halve the spatial size, then a pooled
/// linear head.
pub fn assemble(cell: &Block, stem: &Block, downsample: &Block, config: &MacroConfig, width: i64) -> Result<NetworkGraph, CodegenError> {
    config.check()?;
    if width < 1 {
        return Err(CodegenError::InvalidMacro(format!("width {width} must be >= 1")));
    }
    checked(cell, Role::Cell)?;
    checked(stem, Role::Stem)?;
    checked(downsample, Role::Downsample)?;

    let (h, w) = config.resolution;
    let input = Shape(vec![config.batch, config.input_channels, h, w]);
    let mut b = Builder { nodes: Vec::new() };
    b.nodes.push(NetNode {
        id: 0,
        op: OpKind::Input,
        args: Vec::new(),
        batch_args: BTreeMap::new(),
        inputs: Vec::new(),
        section: "input".into(),
        shape: input.clone(),
    });
    let contract = |section: &str, id: usize, got: &Shape, want: &Shape| {
        if got == want {
            Ok(())
        } else {
            Err(CodegenError::Assembly {
                section: section.into(),
                node: id,
                reason: format!("block output {got} does not match the expected {want}"),
            })
        }
    };

    let mut tail = b.splice(stem, &binding(config.batch, config.input_channels, width, &input)?, 0, "stem")?;
    let out = b.shape(tail).clone();
    if out.0[1] != width || out.0[2] * 2 > h || out.0[3] * 2 > w {
        return Err(CodegenError::Assembly {
            section: "stem".into(),
            node: tail,
            reason: format!("stem output {out} must have {width} channels and at most half the input size"),
        });
    }
    let mut channels = width;
    for stack in 0..config.stacks {
        if stack > 0 {
            let section = format!("downsample{stack}");
            let current = b.shape(tail).clone();
            let bind = binding(config.batch, channels, channels * 2, &current)?;
            tail = b.splice(downsample, &bind, tail, &section)?;
            channels *= 2;
            let want = Shape(vec![config.batch, channels, current.0[2] / 2, current.0[3] / 2]);
            contract(&section, tail, b.shape(tail), &want)?;
        }
        for j in 0..config.cells_per_stack {
            let section = format!("stack{stack}-cell{j}");
            let current = b.shape(tail).clone();
            tail = b.splice(cell, &binding(config.batch, channels, channels, &current)?, tail, &section)?;
            contract(&section, tail, b.shape(tail), &current)?;
        }
    }
    let pool = b.push(OpKind::AdaptiveAvgPool2d, vec![("output_size".into(), 1)], vec![tail], "head")?;
    let flat = b.push(OpKind::Reshape, vec![("0".into(), -1), ("1".into(), channels)], vec![pool], "head")?;
    let linear = b.push(OpKind::Linear, vec![("out_channels".into(), config.num_classes)], vec![flat], "head")?;
    b.push(OpKind::Output, Vec::new(), vec![linear], "head")?;
    Ok(NetworkGraph { nodes: b.nodes, width, macro_config: *config })
}
