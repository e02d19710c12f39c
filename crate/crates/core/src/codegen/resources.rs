//! Parameter and multiply-accumulate counts.

use serde::{Deserialize, Serialize};

use super::{NetNode, NetworkGraph};
use crate::dsl::OpKind;
use crate::validate::Shape;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceCount {
    pub params: u64,
    /// Multiply-accumulates for one sample.
    pub macs: u64,
}

impl std::ops::AddAssign for ResourceCount {
    fn add_assign(&mut self, rhs: ResourceCount) {
        self.params += rhs.params;
        self.macs += rhs.macs;
    }
}

fn dim(shape: &Shape, i: usize) -> u64 {
    shape.0[i] as u64
}

fn last(shape: &Shape) -> u64 {
    *shape.0.last().expect("rank >= 1") as u64
}

fn numel(shape: &Shape) -> u64 {
    shape.0.iter().map(|d| *d as u64).product()
}

/// Counts for one node given its operand shapes. Convolutions carry no bias; linear
/// layers do; normalization layers hold a scale and a shift per channel; elementwise,
/// pooling and data-movement ops are free.
pub fn node_resources(node: &NetNode, inputs: &[&Shape], batch: u64) -> ResourceCount {
    let out = &node.shape;
    match node.op {
        OpKind::Conv2d => {
            let (c_out, k, groups) = (node.args[0].1 as u64, node.args[1].1 as u64, node.args[4].1 as u64);
            let params = dim(inputs[0], 1) / groups * k * k * c_out;
            ResourceCount { params, macs: params * dim(out, 2) * dim(out, 3) }
        }
        OpKind::Linear => {
            let (c_in, c_out) = (last(inputs[0]), node.args[0].1 as u64);
            let positions = numel(inputs[0]) / c_in / batch;
            ResourceCount { params: c_in * c_out + c_out, macs: c_in * c_out * positions }
        }
        OpKind::BN => ResourceCount { params: 2 * dim(inputs[0], 1), macs: 0 },
        OpKind::LN => ResourceCount { params: 2 * last(inputs[0]), macs: 0 },
        OpKind::Multiply => {
            let mut macs = 0;
            let mut acc = inputs[0].clone();
            for rhs in &inputs[1..] {
                let inner = last(&acc);
                let next = crate::validate::output_shape(OpKind::Multiply, &[], &[&acc, rhs]).expect("shapes were checked");
                macs += numel(&next) * inner / batch;
                acc = next;
            }
            ResourceCount { params: 0, macs }
        }
        _ => ResourceCount::default(),
    }
}

pub fn count_resources(net: &NetworkGraph) -> ResourceCount {
    let batch = net.macro_config.batch as u64;
    let mut total = ResourceCount::default();
    for node in &net.nodes {
        let inputs: Vec<&Shape> = node.inputs.iter().map(|&i| &net.nodes[i].shape).collect();
        total += node_resources(node, &inputs, batch);
    }
    total
}
