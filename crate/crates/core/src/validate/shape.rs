//! Per-operation shape rules on resolved integer arguments.
//!
//! Shared by the validator (under test bindings) and network assembly (under the
//! assembly binding), so both agree on every output shape.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::FindingKind;
use crate::dsl::OpKind;

/// A concrete tensor shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(pub Vec<i64>);

impl Shape {
    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn dims(&self) -> &[i64] {
        &self.0
    }

    pub fn numel(&self) -> Option<i64> {
        self.0.iter().try_fold(1i64, |acc, d| acc.checked_mul(*d))
    }
}

impl From<Vec<i64>> for Shape {
    fn from(dims: Vec<i64>) -> Self {
        Shape(dims)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub kind: FindingKind,
    pub reason: String,
}

fn fail<T>(kind: FindingKind, reason: impl Into<String>) -> Result<T, ShapeError> {
    Err(ShapeError { kind, reason: reason.into() })
}

fn join(shapes: &[&Shape]) -> String {
    shapes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" and ")
}

/// Output size of a sliding window along one axis. `None` when the window does not fit.
pub fn window_out(x: i64, kernel: i64, stride: i64, dilation: i64, padding: i64) -> Option<i64> {
    let span = dilation.checked_mul(kernel - 1)?;
    let num = x.checked_add(2 * padding)?.checked_sub(span)?.checked_sub(1)?;
    let out = num.div_euclid(stride) + 1;
    (out >= 1 && num >= 0).then_some(out)
}

/// Implicit same-padding of a convolution.
pub fn same_padding(kernel: i64, dilation: i64) -> i64 {
    dilation * (kernel - 1) / 2
}

fn require_rank(name: &str, input: &Shape, rank: usize) -> Result<(), ShapeError> {
    if input.rank() != rank {
        return fail(
            FindingKind::RankMismatch,
            format!("{name} expects a rank-{rank} input, got {input}"),
        );
    }
    Ok(())
}

fn require_positive(name: &str, param: &str, value: i64) -> Result<(), ShapeError> {
    if value < 1 {
        return fail(FindingKind::InvalidArgument, format!("{name} {param} must be >= 1, got {value}"));
    }
    Ok(())
}

fn resolve_dim(name: &str, dim: i64, input: &Shape) -> Result<usize, ShapeError> {
    let rank = input.rank() as i64;
    let d = if dim < 0 { dim + rank } else { dim };
    if d < 0 || d >= rank {
        return fail(FindingKind::InvalidDim, format!("{name} dim={dim} is out of range for input {input}"));
    }
    Ok(d as usize)
}

/// Broadcasts shapes right-aligned; dimensions must match or be 1.
pub fn broadcast(shapes: &[&Shape]) -> Option<Shape> {
    let rank = shapes.iter().map(|s| s.rank()).max()?;
    let mut out = vec![1i64; rank];
    for shape in shapes {
        let offset = rank - shape.rank();
        for (i, &d) in shape.0.iter().enumerate() {
            let slot = &mut out[offset + i];
            if *slot == 1 {
                *slot = d;
            } else if d != 1 && d != *slot {
                return None;
            }
        }
    }
    Some(Shape(out))
}

fn matmul(a: &Shape, b: &Shape) -> Result<Shape, ShapeError> {
    if a.rank() < 2 || b.rank() < 2 {
        return fail(FindingKind::MatmulMismatch, format!("Multiply needs rank >= 2 operands, got {a} and {b}"));
    }
    let (m, k1) = (a.0[a.rank() - 2], a.0[a.rank() - 1]);
    let (k2, n) = (b.0[b.rank() - 2], b.0[b.rank() - 1]);
    if k1 != k2 {
        return fail(
            FindingKind::MatmulMismatch,
            format!("Multiply inner dimensions differ: {a} and {b}"),
        );
    }
    let lead_a = Shape(a.0[..a.rank() - 2].to_vec());
    let lead_b = Shape(b.0[..b.rank() - 2].to_vec());
    let Some(lead) = broadcast(&[&lead_a, &lead_b]) else {
        return fail(
            FindingKind::MatmulMismatch,
            format!("Multiply batch dimensions do not broadcast: {a} and {b}"),
        );
    };
    let mut out = lead.0;
    out.extend([m, n]);
    Ok(Shape(out))
}

/// Output shape of one operation given its resolved arguments (catalog order, defaults
/// filled) and its operand shapes in ascending source-index order.
pub fn output_shape(kind: OpKind, args: &[i64], inputs: &[&Shape]) -> Result<Shape, ShapeError> {
    let name = kind.name();
    let first = || inputs[0];
    match kind {
        OpKind::Input => fail(FindingKind::InputHasInputs, "input node cannot have incoming edges"),
        OpKind::Output | OpKind::ReLU | OpKind::GELU | OpKind::Sigmoid | OpKind::LN => Ok(first().clone()),
        OpKind::BN => {
            require_rank(name, first(), 4)?;
            Ok(first().clone())
        }
        OpKind::Conv2d => {
            let x = first();
            require_rank(name, x, 4)?;
            let (out, k, s, d, g) = (args[0], args[1], args[2], args[3], args[4]);
            for (param, v) in [("out_channels", out), ("kernel_size", k), ("stride", s), ("dilation", d), ("groups", g)] {
                require_positive(name, param, v)?;
            }
            let c_in = x.0[1];
            if c_in % g != 0 || out % g != 0 {
                return fail(
                    FindingKind::GroupsDivisibility,
                    format!(
                        "Conv2d in_channels {c_in} and out_channels {out} must both be divisible by groups={g}, input {x}"
                    ),
                );
            }
            let p = same_padding(k, d);
            let (Some(h), Some(w)) = (window_out(x.0[2], k, s, d, p), window_out(x.0[3], k, s, d, p)) else {
                return fail(
                    FindingKind::SpatialUnderflow,
                    format!("Conv2d kernel_size={k} dilation={d} does not fit input {x}"),
                );
            };
            Ok(Shape(vec![x.0[0], out, h, w]))
        }
        OpKind::Linear => {
            let x = first();
            require_positive(name, "out_channels", args[0])?;
            let mut out = x.0.clone();
            *out.last_mut().expect("rank >= 1") = args[0];
            Ok(Shape(out))
        }
        OpKind::AvgPool2d | OpKind::MaxPool2d => {
            let x = first();
            require_rank(name, x, 4)?;
            let (k, s) = (args[0], args[1]);
            require_positive(name, "kernel_size", k)?;
            require_positive(name, "stride", s)?;
            let (Some(h), Some(w)) = (window_out(x.0[2], k, s, 1, 0), window_out(x.0[3], k, s, 1, 0)) else {
                return fail(
                    FindingKind::SpatialUnderflow,
                    format!("{name} kernel_size={k} does not fit input {x}"),
                );
            };
            Ok(Shape(vec![x.0[0], x.0[1], h, w]))
        }
        OpKind::AdaptiveAvgPool2d | OpKind::AdaptiveMaxPool2d => {
            let x = first();
            require_rank(name, x, 4)?;
            require_positive(name, "output_size", args[0])?;
            Ok(Shape(vec![x.0[0], x.0[1], args[0], args[0]]))
        }
        OpKind::Add | OpKind::Mul => broadcast(inputs).map_or_else(
            || {
                fail(
                    FindingKind::Broadcast,
                    format!("{name} operand shapes {} do not conform to the broadcasting rule", join(inputs)),
                )
            },
            Ok,
        ),
        OpKind::Multiply => {
            let mut acc = inputs[0].clone();
            for rhs in &inputs[1..] {
                acc = matmul(&acc, rhs)?;
            }
            Ok(acc)
        }
        OpKind::Concat => {
            let x = first();
            let d = resolve_dim(name, args[0], x)?;
            let mut out = x.clone();
            for other in &inputs[1..] {
                let compatible = other.rank() == x.rank()
                    && other.0.iter().zip(&x.0).enumerate().all(|(i, (a, b))| i == d || a == b);
                if !compatible {
                    return fail(
                        FindingKind::ConcatMismatch,
                        format!("concat along dim={} needs equal other dimensions, got {}", args[0], join(inputs)),
                    );
                }
                out.0[d] = out.0[d].checked_add(other.0[d]).ok_or_else(|| ShapeError {
                    kind: FindingKind::InvalidArgument,
                    reason: "concat size overflows".into(),
                })?;
            }
            Ok(out)
        }
        OpKind::Mean | OpKind::Max | OpKind::Sum => {
            let x = first();
            let d = resolve_dim(name, args[0], x)?;
            let mut out = x.clone();
            out.0[d] = 1;
            Ok(out)
        }
        OpKind::Softmax => {
            resolve_dim(name, args[0], first())?;
            Ok(first().clone())
        }
        OpKind::Permute => {
            let x = first();
            let mut seen = vec![false; x.rank()];
            let valid = args.len() == x.rank()
                && args.iter().all(|&a| {
                    let ok = a >= 0 && (a as usize) < seen.len() && !seen[a as usize];
                    if ok {
                        seen[a as usize] = true;
                    }
                    ok
                });
            if !valid {
                return fail(
                    FindingKind::PermuteRank,
                    format!("permute{args:?} is not a permutation of the {} dimensions of input {x}", x.rank()),
                );
            }
            Ok(Shape(args.iter().map(|&a| x.0[a as usize]).collect()))
        }
        OpKind::Repeat => {
            let x = first();
            if args.len() != x.rank() {
                return fail(
                    FindingKind::RepeatRank,
                    format!("repeat takes {} factors for input {x}, got {}", x.rank(), args.len()),
                );
            }
            let mut out = Vec::with_capacity(args.len());
            for (&d, &r) in x.0.iter().zip(args) {
                require_positive(name, "factor", r)?;
                out.push(d.checked_mul(r).ok_or_else(|| ShapeError {
                    kind: FindingKind::InvalidArgument,
                    reason: "repeat size overflows".into(),
                })?);
            }
            Ok(Shape(out))
        }
        OpKind::Reshape => {
            let x = first();
            let wildcards = args.iter().filter(|&&a| a == -1).count();
            if wildcards > 1 || args.iter().any(|&a| a < 1 && a != -1) {
                return fail(
                    FindingKind::ReshapeCount,
                    format!("reshape{args:?} allows positive sizes and at most one -1"),
                );
            }
            let total = x.numel().ok_or_else(|| ShapeError {
                kind: FindingKind::InvalidArgument,
                reason: format!("input {x} is too large"),
            })?;
            let known = args.iter().filter(|&&a| a != -1).try_fold(1i64, |acc, &a| acc.checked_mul(a));
            let mismatch = || ShapeError {
                kind: FindingKind::ReshapeCount,
                reason: format!("reshape{args:?} cannot hold the {total} elements of input {x}"),
            };
            let known = known.ok_or_else(mismatch)?;
            let mut out = args.to_vec();
            if wildcards == 1 {
                if total % known != 0 {
                    return Err(mismatch());
                }
                let slot = out.iter_mut().find(|a| **a == -1).expect("one wildcard");
                *slot = total / known;
            } else if known != total {
                return Err(mismatch());
            }
            Ok(Shape(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(d: &[i64]) -> Shape {
        Shape(d.to_vec())
    }

    #[test]
    fn conv_same_padding_preserves_spatial() {
        let x = s(&[2, 16, 32, 32]);
        for k in [1, 3, 5, 7] {
            assert_eq!(output_shape(OpKind::Conv2d, &[8, k, 1, 1, 1], &[&x]).unwrap(), s(&[2, 8, 32, 32]));
        }
        assert_eq!(output_shape(OpKind::Conv2d, &[8, 3, 2, 1, 1], &[&x]).unwrap(), s(&[2, 8, 16, 16]));
        assert_eq!(output_shape(OpKind::Conv2d, &[8, 3, 1, 2, 1], &[&x]).unwrap(), s(&[2, 8, 32, 32]));
        // even kernels lose one pixel under floor(d(k-1)/2) padding
        assert_eq!(output_shape(OpKind::Conv2d, &[8, 2, 1, 1, 1], &[&x]).unwrap(), s(&[2, 8, 31, 31]));
    }

    #[test]
    fn groups_must_divide_both_channel_counts() {
        let x = s(&[1, 16, 8, 8]);
        let e = output_shape(OpKind::Conv2d, &[15, 3, 1, 1, 4], &[&x]).unwrap_err();
        assert_eq!(e.kind, FindingKind::GroupsDivisibility);
        assert!(output_shape(OpKind::Conv2d, &[16, 3, 1, 1, 16], &[&x]).is_ok());
    }

    #[test]
    fn pool_without_padding_shrinks() {
        let x = s(&[2, 16, 32, 32]);
        assert_eq!(output_shape(OpKind::MaxPool2d, &[3, 1], &[&x]).unwrap(), s(&[2, 16, 30, 30]));
        assert_eq!(output_shape(OpKind::AvgPool2d, &[2, 2], &[&x]).unwrap(), s(&[2, 16, 16, 16]));
        assert_eq!(output_shape(OpKind::AvgPool2d, &[3, 2], &[&s(&[1, 1, 2, 2])]).unwrap_err().kind, FindingKind::SpatialUnderflow);
    }

    #[test]
    fn broadcasting() {
        assert_eq!(broadcast(&[&s(&[2, 16, 1, 1]), &s(&[2, 16, 8, 8])]), Some(s(&[2, 16, 8, 8])));
        assert_eq!(broadcast(&[&s(&[16, 1, 1]), &s(&[2, 16, 8, 8])]), Some(s(&[2, 16, 8, 8])));
        assert_eq!(broadcast(&[&s(&[2, 16, 30, 30]), &s(&[2, 16, 32, 32])]), None);
    }

    #[test]
    fn reductions_keep_dim() {
        let x = s(&[4, 10, 7]);
        assert_eq!(output_shape(OpKind::Mean, &[1], &[&x]).unwrap(), s(&[4, 1, 7]));
        assert_eq!(output_shape(OpKind::Max, &[2], &[&x]).unwrap(), s(&[4, 10, 1]));
        assert_eq!(output_shape(OpKind::Sum, &[0], &[&x]).unwrap(), s(&[1, 10, 7]));
        assert_eq!(output_shape(OpKind::Sum, &[-1], &[&x]).unwrap(), s(&[4, 10, 1]));
        assert_eq!(output_shape(OpKind::Sum, &[3], &[&x]).unwrap_err().kind, FindingKind::InvalidDim);
    }

    #[test]
    fn matmul_batches() {
        let a = s(&[2, 4, 5, 6]);
        let b = s(&[2, 4, 6, 3]);
        assert_eq!(output_shape(OpKind::Multiply, &[], &[&a, &b]).unwrap(), s(&[2, 4, 5, 3]));
        assert_eq!(output_shape(OpKind::Multiply, &[], &[&a, &a]).unwrap_err().kind, FindingKind::MatmulMismatch);
    }

    #[test]
    fn reshape_and_permute() {
        let x = s(&[2, 16, 8, 8]);
        assert_eq!(output_shape(OpKind::Reshape, &[2, 16, -1], &[&x]).unwrap(), s(&[2, 16, 64]));
        assert_eq!(output_shape(OpKind::Reshape, &[2, -1, -1], &[&x]).unwrap_err().kind, FindingKind::ReshapeCount);
        assert_eq!(output_shape(OpKind::Reshape, &[2, 15, -1], &[&x]).unwrap_err().kind, FindingKind::ReshapeCount);
        assert_eq!(output_shape(OpKind::Permute, &[0, 2, 3, 1], &[&x]).unwrap(), s(&[2, 8, 8, 16]));
        assert_eq!(output_shape(OpKind::Permute, &[0, 2, 1], &[&x]).unwrap_err().kind, FindingKind::PermuteRank);
        assert_eq!(output_shape(OpKind::Permute, &[0, 1, 1, 2], &[&x]).unwrap_err().kind, FindingKind::PermuteRank);
    }

    #[test]
    fn concat_checks_other_dims() {
        let a = s(&[2, 16, 8, 8]);
        let b = s(&[2, 8, 8, 8]);
        assert_eq!(output_shape(OpKind::Concat, &[1], &[&a, &b]).unwrap(), s(&[2, 24, 8, 8]));
        assert_eq!(output_shape(OpKind::Concat, &[2], &[&a, &b]).unwrap_err().kind, FindingKind::ConcatMismatch);
    }

    #[test]
    fn shape_display() {
        assert_eq!(s(&[2, 16, 30, 30]).to_string(), "(2, 16, 30, 30)");
    }
}
