//! The fixed operation catalog: names, parameter lists, defaults and arities.

use std::fmt;

/// Every operation the block language understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Conv2d,
    Linear,
    AvgPool2d,
    MaxPool2d,
    AdaptiveMaxPool2d,
    AdaptiveAvgPool2d,
    Add,
    Mul,
    Multiply,
    Concat,
    Mean,
    Max,
    Sum,
    Softmax,
    ReLU,
    GELU,
    Sigmoid,
    BN,
    LN,
    Permute,
    Repeat,
    Reshape,
    Input,
    Output,
}

/// Default for an omitted parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamDefault {
    Const(i64),
    /// Same value as the parameter at this position (pool stride defaults to kernel size).
    SameAs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: Option<ParamDefault>,
}

/// Number of incoming edges an operation accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Zero,
    One,
    AtLeastTwo,
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Zero => f.write_str("no inputs"),
            Arity::One => f.write_str("exactly 1 input"),
            Arity::AtLeastTwo => f.write_str("at least 2 inputs"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OpSpec {
    pub kind: OpKind,
    pub name: &'static str,
    pub params: &'static [ParamSpec],
    /// Ops like `permute(*dims)` take a free-length positional list instead of named params.
    pub variadic: bool,
    pub arity: Arity,
}

const fn req(name: &'static str) -> ParamSpec {
    ParamSpec { name, default: None }
}

const fn opt(name: &'static str, value: i64) -> ParamSpec {
    ParamSpec { name, default: Some(ParamDefault::Const(value)) }
}

const CONV: &[ParamSpec] = &[req("out_channels"), req("kernel_size"), opt("stride", 1), opt("dilation", 1), opt("groups", 1)];
const LINEAR: &[ParamSpec] = &[req("out_channels")];
const POOL: &[ParamSpec] = &[req("kernel_size"), ParamSpec { name: "stride", default: Some(ParamDefault::SameAs(0)) }];
const ADAPTIVE: &[ParamSpec] = &[req("output_size")];
const DIM: &[ParamSpec] = &[req("dim")];
const NONE: &[ParamSpec] = &[];

const fn spec(kind: OpKind, name: &'static str, params: &'static [ParamSpec], arity: Arity) -> OpSpec {
    OpSpec { kind, name, params, variadic: false, arity }
}

const fn variadic(kind: OpKind, name: &'static str) -> OpSpec {
    OpSpec { kind, name, params: NONE, variadic: true, arity: Arity::One }
}

pub const CATALOG: &[OpSpec] = &[
    spec(OpKind::Conv2d, "Conv2d", CONV, Arity::One),
    spec(OpKind::Linear, "Linear", LINEAR, Arity::One),
    spec(OpKind::AvgPool2d, "AvgPool2d", POOL, Arity::One),
    spec(OpKind::MaxPool2d, "MaxPool2d", POOL, Arity::One),
    spec(OpKind::AdaptiveMaxPool2d, "AdaptiveMaxPool2d", ADAPTIVE, Arity::One),
    spec(OpKind::AdaptiveAvgPool2d, "AdaptiveAvgPool2d", ADAPTIVE, Arity::One),
    spec(OpKind::Add, "Add", NONE, Arity::AtLeastTwo),
    spec(OpKind::Mul, "Mul", NONE, Arity::AtLeastTwo),
    spec(OpKind::Multiply, "Multiply", NONE, Arity::AtLeastTwo),
    spec(OpKind::Concat, "concat", DIM, Arity::AtLeastTwo),
    spec(OpKind::Mean, "mean", DIM, Arity::One),
    spec(OpKind::Max, "max", DIM, Arity::One),
    spec(OpKind::Sum, "sum", DIM, Arity::One),
    spec(OpKind::Softmax, "softmax", DIM, Arity::One),
    spec(OpKind::ReLU, "ReLU", NONE, Arity::One),
    spec(OpKind::GELU, "GELU", NONE, Arity::One),
    spec(OpKind::Sigmoid, "Sigmoid", NONE, Arity::One),
    spec(OpKind::BN, "BN", NONE, Arity::One),
    spec(OpKind::LN, "LN", NONE, Arity::One),
    variadic(OpKind::Permute, "permute"),
    variadic(OpKind::Repeat, "repeat"),
    variadic(OpKind::Reshape, "reshape"),
    spec(OpKind::Input, "input", NONE, Arity::Zero),
    spec(OpKind::Output, "output", NONE, Arity::One),
];

impl OpKind {
    pub fn spec(self) -> &'static OpSpec {
        CATALOG.iter().find(|s| s.kind == self).expect("every kind is in the catalog")
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        CATALOG.iter().find(|s| s.name == name).map(|s| s.kind)
    }

    pub fn param_index(self, name: &str) -> Option<usize> {
        self.spec().params.iter().position(|p| p.name == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for spec in CATALOG {
            assert_eq!(OpKind::from_name(spec.name), Some(spec.kind));
        }
        assert_eq!(CATALOG.len(), 24);
        assert_eq!(OpKind::from_name("ROIAlign"), None);
        assert_eq!(OpKind::from_name("conv2d"), None);
    }

    #[test]
    fn conv_defaults() {
        let params = OpKind::Conv2d.spec().params;
        assert_eq!(params[2], ParamSpec { name: "stride", default: Some(ParamDefault::Const(1)) });
        assert_eq!(OpKind::Conv2d.param_index("groups"), Some(4));
    }
}
