//! The block language: expressions, the operation catalog, and block text I/O.

mod block;
mod catalog;
mod expr;

pub use block::{
    parse_block, Arg, ArgError, Block, BlockError, NodeIndex, OpInstance, Operation, ParseError, ParseErrorKind,
};
pub use catalog::{Arity, OpKind, OpSpec, ParamDefault, ParamSpec, CATALOG};
pub use expr::{parse_expr, BinOp, BindingError, EvalError, Expr, ExprParseError, Var, VarBinding};

/// Canonical text of a block. Same as `block.to_string()`.
pub fn print_block(block: &Block) -> String {
    block.print()
}
