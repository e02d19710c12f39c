//! Engine for LLM-driven neural architecture design over a textual DAG language.

pub mod agents;
pub mod codegen;
pub mod dsl;
pub mod graphops;
pub mod history;
pub mod modtree;
pub mod orchestrator;
mod http;
pub mod knowledge;
pub mod validate;

pub use dsl::{parse_block, print_block, Block, Expr, OpKind, VarBinding};
pub use validate::{check_structure, infer_shapes, validate, validate_role, Role, ValidationReport};
pub use graphops::{block_digest, canonical_hash, is_isomorphic, BlockDigest};
pub use modtree::{ArchSet, ModTree, NodeId, SelectionPolicy, TrainOutcome};
