//! Engine for co-evolving persistent-object programs and their database
//! schemas. A small class-based calculus runs against an in-memory relational
//! store through one of two mapping mechanisms (tuple-per-object or
//! time-series table-per-object); schema-modification operations rewrite the
//! program, the schema, and the store in lock-step, and a version catalog
//! keeps older program versions readable and writable against the shared
//! store.

pub mod backends;
pub mod cli;
pub mod evolution;
pub mod interpreter;
pub mod msvdm;
pub mod relstore;
pub mod syntax;
pub mod typing;

#[doc(hidden)]
pub mod testkit;

pub use backends::Backend;
pub use syntax::{ClassName, ClassTable, EvolutionOp, Expr, Ident, VersionedProgram};
