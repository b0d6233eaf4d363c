//! The ProbLog-style rule language: parsing, desugaring and stratification.

mod ast;
mod desugar;
mod parser;
mod stratify;

pub use ast::{Atom, Clause, CmpOp, Literal, PredKey, Program, Term, Weight, DEFAULT_LEARNABLE_INIT};
pub use desugar::{bound_vars, desugar, CoreFact, CoreLit, CoreProgram, CoreRule, DesugarOptions, Param};
pub use parser::{parse_atom, parse_ground_atom, parse_program};
pub use stratify::stratify;

use std::path::Path;

use crate::error::Result;

/// Parses and desugars a rule file.
pub fn load_rules(path: &Path, options: DesugarOptions) -> Result<CoreProgram> {
    let text = std::fs::read_to_string(path)?;
    desugar(&parse_program(&text)?, options)
}
