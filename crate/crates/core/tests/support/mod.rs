//! Checks shared by the per-area test files and the acceptance run.
#![allow(dead_code)]

pub mod datasets;
pub mod gradcheck;
pub mod invariants;
pub mod oracle;
