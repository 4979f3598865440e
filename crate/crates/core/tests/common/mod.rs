//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod auc_oracle;
pub mod gradcheck;
pub mod op_checks;
