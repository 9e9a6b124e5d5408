//! Case files, reports and command implementations for the `gridcert` binary.

pub mod caseio;
pub mod commands;

pub use caseio::{parse_case, parse_case_str, to_toml, CaseDocument, CertifySection};
