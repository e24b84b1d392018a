//! Library side of the `lyapset` command: problem files, the analysis runner,
//! report/CSV persistence, SVG plots and the built-in self test.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod plot;
pub mod problem;
pub mod selftest;

pub use analyze::{analyze_file, run_analysis, Report};
pub use problem::{load_problem, parse_problem, Problem, ProblemDefinition};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_REJECTED: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {msg}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("schema error at {pointer}: {msg}")]
    Schema { pointer: String, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] lyapset_core::Error),
}

/// Per-block seed: the top-level seed plus a stable hash of the block name,
/// so adding a block leaves the others' randomness unchanged.
pub fn derived_seed(seed: u64, block: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in block.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed.wrapping_add(h)
}
