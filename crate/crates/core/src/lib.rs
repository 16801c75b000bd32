//! Finite-field transforms on a simulated 128×128 systolic matrix unit.
//!
//! Modules, bottom up:
//! - [`field`]: exact prime fields and the reference transforms.
//! - [`mxu`]: limb packing, accumulator models and staged evaluation.
//! - [`erns`]: the nine-residue chain and RNS Montgomery reduction for BN254.
//! - [`scheduler`]: tenant batching, slice assignment and geometric metrics.
//! - [`hlo`]: a small dataflow IR with zone annotations and its separation validator.
//! - [`trace`]: Poisson traces and modeled replay.
//! - [`cost`]: closed-form throughput and cost arithmetic.
//! - [`acceptance`]: the end-to-end criteria, shared by the test suite and the CLI.

pub mod field;
pub mod mxu;
pub mod erns;
pub mod scheduler;
pub mod hlo;
pub mod trace;
pub mod cost;
pub mod acceptance;
