//! A benchmark harness for plan-guided tool-use agents.
//!
//! The crate has three layers:
//!
//! * **World model** — [`dataset`] defines cases (plans, toolsets, reference
//!   actions) and [`simulator`] executes tool calls against each case's
//!   grounded invocation dictionary, with type-aware argument
//!   canonicalization and a final-payload success judge.
//! * **Decision layer** — [`policy`] produces actions for a substep, either
//!   by sampling complete calls or by exposing a distribution over an indexed
//!   candidate list (composable from per-digit token probabilities);
//!   [`entropy`] turns samples/distributions into uncertainty estimates.
//! * **Search layer** — [`search`] runs the strategies (greedy, majority
//!   vote, entropy-guided branching, random-order branching), [`metrics`]
//!   scores runs, [`synthgen`] generates solvable benchmark suites, and
//!   [`runner`] drives whole experiments from a config file.

pub mod dataset;
pub mod entropy;
pub mod metrics;
pub mod policy;
pub mod runner;
pub mod search;
pub mod seed;
pub mod simulator;
pub mod synthgen;
