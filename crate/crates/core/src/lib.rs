//! Iterative repair of vulnerable C functions with chat models.
//!
//! The crate covers the whole loop: [`corpus`] builds before/after pairs
//! from a CVEfixes database, [`prompting`] renders the prompts, [`llm`]
//! talks to a chat endpoint or a recorded cassette, [`pipeline`] drives the
//! repair iterations, [`metric`] implements CodeBLEU and [`eval`] scores and
//! reports outcomes. [`cli`] wires it into the `vulnrepair` binary.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod metric;
pub mod pipeline;
pub mod prompting;

mod scan;
