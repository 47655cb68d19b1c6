//! Batch workbench for persona-driven street-crossing studies: builds decision
//! personas from questionnaire data, runs them through a clip-backed crossing
//! simulator against an oracle backend, ingests human motion-capture exports
//! onto the same spatial grid, and compares the two cohorts statistically.

pub mod oracle;
pub mod persona;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod trajectory;
pub mod workbench;

pub mod fixtures;
