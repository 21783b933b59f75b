//! Desk-scale tooling around the screening engine: a synthetic fundus
//! corpus, batch screening, a throughput benchmark, the console's HTTP
//! API and the `vscreen` command line.

pub mod bench;
pub mod cli;
pub mod screen;
pub mod service;
pub mod synth;
