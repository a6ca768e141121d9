//! Stream reasoning over a fragment of LARS: a parser, a reference evaluator
//! that recomputes every tick from scratch, and an incremental engine.

pub mod dataset;
pub mod incremental;
pub mod io;
pub mod model;
pub mod naive;
pub mod par;
pub mod parser;
pub mod query;
pub mod runner;
pub mod stream;
pub mod window;
