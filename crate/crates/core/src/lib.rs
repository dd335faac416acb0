//! Active learning over a sentence stream with interactive neural machine
//! translation.

pub mod active;
pub mod aligner;
pub mod corpus;
pub mod inmt;
pub mod metrics;
pub mod model;
pub mod sampling;
pub mod subword;
pub mod synthetic;
