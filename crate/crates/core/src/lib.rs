//! Lifting iOS arm64 binaries into a queryable property graph.

pub mod analyses;
pub mod disasm;
pub mod ingest;
pub mod macho;
pub mod objc;
pub mod pipeline;
pub mod plist;
pub mod supergraph;
pub mod traverse;
