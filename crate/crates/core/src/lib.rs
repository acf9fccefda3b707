pub mod agents;
pub mod data;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod localize;
pub mod oracle;
pub mod pipeline;
pub mod refine;
pub mod simulator;
pub mod stats;
