//! Temporal knowledge-graph question answering at desk scale.
//!
//! Pipeline: complex-valued temporal KG embeddings with an ordering
//! objective, constraint-aware question encoding over retrieved SPO facts,
//! multi-hop diffusion reasoning over temporal subgraphs, and multi-view
//! fusion for answer prediction, plus a synthetic-data harness.

pub mod fusion;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod params;
pub mod reasoner;
pub mod store;
pub mod encoder;
pub mod tkge;
