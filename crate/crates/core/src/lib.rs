//! Molecular hypergraph grammar autoencoder: molecule graphs, grammar
//! induction and constrained derivation, the GIN encoder / GRU decoder
//! model, training, and a downstream property-prediction harness.

pub mod canon;
pub mod downstream;
pub mod grammar;
pub mod hypergraph;
pub mod model;
pub mod molgraph;
pub mod training;
