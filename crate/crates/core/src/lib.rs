pub mod tensor;
pub mod graph;
pub mod models;
pub mod iem;
pub mod disentangle;
pub mod eval;
pub mod error;
pub mod train;
pub mod experiment;
