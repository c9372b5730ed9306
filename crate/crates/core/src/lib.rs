pub mod agent;
pub mod analysis;
pub mod board;
pub mod dsl;
pub mod embeddings;
pub mod env;
pub mod library;
pub mod nn;
pub mod priors;
pub mod rng;
pub mod synthesis;
