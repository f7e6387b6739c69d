pub mod cli;
pub mod graph;
pub mod heuristic;
pub mod instances;
pub mod model;
pub mod policies;
pub mod queueing;
pub mod sim;
