pub mod discretize;
pub mod eval;
pub mod gridworld;
pub mod models;
pub mod pipeline;
pub mod plan;
pub mod render;
pub mod sim;
pub mod tensornet;
pub mod util;
pub mod workflow;
