pub mod cli;
pub mod dsl;
pub mod geom;
pub mod metrics;
pub mod render;
pub mod synth;
pub mod vector;
