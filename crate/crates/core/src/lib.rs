pub mod contingency;
pub mod dataset;
pub mod harness;
pub mod montecarlo;
pub mod randomize;
pub mod separation;
pub mod special;
mod summation;
pub mod testcat;

pub use summation::{compensated_sum, NeumaierSum};

pub use csv;
