pub mod backends;
pub mod grid;
pub mod imaging;
pub mod metrics;
pub mod stages;
pub mod pipeline;
