pub mod channel;
pub mod cli;
pub mod metrics;
pub mod renderer;
pub mod sampler;
pub mod tensor;
pub mod training;
pub mod wirare;
