//! Scene- and text-conditioned human motion diffusion.

pub mod diffusion;
pub mod fusion;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod scene;
pub mod text;
pub mod tensor;
