//! Minimal neural-network toolkit with hand-written backward passes.

pub mod conv;
pub mod layers;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod transformer;

pub use layers::{LayerNorm, Linear};
pub use optim::AdamW;
pub use params::{clip_grad_norm, derive_seed, seeded_rng, Init, NamedTensor, ParamId, ParamInfo, ParamStore};
pub use transformer::Block;
