//! Neural-network compression with variational information-bottleneck
//! gates: train with stochastic multiplicative gates under a closed-form
//! KL penalty, prune units whose signal-to-noise ratio alpha vanishes,
//! and report model-size / FLOPs / memory compression.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod analysis;
pub mod error;
pub mod gate;
pub mod layers;
pub mod mi;
pub mod network;
pub mod pruner;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Result, VibError};
pub use gate::{Broadcast, GateMode, VibGate};
pub use network::{EpsilonDraw, Likelihood, Network, Target};
pub use rng::RandomSource;
pub use tensor::Tensor;
