//! Shared helpers for integration tests: finite-difference machinery and
//! the MNIST data location.

use std::path::PathBuf;

use vibnet::network::{NetGrads, Network, Target};
use vibnet::rng::RandomSource;
use vibnet::tensor::Tensor;
use vibnet::{EpsilonDraw, GateMode};

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Loss under frozen noise as a pure function of the parameters.
pub fn frozen_loss(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    noise: &vibnet::network::NetNoise,
) -> f64 {
    net.loss(x, Target::Classes(labels), GateMode::TrainSample, noise).unwrap().0.total
}

/// Central-difference check of every parameter against the analytic
/// gradient; returns the worst relative error observed.
pub fn network_grad_worst_rel_err(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    noise_seed: u64,
) -> f64 {
    let noise = {
        let mut nrng = RandomSource::new(noise_seed);
        net.draw_noise(x.rows(), EpsilonDraw::PerExample, &mut nrng)
    };
    let (_, cache) =
        net.loss(x, Target::Classes(labels), GateMode::TrainSample, &noise).unwrap();
    let analytic: NetGrads = net.backward(&cache, Target::Classes(labels)).unwrap();
    let flat = analytic.flat();
    let h = 1e-5;
    let n_groups = flat.len();
    let mut worst = 0.0f64;
    for g in 0..n_groups {
        for i in 0..flat[g].len() {
            let mut plus = net.clone();
            plus.params_mut()[g].1[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[g].1[i] -= h;
            let fd = (frozen_loss(&plus, x, labels, &noise)
                - frozen_loss(&minus, x, labels, &noise))
                / (2.0 * h);
            worst = worst.max(rel_err(flat[g][i], fd));
        }
    }
    worst
}

/// MNIST directory: $DATA_DIR, else <workspace>/data/mnist.
pub fn mnist_dir() -> PathBuf {
    std::env::var("DATA_DIR").map(PathBuf::from).unwrap_or_else(|_| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
    })
}
