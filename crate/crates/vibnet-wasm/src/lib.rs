//! Browser demo bindings: the penalty-curve explorer, a gate sampling
//! explorer, and a live train-and-prune loop on 2-D blobs. All heavy
//! lifting lives in the vibnet core crate; this layer only shapes data
//! for the canvas.

use wasm_bindgen::prelude::*;

use vibnet::analysis::rho;
use vibnet::data::synthetic_blobs;
use vibnet::gate::{Broadcast, VibGate};
use vibnet::network::{toy_mlp, GateSlot};
use vibnet::pruner::prune;
use vibnet::rng::RandomSource;
use vibnet::tensor::Tensor;
use vibnet::trainer::{OptimizerKind, StepTrainer, TrainConfig};

/// rho(mu; omega) - rho(0; omega) on a symmetric mu grid, interleaved as
/// [mu_0, gap_0, l1ref_0, mu_1, ...]. The l1 reference is 2|mu|/sqrt(omega).
#[wasm_bindgen]
pub fn penalty_curve(omega: f64, points: usize, mu_max: f64) -> Result<Vec<f64>, JsError> {
    if points < 2 {
        return Err(JsError::new("need at least 2 points"));
    }
    let base = rho(0.0, omega).map_err(|e| JsError::new(&e.to_string()))?;
    let mut out = Vec::with_capacity(points * 3);
    for i in 0..points {
        let mu = -mu_max + 2.0 * mu_max * i as f64 / (points - 1) as f64;
        let gap = rho(mu, omega).map_err(|e| JsError::new(&e.to_string()))? - base;
        out.push(mu);
        out.push(gap);
        out.push(2.0 * mu.abs() / omega.sqrt());
    }
    Ok(out)
}

/// Histogram of gate samples z = mu + eps * sigma over `bins` bins on
/// [lo, hi], plus summary stats appended: [counts..., kl, alpha, mean, var].
#[wasm_bindgen]
pub fn gate_sample_histogram(
    mu: f64,
    log_sigma2: f64,
    draws: usize,
    bins: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Vec<f64> {
    let gate = VibGate {
        mu: vec![mu],
        log_sigma2: vec![log_sigma2],
        gamma: 1.0,
        broadcast: Broadcast::PerNeuron,
    };
    let mut rng = RandomSource::new(seed);
    let mut counts = vec![0.0; bins];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let sigma = gate.sigma(0);
    for _ in 0..draws {
        let z = mu + sigma * rng.standard_normal();
        sum += z;
        sumsq += z * z;
        let t = (z - lo) / (hi - lo);
        if (0.0..1.0).contains(&t) {
            counts[(t * bins as f64) as usize] += 1.0;
        }
    }
    let (kl, _) = gate.kl_penalty();
    let mean = sum / draws as f64;
    counts.push(kl);
    counts.push(gate.alpha()[0]);
    counts.push(mean);
    counts.push(sumsq / draws as f64 - mean * mean);
    counts
}

/// Interactive training of a gated 2-16-3 classifier on three Gaussian
/// blobs in the plane.
#[wasm_bindgen]
pub struct DemoTrainer {
    trainer: StepTrainer,
    images: Tensor,
    labels: Vec<usize>,
    batch: usize,
    perm_rng: RandomSource,
    cursor: Vec<usize>,
}

pub const DEMO_HIDDEN: usize = 16;

#[wasm_bindgen]
impl DemoTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, gamma: f64) -> Result<DemoTrainer, JsError> {
        let data = synthetic_blobs(360, 3, 2, 3.0, seed ^ 0xb10b)
            .map_err(|e| JsError::new(&e.to_string()))?;
        let mut rng = RandomSource::new(seed);
        let net = toy_mlp(&[2, DEMO_HIDDEN, 3], false, false, &mut rng);
        let cfg = TrainConfig {
            gamma_prime: gamma,
            optimizer: OptimizerKind::adam(5e-3),
            epochs: 0,
            batch_size: 60,
            seed,
            eval_every: 0,
            shards: 1,
            ..TrainConfig::default()
        };
        Ok(DemoTrainer {
            trainer: StepTrainer::new(net, cfg),
            images: data.images,
            labels: data.labels,
            batch: 60,
            perm_rng: RandomSource::new(seed).child(9),
            cursor: Vec::new(),
        })
    }

    /// Run `n` minibatch steps; returns the last total loss.
    pub fn step(&mut self, n: usize) -> Result<f64, JsError> {
        let mut last = f64::NAN;
        for _ in 0..n {
            if self.cursor.len() < self.batch {
                self.cursor = self.perm_rng.permutation(self.labels.len());
            }
            let idx: Vec<usize> = self.cursor.drain(..self.batch).collect();
            let x = self.images.gather_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
            last = self
                .trainer
                .step(&x, &y)
                .map_err(|e| JsError::new(&e.to_string()))?
                .total;
        }
        Ok(last)
    }

    /// Per-unit alpha of the hidden gate.
    pub fn alphas(&self) -> Vec<f64> {
        match &self.trainer.network().blocks[0].gate {
            GateSlot::Stochastic(g) => g.alpha(),
            GateSlot::Fixed { multipliers, .. } => multipliers.iter().map(|_| 1.0).collect(),
        }
    }

    /// Training-set error of the mean-mode network.
    pub fn train_error(&self) -> Result<f64, JsError> {
        self.trainer
            .network()
            .classification_error(&self.images, &self.labels)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Predicted class over an n x n grid spanning [-extent, extent]^2,
    /// row-major, as class indices.
    pub fn decision_grid(&self, n: usize, extent: f64) -> Result<Vec<u8>, JsError> {
        grid_of(self.trainer.network(), n, extent)
    }

    /// Survivor count at the given threshold without modifying the model.
    pub fn survivors(&self, tau: f64) -> usize {
        self.alphas().iter().filter(|&&a| a >= tau).count()
    }

    /// Prune at tau and return the pruned net's decision grid; the live
    /// model keeps training unchanged. Errors when every unit dies
    /// (degenerate architecture).
    pub fn pruned_grid(&self, tau: f64, n: usize, extent: f64) -> Result<Vec<u8>, JsError> {
        let (pruned, _) =
            prune(self.trainer.network(), tau).map_err(|e| JsError::new(&e.to_string()))?;
        grid_of(&pruned, n, extent)
    }

    /// Pruned network's training-set error at the given threshold.
    pub fn pruned_error(&self, tau: f64) -> Result<f64, JsError> {
        let (pruned, _) =
            prune(self.trainer.network(), tau).map_err(|e| JsError::new(&e.to_string()))?;
        pruned
            .classification_error(&self.images, &self.labels)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// The blob data as [x0, y0, label0, x1, ...] for scatter plotting.
    pub fn scatter(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.labels.len() * 3);
        for i in 0..self.labels.len() {
            out.push(self.images.at2(i, 0));
            out.push(self.images.at2(i, 1));
            out.push(self.labels[i] as f64);
        }
        out
    }
}

fn grid_of(net: &vibnet::network::Network, n: usize, extent: f64) -> Result<Vec<u8>, JsError> {
    let mut coords = Vec::with_capacity(n * n * 2);
    for r in 0..n {
        for c in 0..n {
            let y = -extent + 2.0 * extent * r as f64 / (n - 1) as f64;
            let x = -extent + 2.0 * extent * c as f64 / (n - 1) as f64;
            coords.push(x);
            coords.push(y);
        }
    }
    let grid = Tensor::from_vec(&[n * n, 2], coords).map_err(|e| JsError::new(&e.to_string()))?;
    let out = net.eval_forward(&grid).map_err(|e| JsError::new(&e.to_string()))?;
    Ok((0..out.rows())
        .map(|r| {
            let row = out.row(r);
            let mut best = 0usize;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect())
}
