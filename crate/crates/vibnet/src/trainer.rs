//! Minibatch stochastic optimization of the gated objective.
//!
//! Determinism contract: all randomness flows from `TrainConfig::seed`, the
//! minibatch is split into `shards` fixed contiguous pieces whose gradients
//! are reduced in shard order, and gate noise is drawn once per batch
//! before sharding — so the same config produces bit-identical runs on any
//! thread count.

use crate::data::Dataset;
use crate::error::{Result, VibError};
use crate::gate::{LOG_SIGMA2_MAX, LOG_SIGMA2_MIN};
use crate::network::{EpsilonDraw, GateSlot, NetGrads, Network, ParamKind, Target};
use crate::pruner::DEFAULT_TAU;
use crate::rng::RandomSource;
use crate::tensor::Tensor;
use crate::GateMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaRule {
    /// gamma_i = gamma' everywhere.
    Uniform,
    /// gamma_i = gamma' / S_i for conv blocks with feature side S_i,
    /// gamma' for dense blocks and the input gate.
    InverseSideLength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
    SgdMomentum { learning_rate: f64, momentum: f64 },
}

impl OptimizerKind {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerKind::Adam { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerKind::Adam { learning_rate, .. }
            | OptimizerKind::SgdMomentum { learning_rate, .. } => *learning_rate,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub gamma_prime: f64,
    pub gamma_rule: GammaRule,
    pub optimizer: OptimizerKind,
    /// L2 decay on affine/conv weights only (never biases, batch-norm, or
    /// gate parameters).
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate train/test error every this many epochs (0 = only final).
    pub eval_every: usize,
    pub epsilon_draw: EpsilonDraw,
    /// Fixed shard count for deterministic parallel gradient reduction.
    pub shards: usize,
    /// Step decay: multiply the learning rate by `lr_step_factor` from
    /// this epoch on (0 disables).
    pub lr_step_epoch: usize,
    pub lr_step_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma_prime: 1e-5,
            gamma_rule: GammaRule::Uniform,
            optimizer: OptimizerKind::adam(1e-3),
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            eval_every: 1,
            epsilon_draw: EpsilonDraw::PerExample,
            shards: 2,
            lr_step_epoch: 0,
            lr_step_factor: 0.1,
        }
    }
}

pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub data_term: f64,
    pub kl_per_layer: Vec<f64>,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
    /// Units with alpha >= DEFAULT_TAU per gated layer.
    pub survivors: Vec<usize>,
    pub mi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    /// CSV with a header row, '.' decimal separator, UTF-8.
    pub fn to_csv(&self) -> String {
        let (n_kl, n_surv) = self
            .rows
            .first()
            .map(|r| (r.kl_per_layer.len(), r.survivors.len()))
            .unwrap_or((0, 0));
        let mut out = String::from("epoch,loss,data_term");
        for i in 0..n_kl {
            out.push_str(&format!(",kl_{i}"));
        }
        out.push_str(",train_err,test_err");
        for i in 0..n_surv {
            out.push_str(&format!(",surv_{i}"));
        }
        out.push_str(",mi\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.epoch, r.loss, r.data_term));
            for k in &r.kl_per_layer {
                out.push_str(&format!(",{k}"));
            }
            match r.train_error {
                Some(e) => out.push_str(&format!(",{e}")),
                None => out.push(','),
            }
            match r.test_error {
                Some(e) => out.push_str(&format!(",{e}")),
                None => out.push(','),
            }
            for s in &r.survivors {
                out.push_str(&format!(",{s}"));
            }
            match r.mi {
                Some(m) => out.push_str(&format!(",{m}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Set per-layer gamma from the rule; the input gate always uses gamma'.
pub fn apply_gamma_rule(net: &mut Network, gamma_prime: f64, rule: GammaRule) {
    if let Some(GateSlot::Stochastic(g)) = net.input_gate.as_mut() {
        g.gamma = gamma_prime;
    }
    for b in &mut net.blocks {
        if let GateSlot::Stochastic(g) = &mut b.gate {
            g.gamma = match (rule, b.conv_side) {
                (GammaRule::InverseSideLength, Some(side)) => gamma_prime / side as f64,
                _ => gamma_prime,
            };
        }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    /// Gate parameters are frozen during fine-tuning.
    train_gates: bool,
    /// (first moment, second moment) for adam; (velocity, unused) for sgd.
    state: Vec<(Vec<f64>, Vec<f64>)>,
    step_count: usize,
}

impl Optimizer {
    fn new(kind: OptimizerKind, weight_decay: f64, train_gates: bool, net: &mut Network) -> Self {
        let state = net
            .params_mut()
            .iter()
            .map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .collect();
        Optimizer { kind, weight_decay, train_gates, state, step_count: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &NetGrads) {
        self.step_with_lr_scale(net, grads, 1.0)
    }

    fn step_with_lr_scale(&mut self, net: &mut Network, grads: &NetGrads, lr_scale: f64) {
        self.step_count += 1;
        let params = net.params_mut();
        let gslices = grads.flat();
        assert_eq!(params.len(), gslices.len(), "parameter/gradient structure mismatch");
        for (((kind, p), g), (m, v)) in
            params.into_iter().zip(gslices).zip(self.state.iter_mut())
        {
            let is_gate = matches!(kind, ParamKind::GateMu | ParamKind::GateLogSigma2);
            if is_gate && !self.train_gates {
                continue;
            }
            let wd = if kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            match self.kind {
                OptimizerKind::Adam { learning_rate, beta1, beta2, epsilon } => {
                    let learning_rate = learning_rate * lr_scale;
                    let bc1 = 1.0 - beta1.powi(self.step_count as i32);
                    let bc2 = 1.0 - beta2.powi(self.step_count as i32);
                    for i in 0..p.len() {
                        let grad = g[i] + wd * p[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= learning_rate * mh / (vh.sqrt() + epsilon);
                    }
                }
                OptimizerKind::SgdMomentum { learning_rate, momentum } => {
                    let learning_rate = learning_rate * lr_scale;
                    for i in 0..p.len() {
                        let grad = g[i] + wd * p[i];
                        m[i] = momentum * m[i] + grad;
                        p[i] -= learning_rate * m[i];
                    }
                }
            }
            if kind == ParamKind::GateLogSigma2 {
                for x in p.iter_mut() {
                    *x = x.clamp(LOG_SIGMA2_MIN, LOG_SIGMA2_MAX);
                }
            }
        }
        net.apply_bn_stats(grads);
    }
}

/// Contiguous shard ranges covering 0..n, sizes differing by at most one.
fn shard_ranges(n: usize, shards: usize) -> Vec<(usize, usize)> {
    let shards = shards.max(1).min(n.max(1));
    let base = n / shards;
    let extra = n % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

/// Per-example NLL-sum gradients over fixed shards, reduced in shard
/// order. Returns (nll sum over the batch, summed data-path gradients).
fn batch_data_grads(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    noise: &crate::network::NetNoise,
    shards: usize,
) -> Result<(f64, NetGrads)> {
    let ranges = shard_ranges(x.rows(), shards);
    let run_shard = |&(start, end): &(usize, usize)| -> Result<(f64, NetGrads)> {
        let idx: Vec<usize> = (start..end).collect();
        let xs = x.gather_rows(&idx);
        let ls = &labels[start..end];
        let ns = noise.slice_rows(start, end);
        let (out, cache) = net.forward(&xs, GateMode::TrainSample, &ns)?;
        let nll = net.mean_nll(&out, Target::Classes(ls))? * (end - start) as f64;
        let grads = net.backprop_data(&cache, Target::Classes(ls), 1.0)?;
        Ok((nll, grads))
    };
    let results: Vec<Result<(f64, NetGrads)>> = if ranges.len() == 1 {
        vec![run_shard(&ranges[0])]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                ranges.iter().map(|r| scope.spawn(move || run_shard(r))).collect();
            handles.into_iter().map(|h| h.join().expect("shard thread panicked")).collect()
        })
    };
    let mut iter = results.into_iter();
    let (mut nll, mut grads) = iter.next().expect("at least one shard")?;
    for r in iter {
        let (n, g) = r?;
        nll += n;
        grads.add_assign(&g);
    }
    Ok((nll, grads))
}

/// One observed epoch: the observer may compute a mutual-information
/// estimate (or any scalar) to be recorded in the log row.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &Network) -> Option<f64>;

pub fn train(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainLog)> {
    train_full(net, data, None, cfg, None)
}

pub fn train_full(
    mut net: Network,
    data: &Dataset,
    eval_data: Option<&Dataset>,
    cfg: &TrainConfig,
    mut observer: Option<EpochObserver>,
) -> Result<(Network, TrainLog)> {
    if data.is_empty() {
        return Err(VibError::Input("empty training dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(VibError::Input("batch_size must be >= 1".into()));
    }
    if cfg.optimizer.learning_rate() <= 0.0 {
        return Err(VibError::Input("learning rate must be positive".into()));
    }
    apply_gamma_rule(&mut net, cfg.gamma_prime, cfg.gamma_rule);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.weight_decay, true, &mut net);
    let root = RandomSource::new(cfg.seed);
    let mut shuffle_rng = root.child(1);
    let mut noise_rng = root.child(2);
    let n = data.len();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let perm = shuffle_rng.permutation(n);
        let mut loss_sum = 0.0;
        let mut data_sum = 0.0;
        let mut batches = 0usize;
        let mut start = 0usize;
        let mut step = 0usize;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let idx = &perm[start..end];
            let xb = data.images.gather_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let bs = end - start;
            let noise = net.draw_noise(bs, cfg.epsilon_draw, &mut noise_rng);
            let (nll_sum, mut grads) = batch_data_grads(&net, &xb, &yb, &noise, cfg.shards)?;
            let scale = net.depth() as f64 / bs as f64;
            grads.scale(scale);
            net.add_kl_grads(&mut grads);
            let kl_total: f64 = net.kl_per_layer().iter().sum();
            let data_term = scale * nll_sum;
            let total = data_term + kl_total;
            if !total.is_finite() || total.abs() > DIVERGENCE_LIMIT || grads.has_non_finite() {
                let layer = net
                    .first_non_finite()
                    .unwrap_or_else(|| "loss (parameters still finite)".into());
                return Err(VibError::Diverged { epoch, step, layer });
            }
            let lr_scale = if cfg.lr_step_epoch > 0 && epoch >= cfg.lr_step_epoch {
                cfg.lr_step_factor
            } else {
                1.0
            };
            optimizer.step_with_lr_scale(&mut net, &grads, lr_scale);
            loss_sum += total;
            data_sum += data_term;
            batches += 1;
            start = end;
            step += 1;
        }
        let evaluate = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0
            || epoch + 1 == cfg.epochs;
        let train_error = if evaluate {
            Some(net.classification_error(&data.images, &data.labels)?)
        } else {
            None
        };
        let test_error = match (evaluate, eval_data) {
            (true, Some(d)) => Some(net.classification_error(&d.images, &d.labels)?),
            _ => None,
        };
        let mi = observer.as_mut().and_then(|f| f(epoch, &net));
        log.rows.push(TrainLogRow {
            epoch,
            loss: loss_sum / batches as f64,
            data_term: data_sum / batches as f64,
            kl_per_layer: net.kl_per_layer(),
            train_error,
            test_error,
            survivors: net
                .alphas()
                .iter()
                .zip(net.gated_widths())
                .map(|(a, w)| {
                    if a.is_empty() {
                        w // fixed gates: everything survives
                    } else {
                        a.iter().filter(|&&v| v >= DEFAULT_TAU).count()
                    }
                })
                .collect(),
            mi,
        });
    }
    Ok((net, log))
}

/// Single-stepping trainer for interactive use: owns the network and
/// optimizer state, one minibatch per call.
pub struct StepTrainer {
    net: Network,
    cfg: TrainConfig,
    optimizer: Optimizer,
    noise_rng: RandomSource,
}

impl StepTrainer {
    pub fn new(mut net: Network, cfg: TrainConfig) -> Self {
        apply_gamma_rule(&mut net, cfg.gamma_prime, cfg.gamma_rule);
        let optimizer = Optimizer::new(cfg.optimizer, cfg.weight_decay, true, &mut net);
        let noise_rng = RandomSource::new(cfg.seed).child(2);
        StepTrainer { net, cfg, optimizer, noise_rng }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Mutable access for experiment-style interventions (clamping
    /// weights between steps). Parameter shapes must not change.
    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    /// One optimizer step on the given minibatch; returns the loss at the
    /// pre-step parameters.
    pub fn step(&mut self, x: &Tensor, labels: &[usize]) -> Result<crate::network::LossBreakdown> {
        let noise = self.net.draw_noise(x.rows(), self.cfg.epsilon_draw, &mut self.noise_rng);
        let (lb, cache) =
            self.net.loss(x, Target::Classes(labels), GateMode::TrainSample, &noise)?;
        let grads = self.net.backward(&cache, Target::Classes(labels))?;
        if !lb.total.is_finite() || grads.has_non_finite() {
            return Err(VibError::Diverged {
                epoch: 0,
                step: self.optimizer.step_count,
                layer: self.net.first_non_finite().unwrap_or_else(|| "loss".into()),
            });
        }
        self.optimizer.step(&mut self.net, &grads);
        Ok(lb)
    }
}

/// Post-pruning retraining: KL disabled, gate parameters frozen, mean-mode
/// gates. The architecture is never changed.
pub fn fine_tune(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    if cfg.epochs == 0 {
        return Ok(net);
    }
    let mut net = net;
    if data.is_empty() {
        return Err(VibError::Input("empty fine-tune dataset".into()));
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.weight_decay, false, &mut net);
    let root = RandomSource::new(cfg.seed);
    let mut shuffle_rng = root.child(1);
    let n = data.len();
    let noise = crate::network::NetNoise::none(net.blocks.len());
    for epoch in 0..cfg.epochs {
        let perm = shuffle_rng.permutation(n);
        let mut start = 0usize;
        let mut step = 0usize;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let idx = &perm[start..end];
            let xb = data.images.gather_rows(idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (out, cache) = net.forward(&xb, GateMode::EvalMean, &noise)?;
            let nll = net.mean_nll(&out, Target::Classes(&yb))?;
            let scale = net.depth() as f64 / yb.len() as f64;
            let mut grads = net.backprop_data(&cache, Target::Classes(&yb), scale)?;
            // no KL term: gamma plays no role in fine-tuning
            let total = net.depth() as f64 * nll;
            if !total.is_finite() || total.abs() > DIVERGENCE_LIMIT || grads.has_non_finite() {
                let layer = net
                    .first_non_finite()
                    .unwrap_or_else(|| "loss (parameters still finite)".into());
                return Err(VibError::Diverged { epoch, step, layer });
            }
            // grads.scale already folded via backprop scale; keep structure uniform
            grads.scale(1.0);
            optimizer.step(&mut net, &grads);
            start = end;
            step += 1;
        }
    }
    Ok(net)
}
