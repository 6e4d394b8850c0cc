//! Stochastic multiplicative information-bottleneck gate.
//!
//! A gate owns one (mu, log sigma^2) pair per gated unit. In training mode
//! the layer output is multiplied elementwise by z = mu + eps * sigma with
//! fresh eps ~ N(0, I); in eval mode by mu alone. The closed-form KL
//! penalty gamma * sum_j log(1 + mu_j^2 / sigma_j^2) and its analytic
//! gradient live here, as does the alpha = mu^2 / sigma^2 ratio that
//! drives pruning and the Jensen-gap psi diagnostic.

use crate::error::{Result, VibError};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// Clamp range for the log-variance parameter.
pub const LOG_SIGMA2_MIN: f64 = -20.0;
pub const LOG_SIGMA2_MAX: f64 = 5.0;

/// Default initialization: mu near 1, sigma^2 = 0.01, so the gate starts as
/// an almost-deterministic identity with alpha ~ 100.
pub const INIT_MU_MEAN: f64 = 1.0;
pub const INIT_MU_STD: f64 = 0.01;
pub const INIT_LOG_SIGMA2: f64 = -4.605170185988091; // ln(0.01)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    TrainSample,
    EvalMean,
}

/// Whether the gate multiplies a feature vector elementwise or a channel
/// axis broadcast across spatial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Broadcast {
    PerNeuron,
    PerChannel,
}

#[derive(Debug, Clone)]
pub struct VibGate {
    pub mu: Vec<f64>,
    pub log_sigma2: Vec<f64>,
    pub gamma: f64,
    pub broadcast: Broadcast,
}

#[derive(Debug, Clone)]
pub struct GateGrads {
    pub d_mu: Vec<f64>,
    pub d_log_sigma2: Vec<f64>,
}

impl GateGrads {
    pub fn zeros(width: usize) -> Self {
        GateGrads { d_mu: vec![0.0; width], d_log_sigma2: vec![0.0; width] }
    }

    pub fn add_assign(&mut self, other: &GateGrads) {
        for (a, b) in self.d_mu.iter_mut().zip(&other.d_mu) {
            *a += b;
        }
        for (a, b) in self.d_log_sigma2.iter_mut().zip(&other.d_log_sigma2) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_mu.iter_mut().for_each(|x| *x *= factor);
        self.d_log_sigma2.iter_mut().for_each(|x| *x *= factor);
    }
}

impl VibGate {
    pub fn new(width: usize, gamma: f64, broadcast: Broadcast, rng: &mut RandomSource) -> Self {
        VibGate {
            mu: (0..width).map(|_| rng.normal(INIT_MU_MEAN, INIT_MU_STD)).collect(),
            log_sigma2: vec![INIT_LOG_SIGMA2; width],
            gamma,
            broadcast,
        }
    }

    pub fn width(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn sigma2(&self, j: usize) -> f64 {
        self.log_sigma2[j].clamp(LOG_SIGMA2_MIN, LOG_SIGMA2_MAX).exp()
    }

    #[inline]
    pub fn sigma(&self, j: usize) -> f64 {
        (0.5 * self.log_sigma2[j].clamp(LOG_SIGMA2_MIN, LOG_SIGMA2_MAX)).exp()
    }

    /// alpha_j = mu_j^2 / sigma_j^2, the per-unit signal-to-noise ratio.
    pub fn alpha(&self) -> Vec<f64> {
        (0..self.width()).map(|j| self.mu[j] * self.mu[j] / self.sigma2(j)).collect()
    }

    /// Indices with alpha >= tau.
    pub fn survivors(&self, tau: f64) -> Vec<usize> {
        self.alpha()
            .iter()
            .enumerate()
            .filter(|(_, &a)| a >= tau)
            .map(|(j, _)| j)
            .collect()
    }

    /// Closed-form KL penalty gamma * sum_j log(1 + alpha_j) and its
    /// analytic gradient.
    pub fn kl_penalty(&self) -> (f64, GateGrads) {
        let mut value = 0.0;
        let mut grads = GateGrads::zeros(self.width());
        for j in 0..self.width() {
            let s2 = self.sigma2(j);
            let m = self.mu[j];
            let alpha = m * m / s2;
            value += alpha.ln_1p();
            grads.d_mu[j] = self.gamma * 2.0 * m / (s2 + m * m);
            grads.d_log_sigma2[j] = -self.gamma * alpha / (1.0 + alpha);
        }
        (self.gamma * value, grads)
    }
}

#[derive(Debug)]
pub struct GateCache {
    pub mode: GateMode,
    /// Pre-gate layer output f.
    pub f: Tensor,
    /// Sampled noise, (rows, width) where rows is 1 for a per-batch draw.
    /// Empty in eval mode.
    pub eps: Tensor,
}

/// Draw the noise tensor for a forward pass: `rows` is the batch size for
/// per-example draws or 1 for a single draw shared across the batch.
pub fn draw_eps(width: usize, rows: usize, rng: &mut RandomSource) -> Tensor {
    Tensor::randn(&[rows, width], 1.0, rng)
}

fn gated_width(f: &Tensor, broadcast: Broadcast) -> Result<(usize, usize)> {
    match (broadcast, f.shape()) {
        (Broadcast::PerNeuron, [batch, w]) => Ok((*batch, *w)),
        (Broadcast::PerChannel, [batch, c, _, _]) => Ok((*batch, *c)),
        _ => Err(VibError::Dim {
            context: "gate_forward",
            expected: "(batch, width) for per-neuron or (batch, c, h, w) for per-channel".into(),
            got: format!("{:?}", f.shape()),
        }),
    }
}

/// Multiply `f` by the gate, using precomputed noise. `eps` must have
/// shape (1, width) or (batch, width); it is ignored in eval mode.
pub fn gate_forward_with_eps(
    f: &Tensor,
    gate: &VibGate,
    mode: GateMode,
    eps: &Tensor,
) -> Result<(Tensor, GateCache)> {
    let (batch, width) = gated_width(f, gate.broadcast)?;
    if width != gate.width() {
        return Err(VibError::Dim {
            context: "gate_forward",
            expected: format!("gated width {}", gate.width()),
            got: format!("{width}"),
        });
    }
    if mode == GateMode::TrainSample {
        let er = eps.shape();
        if er.len() != 2 || er[1] != width || (er[0] != 1 && er[0] != batch) {
            return Err(VibError::Dim {
                context: "gate_forward noise",
                expected: format!("(1|{batch}, {width})"),
                got: format!("{er:?}"),
            });
        }
    }
    let spatial = f.len() / (batch * width);
    let mut h = Tensor::zeros(f.shape());
    {
        let fd = f.data();
        let hd = h.data_mut();
        for b in 0..batch {
            let erow = if mode == GateMode::TrainSample {
                Some(eps.row(if eps.rows() == 1 { 0 } else { b }))
            } else {
                None
            };
            for j in 0..width {
                let z = match erow {
                    Some(e) => gate.mu[j] + e[j] * gate.sigma(j),
                    None => gate.mu[j],
                };
                let base = (b * width + j) * spatial;
                for p in 0..spatial {
                    hd[base + p] = z * fd[base + p];
                }
            }
        }
    }
    let cache = GateCache {
        mode,
        f: f.clone(),
        eps: if mode == GateMode::TrainSample { eps.clone() } else { Tensor::zeros(&[0]) },
    };
    Ok((h, cache))
}

/// Spec-level forward: draws one fresh eps per call (per-example rows).
pub fn gate_forward(
    f: &Tensor,
    gate: &VibGate,
    mode: GateMode,
    rng: &mut RandomSource,
) -> Result<(Tensor, GateCache)> {
    let (batch, _) = gated_width(f, gate.broadcast)?;
    let eps = match mode {
        GateMode::TrainSample => draw_eps(gate.width(), batch, rng),
        GateMode::EvalMean => Tensor::zeros(&[0]),
    };
    gate_forward_with_eps(f, gate, mode, &eps)
}

/// Reparameterization backward: returns d loss / d f and the gate's
/// parameter gradients from the data path (KL gradients are separate).
pub fn gate_backward(gate: &VibGate, cache: &GateCache, dh: &Tensor) -> Result<(Tensor, GateGrads)> {
    let (batch, width) = gated_width(&cache.f, gate.broadcast)?;
    if dh.shape() != cache.f.shape() {
        return Err(VibError::Dim {
            context: "gate_backward",
            expected: format!("{:?}", cache.f.shape()),
            got: format!("{:?}", dh.shape()),
        });
    }
    let spatial = cache.f.len() / (batch * width);
    let mut df = Tensor::zeros(cache.f.shape());
    let mut grads = GateGrads::zeros(width);
    let fd = cache.f.data();
    let dhd = dh.data();
    let dfd = df.data_mut();
    for b in 0..batch {
        let erow = match cache.mode {
            GateMode::TrainSample => {
                Some(cache.eps.row(if cache.eps.rows() == 1 { 0 } else { b }))
            }
            GateMode::EvalMean => None,
        };
        for j in 0..width {
            let (z, e) = match erow {
                Some(er) => (gate.mu[j] + er[j] * gate.sigma(j), er[j]),
                None => (gate.mu[j], 0.0),
            };
            let base = (b * width + j) * spatial;
            let mut dz = 0.0;
            for p in 0..spatial {
                let g = dhd[base + p];
                dfd[base + p] = g * z;
                dz += g * fd[base + p];
            }
            grads.d_mu[j] += dz;
            // sigma = exp(t/2) => d sigma / d t = sigma / 2
            grads.d_log_sigma2[j] += dz * e * gate.sigma(j) * 0.5;
        }
    }
    Ok((df, grads))
}

/// Empirical Jensen gap psi_j = log E[f_j^2] - E[log f_j^2] per gated unit,
/// with f^2 clamped below at `floor` before every log. Reported for
/// diagnostics only; it is not part of the training loss.
///
/// Each tensor in `samples` is a batch of layer outputs; per-channel
/// activations contribute one sample per spatial position.
pub fn psi_diagnostic(samples: &[Tensor], floor: f64) -> Result<Vec<f64>> {
    if floor <= 0.0 {
        return Err(VibError::Domain { what: "psi floor", value: floor });
    }
    let first = samples.first().ok_or_else(|| VibError::Input("empty sample stream".into()))?;
    let width = match first.shape() {
        [_, w] => *w,
        [_, c, _, _] => *c,
        other => {
            return Err(VibError::Dim {
                context: "psi_diagnostic",
                expected: "2-D or 4-D activations".into(),
                got: format!("{other:?}"),
            })
        }
    };
    let mut sum_f2 = vec![0.0; width];
    let mut sum_log_f2 = vec![0.0; width];
    let mut count = 0usize;
    for t in samples {
        let (batch, w) = match t.shape() {
            [b, w] => (*b, *w),
            [b, c, _, _] => (*b, *c),
            other => {
                return Err(VibError::Dim {
                    context: "psi_diagnostic",
                    expected: "2-D or 4-D activations".into(),
                    got: format!("{other:?}"),
                })
            }
        };
        if w != width {
            return Err(VibError::Dim {
                context: "psi_diagnostic",
                expected: format!("width {width}"),
                got: format!("{w}"),
            });
        }
        let spatial = t.len() / (batch * w);
        let td = t.data();
        for b in 0..batch {
            for j in 0..w {
                let base = (b * w + j) * spatial;
                for p in 0..spatial {
                    let f2 = (td[base + p] * td[base + p]).max(floor);
                    sum_f2[j] += f2;
                    sum_log_f2[j] += f2.ln();
                }
            }
        }
        count += batch * spatial;
    }
    if count < 100 {
        return Err(VibError::Input(format!("psi_diagnostic needs >= 100 samples, got {count}")));
    }
    let n = count as f64;
    Ok((0..width)
        .map(|j| (sum_f2[j] / n).max(floor).ln() - sum_log_f2[j] / n)
        .collect())
}

pub const PSI_FLOOR: f64 = 1e-12;
