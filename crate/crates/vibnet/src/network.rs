//! Full gated network: an optional input gate, a stack of
//! (deterministic layer chain, gate) blocks, and an output head.
//!
//! The training objective is
//!   sum_i gamma_i * sum_j log(1 + alpha_ij)  +  L * mean(-log q(y | h_L))
//! where L counts gated hidden layers (the input gate contributes a KL
//! term but, by default, does not increment L).

use crate::error::{Result, VibError};
use crate::gate::{
    draw_eps, gate_backward, gate_forward_with_eps, Broadcast, GateCache, GateGrads, GateMode,
    VibGate,
};
use crate::layers::{AffineLayer, BatchNormLayer, Conv2dLayer, Layer, LayerCache, LayerGrads, Phase};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

/// A gate is stochastic while training and becomes a plain fixed
/// multiplier vector after pruning.
#[derive(Debug, Clone)]
pub enum GateSlot {
    Stochastic(VibGate),
    Fixed { multipliers: Vec<f64>, broadcast: Broadcast },
}

impl GateSlot {
    pub fn width(&self) -> usize {
        match self {
            GateSlot::Stochastic(g) => g.width(),
            GateSlot::Fixed { multipliers, .. } => multipliers.len(),
        }
    }

    pub fn broadcast(&self) -> Broadcast {
        match self {
            GateSlot::Stochastic(g) => g.broadcast,
            GateSlot::Fixed { broadcast, .. } => *broadcast,
        }
    }

    pub fn as_stochastic(&self) -> Option<&VibGate> {
        match self {
            GateSlot::Stochastic(g) => Some(g),
            GateSlot::Fixed { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub layers: Vec<Layer>,
    pub gate: GateSlot,
    /// Output feature-map side length for conv blocks; None for dense.
    pub conv_side: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    CategoricalSoftmax,
    Gaussian,
}

/// Whether gate noise is drawn per example or once per minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonDraw {
    PerExample,
    PerBatch,
}

#[derive(Debug, Clone)]
pub struct Network {
    /// Per-example input shape, e.g. [784] or [1, 28, 28].
    pub input_shape: Vec<usize>,
    pub input_gate: Option<GateSlot>,
    /// Surviving input coordinates of a pruned, input-gated network.
    pub input_select: Option<Vec<usize>>,
    pub blocks: Vec<Block>,
    pub head: AffineLayer,
    pub likelihood: Likelihood,
    /// Open switch: count the input gate inside the data-term weight L.
    pub count_input_gate_in_depth: bool,
}

/// Regression targets are a tensor; classification targets are class ids.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Classes(&'a [usize]),
    Values(&'a Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// KL term per gated layer; the input gate, when present, is first.
    pub kl_per_layer: Vec<f64>,
    /// L * mean over the minibatch of -log q(y | h_L).
    pub data_term: f64,
    pub total: f64,
}

/// Pre-drawn gate noise for one forward pass.
#[derive(Debug, Clone)]
pub struct NetNoise {
    pub input: Option<Tensor>,
    pub blocks: Vec<Option<Tensor>>,
}

impl NetNoise {
    pub fn none(n_blocks: usize) -> Self {
        NetNoise { input: None, blocks: vec![None; n_blocks] }
    }

    /// Restrict per-example noise to a row range (shared per-batch noise
    /// passes through unchanged).
    pub fn slice_rows(&self, start: usize, end: usize) -> NetNoise {
        let slice = |t: &Option<Tensor>| {
            t.as_ref().map(|t| {
                if t.rows() == 1 {
                    t.clone()
                } else {
                    t.gather_rows(&(start..end).collect::<Vec<_>>())
                }
            })
        };
        NetNoise { input: slice(&self.input), blocks: self.blocks.iter().map(slice).collect() }
    }
}

#[derive(Debug)]
enum GateSlotCache {
    Stochastic(GateCache),
    Fixed { f: Tensor },
}

#[derive(Debug)]
struct BlockCache {
    layers: Vec<LayerCache>,
    gate: GateSlotCache,
}

/// Intermediates retained by `forward` for `backward`.
#[derive(Debug)]
pub struct ForwardCache {
    input_gate: Option<GateSlotCache>,
    blocks: Vec<BlockCache>,
    head: LayerCache,
    /// Head output (logits or regression values).
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub layers: Vec<LayerGrads>,
    pub gate: Option<GateGrads>,
}

/// Parameter group tag; weight decay applies to `Weight` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    GateMu,
    GateLogSigma2,
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub input_gate: Option<GateGrads>,
    pub blocks: Vec<BlockGrads>,
    pub head: LayerGrads,
}

impl NetGrads {
    pub fn add_assign(&mut self, other: &NetGrads) {
        if let (Some(a), Some(b)) = (self.input_gate.as_mut(), other.input_gate.as_ref()) {
            a.add_assign(b);
        }
        for (sb, ob) in self.blocks.iter_mut().zip(&other.blocks) {
            for (sl, ol) in sb.layers.iter_mut().zip(&ob.layers) {
                sl.add_assign(ol);
            }
            if let (Some(a), Some(b)) = (sb.gate.as_mut(), ob.gate.as_ref()) {
                a.add_assign(b);
            }
        }
        self.head.add_assign(&other.head);
    }

    pub fn scale(&mut self, factor: f64) {
        if let Some(g) = self.input_gate.as_mut() {
            g.scale(factor);
        }
        for b in &mut self.blocks {
            for l in &mut b.layers {
                l.scale(factor);
            }
            if let Some(g) = b.gate.as_mut() {
                g.scale(factor);
            }
        }
        self.head.scale(factor);
    }

    /// Gradient slices in the same traversal order as `Network::params_mut`.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(g) = &self.input_gate {
            out.push(&g.d_mu);
            out.push(&g.d_log_sigma2);
        }
        for b in &self.blocks {
            for l in &b.layers {
                match l {
                    LayerGrads::Affine { d_weight, d_bias }
                    | LayerGrads::Conv2d { d_weight, d_bias } => {
                        out.push(d_weight.data());
                        out.push(d_bias.data());
                    }
                    LayerGrads::BatchNorm { d_scale, d_shift, .. } => {
                        out.push(d_scale.data());
                        out.push(d_shift.data());
                    }
                    LayerGrads::None => {}
                }
            }
            if let Some(g) = &b.gate {
                out.push(&g.d_mu);
                out.push(&g.d_log_sigma2);
            }
        }
        match &self.head {
            LayerGrads::Affine { d_weight, d_bias } => {
                out.push(d_weight.data());
                out.push(d_bias.data());
            }
            _ => unreachable!("head is affine"),
        }
        out
    }

    pub fn has_non_finite(&self) -> bool {
        self.flat().iter().any(|s| s.iter().any(|v| !v.is_finite()))
    }
}

fn fixed_multiply(f: &Tensor, multipliers: &[f64], broadcast: Broadcast) -> Result<Tensor> {
    let (batch, width) = match (broadcast, f.shape()) {
        (Broadcast::PerNeuron, [b, w]) => (*b, *w),
        (Broadcast::PerChannel, [b, c, _, _]) => (*b, *c),
        _ => {
            return Err(VibError::Dim {
                context: "fixed gate",
                expected: "2-D or 4-D activations".into(),
                got: format!("{:?}", f.shape()),
            })
        }
    };
    if width != multipliers.len() {
        return Err(VibError::Dim {
            context: "fixed gate",
            expected: format!("width {}", multipliers.len()),
            got: format!("{width}"),
        });
    }
    let spatial = f.len() / (batch * width);
    let mut h = Tensor::zeros(f.shape());
    let fd = f.data();
    let hd = h.data_mut();
    for b in 0..batch {
        for j in 0..width {
            let base = (b * width + j) * spatial;
            for p in 0..spatial {
                hd[base + p] = multipliers[j] * fd[base + p];
            }
        }
    }
    Ok(h)
}

fn fixed_backward(dh: &Tensor, f: &Tensor, multipliers: &[f64], broadcast: Broadcast) -> Tensor {
    let (batch, width) = match (broadcast, f.shape()) {
        (Broadcast::PerNeuron, [b, w]) => (*b, *w),
        (Broadcast::PerChannel, [b, c, _, _]) => (*b, *c),
        _ => unreachable!("validated in forward"),
    };
    let spatial = f.len() / (batch * width);
    let mut df = Tensor::zeros(f.shape());
    let dd = df.data_mut();
    let dhd = dh.data();
    for b in 0..batch {
        for j in 0..width {
            let base = (b * width + j) * spatial;
            for p in 0..spatial {
                dd[base + p] = multipliers[j] * dhd[base + p];
            }
        }
    }
    df
}

impl Network {
    /// Number of gated hidden layers, the data-term weight L.
    pub fn depth(&self) -> usize {
        let mut l = self.blocks.len();
        if self.count_input_gate_in_depth && self.input_gate.is_some() {
            l += 1;
        }
        l
    }

    /// Widths of the gated layers in order, input gate first when present.
    pub fn gated_widths(&self) -> Vec<usize> {
        let mut w = Vec::new();
        if let Some(g) = &self.input_gate {
            w.push(g.width());
        }
        w.extend(self.blocks.iter().map(|b| b.gate.width()));
        w
    }

    /// Per-gate alpha vectors in the same order as `gated_widths`.
    /// Fixed gates report an empty vector.
    pub fn alphas(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        if let Some(g) = &self.input_gate {
            out.push(g.as_stochastic().map(|g| g.alpha()).unwrap_or_default());
        }
        for b in &self.blocks {
            out.push(b.gate.as_stochastic().map(|g| g.alpha()).unwrap_or_default());
        }
        out
    }

    pub fn draw_noise(&self, batch: usize, draw: EpsilonDraw, rng: &mut RandomSource) -> NetNoise {
        let rows = match draw {
            EpsilonDraw::PerExample => batch,
            EpsilonDraw::PerBatch => 1,
        };
        let for_gate = |g: &GateSlot, rng: &mut RandomSource| match g {
            GateSlot::Stochastic(g) => Some(draw_eps(g.width(), rows, rng)),
            GateSlot::Fixed { .. } => None,
        };
        NetNoise {
            input: self.input_gate.as_ref().and_then(|g| for_gate(g, rng)),
            blocks: self.blocks.iter().map(|b| for_gate(&b.gate, rng)).collect(),
        }
    }

    fn apply_gate(
        f: &Tensor,
        gate: &GateSlot,
        mode: GateMode,
        eps: Option<&Tensor>,
    ) -> Result<(Tensor, GateSlotCache)> {
        match gate {
            GateSlot::Stochastic(g) => {
                let empty = Tensor::zeros(&[0]);
                let eps = match (mode, eps) {
                    (GateMode::TrainSample, Some(e)) => e,
                    (GateMode::TrainSample, None) => {
                        return Err(VibError::State("train-mode forward without drawn noise"))
                    }
                    (GateMode::EvalMean, _) => &empty,
                };
                let (h, cache) = gate_forward_with_eps(f, g, mode, eps)?;
                Ok((h, GateSlotCache::Stochastic(cache)))
            }
            GateSlot::Fixed { multipliers, broadcast } => {
                let h = fixed_multiply(f, multipliers, *broadcast)?;
                Ok((h, GateSlotCache::Fixed { f: f.clone() }))
            }
        }
    }

    /// Select surviving input coordinates (no-op when the input was never
    /// pruned). 2-D inputs only; conv inputs are never input-gated.
    fn select_input(&self, x: &Tensor) -> Result<Tensor> {
        match &self.input_select {
            None => Ok(x.clone()),
            Some(idx) => {
                if x.shape().len() != 2 {
                    return Err(VibError::Dim {
                        context: "input select",
                        expected: "flat (batch, d) input".into(),
                        got: format!("{:?}", x.shape()),
                    });
                }
                Ok(x.gather_cols(idx))
            }
        }
    }

    pub fn forward(
        &self,
        x: &Tensor,
        mode: GateMode,
        noise: &NetNoise,
    ) -> Result<(Tensor, ForwardCache)> {
        let phase = match mode {
            GateMode::TrainSample => Phase::Train,
            GateMode::EvalMean => Phase::Eval,
        };
        let mut cur = self.select_input(x)?;
        let input_gate = match &self.input_gate {
            Some(g) => {
                let (h, c) = Self::apply_gate(&cur, g, mode, noise.input.as_ref())?;
                cur = h;
                Some(c)
            }
            None => None,
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let mut layer_caches = Vec::with_capacity(block.layers.len());
            for layer in &block.layers {
                let (y, c) = layer.forward(&cur, phase)?;
                cur = y;
                layer_caches.push(c);
            }
            let (h, gc) = Self::apply_gate(&cur, &block.gate, mode, noise.blocks[bi].as_ref())?;
            cur = h;
            blocks.push(BlockCache { layers: layer_caches, gate: gc });
        }
        let (output, head) = Layer::Affine(self.head.clone()).forward(&cur, phase)?;
        Ok((output.clone(), ForwardCache { input_gate, blocks, head, output }))
    }

    /// Convenience for evaluation: mean-mode forward, no noise.
    pub fn eval_forward(&self, x: &Tensor) -> Result<Tensor> {
        let noise = NetNoise::none(self.blocks.len());
        Ok(self.forward(x, GateMode::EvalMean, &noise)?.0)
    }

    /// Truncated forward: input gate plus blocks 0..=block_idx, returning
    /// the gated activation. Sampling noise comes from `rng`.
    pub fn hidden_after_block(
        &self,
        x: &Tensor,
        block_idx: usize,
        mode: GateMode,
        rng: &mut RandomSource,
    ) -> Result<Tensor> {
        if block_idx >= self.blocks.len() {
            return Err(VibError::Input(format!(
                "block index {block_idx} out of range 0..{}",
                self.blocks.len()
            )));
        }
        let phase = match mode {
            GateMode::TrainSample => Phase::Train,
            GateMode::EvalMean => Phase::Eval,
        };
        let noise = self.draw_noise(x.rows(), EpsilonDraw::PerExample, rng);
        let mut cur = self.select_input(x)?;
        if let Some(g) = &self.input_gate {
            let (h, _) = Self::apply_gate(&cur, g, mode, noise.input.as_ref())?;
            cur = h;
        }
        for (block, eps) in self.blocks.iter().zip(&noise.blocks).take(block_idx + 1) {
            for layer in &block.layers {
                let (y, _) = layer.forward(&cur, phase)?;
                cur = y;
            }
            let (h, _) = Self::apply_gate(&cur, &block.gate, mode, eps.as_ref())?;
            cur = h;
        }
        Ok(cur)
    }

    /// Mean negative log-likelihood of the head output for the target,
    /// without the L weighting.
    pub fn mean_nll(&self, output: &Tensor, target: Target) -> Result<f64> {
        Ok(nll_sum(output, target, self.likelihood)? / output.rows() as f64)
    }

    pub fn kl_per_layer(&self) -> Vec<f64> {
        let mut kls = Vec::new();
        if let Some(g) = &self.input_gate {
            kls.push(g.as_stochastic().map(|g| g.kl_penalty().0).unwrap_or(0.0));
        }
        for b in &self.blocks {
            kls.push(b.gate.as_stochastic().map(|g| g.kl_penalty().0).unwrap_or(0.0));
        }
        kls
    }

    /// Evaluate the full objective on one minibatch.
    pub fn loss(
        &self,
        x: &Tensor,
        target: Target,
        mode: GateMode,
        noise: &NetNoise,
    ) -> Result<(LossBreakdown, ForwardCache)> {
        if x.rows() == 0 {
            return Err(VibError::Input("empty minibatch".into()));
        }
        let (output, cache) = self.forward(x, mode, noise)?;
        let data_term = self.depth() as f64 * self.mean_nll(&output, target)?;
        let kl_per_layer = self.kl_per_layer();
        let total = kl_per_layer.iter().sum::<f64>() + data_term;
        Ok((LossBreakdown { kl_per_layer, data_term, total }, cache))
    }

    /// Gradient of `loss().total` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, target: Target) -> Result<NetGrads> {
        let batch = cache.output.rows();
        let scale = self.depth() as f64 / batch as f64;
        let mut grads = self.backprop_data(cache, target, scale)?;
        self.add_kl_grads(&mut grads);
        Ok(grads)
    }

    /// Data-path gradients only, with d(output-loss)/d(logits) scaled by
    /// `scale`; `scale = 1` yields gradients of the per-example NLL sum.
    pub(crate) fn backprop_data(
        &self,
        cache: &ForwardCache,
        target: Target,
        scale: f64,
    ) -> Result<NetGrads> {
        let mut d = output_grad(&cache.output, target, self.likelihood, scale)?;
        let (dh, head_grads) = Layer::Affine(self.head.clone()).backward(&cache.head, &d)?;
        d = dh;
        let mut block_grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (df, gate_grads) = match (&block.gate, &bc.gate) {
                (GateSlot::Stochastic(g), GateSlotCache::Stochastic(gc)) => {
                    let (df, gg) = gate_backward(g, gc, &d)?;
                    (df, Some(gg))
                }
                (GateSlot::Fixed { multipliers, broadcast }, GateSlotCache::Fixed { f }) => {
                    (fixed_backward(&d, f, multipliers, *broadcast), None)
                }
                _ => return Err(VibError::State("gate cache does not match gate kind")),
            };
            d = df;
            let mut layer_grads = Vec::with_capacity(block.layers.len());
            for (layer, lc) in block.layers.iter().zip(&bc.layers).rev() {
                let (dx, lg) = layer.backward(lc, &d)?;
                d = dx;
                layer_grads.push(lg);
            }
            layer_grads.reverse();
            block_grads.push(BlockGrads { layers: layer_grads, gate: gate_grads });
        }
        block_grads.reverse();
        let input_gate = match (&self.input_gate, &cache.input_gate) {
            (Some(GateSlot::Stochastic(g)), Some(GateSlotCache::Stochastic(gc))) => {
                let (_, gg) = gate_backward(g, gc, &d)?;
                Some(gg)
            }
            (Some(GateSlot::Fixed { .. }), Some(GateSlotCache::Fixed { .. })) => None,
            (None, None) => None,
            _ => return Err(VibError::State("input gate cache mismatch")),
        };
        Ok(NetGrads { input_gate, blocks: block_grads, head: head_grads })
    }

    /// Add the analytic KL gradients into `grads` (no-op for fixed gates).
    pub(crate) fn add_kl_grads(&self, grads: &mut NetGrads) {
        if let (Some(GateSlot::Stochastic(g)), Some(gg)) =
            (self.input_gate.as_ref(), grads.input_gate.as_mut())
        {
            gg.add_assign(&g.kl_penalty().1);
        }
        for (block, bg) in self.blocks.iter().zip(&mut grads.blocks) {
            if let (GateSlot::Stochastic(g), Some(gg)) = (&block.gate, bg.gate.as_mut()) {
                gg.add_assign(&g.kl_penalty().1);
            }
        }
    }

    /// Trainable parameter slices in a fixed traversal order (input gate,
    /// blocks front to back with layers before gate, head last).
    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out: Vec<(ParamKind, &mut [f64])> = Vec::new();
        if let Some(GateSlot::Stochastic(g)) = self.input_gate.as_mut() {
            out.push((ParamKind::GateMu, g.mu.as_mut_slice()));
            out.push((ParamKind::GateLogSigma2, g.log_sigma2.as_mut_slice()));
        }
        for b in &mut self.blocks {
            for l in &mut b.layers {
                match l {
                    Layer::Affine(a) => {
                        out.push((ParamKind::Weight, a.weight.data_mut()));
                        out.push((ParamKind::Bias, a.bias.data_mut()));
                    }
                    Layer::Conv2d(c) => {
                        out.push((ParamKind::Weight, c.weight.data_mut()));
                        out.push((ParamKind::Bias, c.bias.data_mut()));
                    }
                    Layer::BatchNorm(bn) => {
                        out.push((ParamKind::BnScale, bn.scale.data_mut()));
                        out.push((ParamKind::BnShift, bn.shift.data_mut()));
                    }
                    Layer::Relu => {}
                }
            }
            if let GateSlot::Stochastic(g) = &mut b.gate {
                out.push((ParamKind::GateMu, g.mu.as_mut_slice()));
                out.push((ParamKind::GateLogSigma2, g.log_sigma2.as_mut_slice()));
            }
        }
        out.push((ParamKind::Weight, self.head.weight.data_mut()));
        out.push((ParamKind::Bias, self.head.bias.data_mut()));
        out
    }

    /// Apply batch-norm running statistic updates carried in `grads`
    /// (single-writer step after gradient reduction).
    pub fn apply_bn_stats(&mut self, grads: &NetGrads) {
        for (b, bg) in self.blocks.iter_mut().zip(&grads.blocks) {
            for (l, lg) in b.layers.iter_mut().zip(&bg.layers) {
                if let (
                    Layer::BatchNorm(bn),
                    LayerGrads::BatchNorm { stat_sum, stat_sumsq, stat_count, .. },
                ) = (l, lg)
                {
                    if *stat_count == 0 {
                        continue;
                    }
                    let n = *stat_count as f64;
                    let m = bn.momentum;
                    for ch in 0..bn.width() {
                        let mean = stat_sum[ch] / n;
                        let var = (stat_sumsq[ch] / n - mean * mean).max(0.0);
                        let rm = &mut bn.running_mean.data_mut()[ch];
                        *rm = (1.0 - m) * *rm + m * mean;
                        let rv = &mut bn.running_var.data_mut()[ch];
                        *rv = (1.0 - m) * *rv + m * var;
                    }
                }
            }
        }
    }

    /// Name of the first parameter group holding a non-finite value, for
    /// divergence diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        let check = |name: String, data: &[f64]| -> Option<String> {
            data.iter().any(|v| !v.is_finite()).then_some(name)
        };
        if let Some(GateSlot::Stochastic(g)) = &self.input_gate {
            if let Some(n) = check("input_gate.mu".into(), &g.mu) {
                return Some(n);
            }
            if let Some(n) = check("input_gate.log_sigma2".into(), &g.log_sigma2) {
                return Some(n);
            }
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for (li, l) in b.layers.iter().enumerate() {
                let found = match l {
                    Layer::Affine(a) => check(format!("block{bi}.layer{li}.affine"), a.weight.data())
                        .or_else(|| check(format!("block{bi}.layer{li}.affine.bias"), a.bias.data())),
                    Layer::Conv2d(c) => check(format!("block{bi}.layer{li}.conv2d"), c.weight.data())
                        .or_else(|| check(format!("block{bi}.layer{li}.conv2d.bias"), c.bias.data())),
                    Layer::BatchNorm(bn) => {
                        check(format!("block{bi}.layer{li}.batch_norm"), bn.scale.data())
                            .or_else(|| check(format!("block{bi}.layer{li}.batch_norm.shift"), bn.shift.data()))
                    }
                    Layer::Relu => None,
                };
                if found.is_some() {
                    return found;
                }
            }
            if let GateSlot::Stochastic(g) = &b.gate {
                if let Some(n) = check(format!("block{bi}.gate.mu"), &g.mu) {
                    return Some(n);
                }
                if let Some(n) = check(format!("block{bi}.gate.log_sigma2"), &g.log_sigma2) {
                    return Some(n);
                }
            }
        }
        check("head".into(), self.head.weight.data())
            .or_else(|| check("head.bias".into(), self.head.bias.data()))
    }

    /// Mean-mode classification error on (images, labels), batched.
    pub fn classification_error(&self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let n = images.rows();
        if n != labels.len() {
            return Err(VibError::Input(format!(
                "images/labels length mismatch: {n} vs {}",
                labels.len()
            )));
        }
        let classes = self.head.out_dim();
        let mut wrong = 0usize;
        let batch = 512usize;
        let mut start = 0usize;
        while start < n {
            let end = (start + batch).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let xb = images.gather_rows(&idx);
            let out = self.eval_forward(&xb)?;
            for (r, &label) in (0..out.rows()).zip(&labels[start..end]) {
                if label >= classes {
                    return Err(VibError::Input(format!("label {label} out of range")));
                }
                let row = out.row(r);
                let mut best = 0usize;
                for c in 1..classes {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if best != label {
                    wrong += 1;
                }
            }
            start = end;
        }
        Ok(wrong as f64 / n as f64)
    }
}

/// Sum over the batch of -log q(y | output).
fn nll_sum(output: &Tensor, target: Target, likelihood: Likelihood) -> Result<f64> {
    match (likelihood, target) {
        (Likelihood::CategoricalSoftmax, Target::Classes(labels)) => {
            let classes = output.row_len();
            if labels.len() != output.rows() {
                return Err(VibError::Input("label count != batch size".into()));
            }
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(VibError::Input(format!("label {label} out of range 0..{classes}")));
                }
                let row = output.row(r);
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[label];
            }
            Ok(total)
        }
        (Likelihood::Gaussian, Target::Values(y)) => {
            if y.shape() != output.shape() {
                return Err(VibError::Dim {
                    context: "gaussian nll",
                    expected: format!("{:?}", output.shape()),
                    got: format!("{:?}", y.shape()),
                });
            }
            // unit-variance Gaussian, constants dropped
            let mut total = 0.0;
            for (o, t) in output.data().iter().zip(y.data()) {
                let d = o - t;
                total += 0.5 * d * d;
            }
            Ok(total)
        }
        _ => Err(VibError::Input("target kind does not match head likelihood".into())),
    }
}

/// d(nll_sum)/d(output) * scale.
fn output_grad(output: &Tensor, target: Target, likelihood: Likelihood, scale: f64) -> Result<Tensor> {
    match (likelihood, target) {
        (Likelihood::CategoricalSoftmax, Target::Classes(labels)) => {
            let classes = output.row_len();
            let mut d = Tensor::zeros(output.shape());
            for (r, &label) in labels.iter().enumerate() {
                let row = output.row(r);
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                let dr = d.row_mut(r);
                for c in 0..classes {
                    dr[c] = scale * (exps[c] / z - if c == label { 1.0 } else { 0.0 });
                }
            }
            Ok(d)
        }
        (Likelihood::Gaussian, Target::Values(y)) => {
            let mut d = Tensor::zeros(output.shape());
            for ((g, o), t) in d.data_mut().iter_mut().zip(output.data()).zip(y.data()) {
                *g = scale * (o - t);
            }
            Ok(d)
        }
        _ => Err(VibError::Input("target kind does not match head likelihood".into())),
    }
}

// ---------------------------------------------------------------------------
// Stock architectures
// ---------------------------------------------------------------------------

fn he_affine(inp: usize, out: usize, rng: &mut RandomSource) -> AffineLayer {
    AffineLayer {
        weight: Tensor::randn(&[out, inp], (2.0 / inp as f64).sqrt(), rng),
        bias: Tensor::zeros(&[out]),
    }
}

fn head_affine(inp: usize, out: usize, rng: &mut RandomSource) -> AffineLayer {
    AffineLayer {
        weight: Tensor::randn(&[out, inp], (1.0 / inp as f64).sqrt(), rng),
        bias: Tensor::zeros(&[out]),
    }
}

/// 784-300-100-10 dense classifier with an input-layer gate and gates
/// after each hidden relu.
pub fn lenet_300_100(rng: &mut RandomSource) -> Network {
    let dense_block = |inp: usize, out: usize, rng: &mut RandomSource| Block {
        layers: vec![Layer::Affine(he_affine(inp, out, rng)), Layer::Relu],
        gate: GateSlot::Stochastic(VibGate::new(out, 1.0, Broadcast::PerNeuron, rng)),
        conv_side: None,
    };
    Network {
        input_shape: vec![784],
        input_gate: Some(GateSlot::Stochastic(VibGate::new(784, 1.0, Broadcast::PerNeuron, rng))),
        input_select: None,
        blocks: vec![dense_block(784, 300, rng), dense_block(300, 100, rng)],
        head: head_affine(100, 10, rng),
        likelihood: Likelihood::CategoricalSoftmax,
        count_input_gate_in_depth: false,
    }
}

/// Two conv blocks (the second stride-2 in place of pooling) and one dense
/// block, per-channel gates on the conv filters. Input 1x28x28, output 10.
pub fn lenet_5(rng: &mut RandomSource) -> Network {
    let conv1 = Conv2dLayer {
        weight: Tensor::randn(&[20, 1, 5, 5], (2.0 / 25.0_f64).sqrt(), rng),
        bias: Tensor::zeros(&[20]),
        stride: 1,
        padding: 0,
    };
    let conv2 = Conv2dLayer {
        weight: Tensor::randn(&[50, 20, 5, 5], (2.0_f64 / (20.0 * 25.0)).sqrt(), rng),
        bias: Tensor::zeros(&[50]),
        stride: 2,
        padding: 0,
    };
    Network {
        input_shape: vec![1, 28, 28],
        input_gate: None,
        input_select: None,
        blocks: vec![
            Block {
                layers: vec![
                    Layer::Conv2d(conv1),
                    Layer::BatchNorm(BatchNormLayer::new(20)),
                    Layer::Relu,
                ],
                gate: GateSlot::Stochastic(VibGate::new(20, 1.0, Broadcast::PerChannel, rng)),
                conv_side: Some(24),
            },
            Block {
                layers: vec![
                    Layer::Conv2d(conv2),
                    Layer::BatchNorm(BatchNormLayer::new(50)),
                    Layer::Relu,
                ],
                gate: GateSlot::Stochastic(VibGate::new(50, 1.0, Broadcast::PerChannel, rng)),
                conv_side: Some(10),
            },
            Block {
                layers: vec![Layer::Affine(he_affine(50 * 10 * 10, 500, rng)), Layer::Relu],
                gate: GateSlot::Stochastic(VibGate::new(500, 1.0, Broadcast::PerNeuron, rng)),
                conv_side: None,
            },
        ],
        head: head_affine(500, 10, rng),
        likelihood: Likelihood::CategoricalSoftmax,
        count_input_gate_in_depth: false,
    }
}

/// Small configurable dense net for tests and toy experiments.
/// `dims` = [input, hidden..., classes]; requires at least one hidden layer.
pub fn toy_mlp(
    dims: &[usize],
    input_gate: bool,
    batch_norm: bool,
    rng: &mut RandomSource,
) -> Network {
    assert!(dims.len() >= 3, "toy_mlp needs [input, hidden..., out]");
    let mut blocks = Vec::new();
    for w in dims.windows(2).take(dims.len() - 2) {
        let (inp, out) = (w[0], w[1]);
        let mut layers = vec![Layer::Affine(he_affine(inp, out, rng))];
        if batch_norm {
            layers.push(Layer::BatchNorm(BatchNormLayer::new(out)));
        }
        layers.push(Layer::Relu);
        blocks.push(Block {
            layers,
            gate: GateSlot::Stochastic(VibGate::new(out, 1.0, Broadcast::PerNeuron, rng)),
            conv_side: None,
        });
    }
    let (h_last, classes) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    Network {
        input_shape: vec![dims[0]],
        input_gate: input_gate.then(|| {
            GateSlot::Stochastic(VibGate::new(dims[0], 1.0, Broadcast::PerNeuron, rng))
        }),
        input_select: None,
        blocks,
        head: head_affine(h_last, classes, rng),
        likelihood: Likelihood::CategoricalSoftmax,
        count_input_gate_in_depth: false,
    }
}
