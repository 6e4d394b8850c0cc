//! Alpha-threshold pruning with exact model surgery, and the compression
//! metrics r_W (nonzero-weight ratio), FLOPs (multiply count), and r_N
//! (feature-map storage ratio).
//!
//! Surgery deletes rows/columns of the adjacent weight matrices plus the
//! matching bias/batch-norm/gate entries; surviving mu values stay in the
//! network as explicit fixed multipliers, so a pruned network's eval-mode
//! outputs equal the unpruned ones with the removed coordinates' mu set
//! to zero — exactly, not just to rounding.

use crate::error::{Result, VibError};
use crate::layers::{AffineLayer, BatchNormLayer, Conv2dLayer, Layer};
use crate::network::{Block, GateSlot, Network};
use crate::tensor::Tensor;

/// Default hard threshold on alpha = mu^2 / sigma^2.
pub const DEFAULT_TAU: f64 = 1e-2;

/// Weight-bearing layer arithmetic, enough to count weights and FLOPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerArith {
    Dense { inp: usize, out: usize },
    Conv { c_in: usize, c_out: usize, k: usize, h_out: usize, w_out: usize },
}

impl LayerArith {
    pub fn weights(&self) -> u64 {
        match *self {
            LayerArith::Dense { inp, out } => (inp * out) as u64,
            LayerArith::Conv { c_in, c_out, k, .. } => (c_in * c_out * k * k) as u64,
        }
    }

    /// Multiplications per forward pass of one example (additions and the
    /// gate multiplies are excluded by the counting rule).
    pub fn flops(&self) -> u64 {
        match *self {
            LayerArith::Dense { inp, out } => (inp * out) as u64,
            LayerArith::Conv { c_in, c_out, k, h_out, w_out } => {
                (c_in * c_out * k * k * h_out * w_out) as u64
            }
        }
    }
}

/// Walk the network and list every weighted layer's arithmetic, head
/// included.
pub fn arch_arith(net: &Network) -> Result<Vec<LayerArith>> {
    let mut out = Vec::new();
    // geometry state: either flat width or (channels, side)
    let mut flat: Option<usize> = None;
    let mut conv: Option<(usize, usize)> = None;
    match net.input_shape.as_slice() {
        [d] => {
            flat = Some(net.input_select.as_ref().map(|s| s.len()).unwrap_or(*d));
        }
        [c, h, w] if h == w => conv = Some((*c, *h)),
        other => {
            return Err(VibError::Dim {
                context: "arch_arith",
                expected: "input shape [d] or [c, h, w] with h == w".into(),
                got: format!("{other:?}"),
            })
        }
    }
    let mut push_layer = |layer: &Layer, flat: &mut Option<usize>, conv: &mut Option<(usize, usize)>| -> Result<()> {
        match layer {
            Layer::Affine(a) => {
                let inp = match (*flat, *conv) {
                    (Some(d), _) => d,
                    (None, Some((c, s))) => c * s * s,
                    (None, None) => unreachable!(),
                };
                if inp != a.in_dim() {
                    return Err(VibError::Dim {
                        context: "arch_arith affine",
                        expected: format!("{inp} inputs"),
                        got: format!("{}", a.in_dim()),
                    });
                }
                out.push(LayerArith::Dense { inp, out: a.out_dim() });
                *flat = Some(a.out_dim());
                *conv = None;
            }
            Layer::Conv2d(c2) => {
                let (c, s) = conv.ok_or(VibError::Dim {
                    context: "arch_arith conv",
                    expected: "spatial input".into(),
                    got: "flat input".into(),
                })?;
                if c != c2.c_in() {
                    return Err(VibError::Dim {
                        context: "arch_arith conv",
                        expected: format!("{c} channels"),
                        got: format!("{}", c2.c_in()),
                    });
                }
                let os = c2.out_side(s)?;
                out.push(LayerArith::Conv {
                    c_in: c,
                    c_out: c2.c_out(),
                    k: c2.kernel(),
                    h_out: os,
                    w_out: os,
                });
                *conv = Some((c2.c_out(), os));
                *flat = None;
            }
            Layer::BatchNorm(_) | Layer::Relu => {}
        }
        Ok(())
    };
    for b in &net.blocks {
        for l in &b.layers {
            push_layer(l, &mut flat, &mut conv)?;
        }
    }
    push_layer(&Layer::Affine(net.head.clone()), &mut flat, &mut conv)?;
    Ok(out)
}

/// Sizes of the gated feature maps (input first iff the input is gated):
/// width for dense gates, channels x height x width for conv gates.
pub fn gated_feature_sizes(net: &Network) -> Vec<usize> {
    let mut sizes = Vec::new();
    if let Some(g) = &net.input_gate {
        sizes.push(g.width());
    }
    for b in &net.blocks {
        let w = b.gate.width();
        sizes.push(match b.conv_side {
            Some(s) => w * s * s,
            None => w,
        });
    }
    sizes
}

/// 100 x (pruned weight count) / (original weight count); biases excluded.
pub fn compute_r_w(original: &[LayerArith], pruned: &[LayerArith]) -> Result<f64> {
    if original.len() != pruned.len() {
        return Err(VibError::Input(format!(
            "architecture layer counts differ: {} vs {}",
            original.len(),
            pruned.len()
        )));
    }
    let ow: u64 = original.iter().map(LayerArith::weights).sum();
    let pw: u64 = pruned.iter().map(LayerArith::weights).sum();
    Ok(100.0 * pw as f64 / ow as f64)
}

/// Total multiplications for one forward pass under the stated counting
/// rule (one FLOP per multiplication, additions excluded, gate multiplies
/// folded away).
pub fn compute_flops(arch: &[LayerArith]) -> u64 {
    arch.iter().map(LayerArith::flops).sum()
}

/// 100 x (pruned feature sizes) / (original feature sizes) over the gated
/// layers.
pub fn compute_r_n(original: &[usize], pruned: &[usize]) -> Result<f64> {
    if original.len() != pruned.len() {
        return Err(VibError::Input(format!(
            "gated layer counts differ: {} vs {}",
            original.len(),
            pruned.len()
        )));
    }
    let o: usize = original.iter().sum();
    let p: usize = pruned.iter().sum();
    Ok(100.0 * p as f64 / o as f64)
}

#[derive(Debug, Clone)]
pub struct PruneReport {
    pub tau: f64,
    /// Surviving unit indices per gated layer, input gate first.
    pub survivors: Vec<Vec<usize>>,
    /// Gated widths before/after (input width included iff gated).
    pub original_arch: Vec<usize>,
    pub pruned_arch: Vec<usize>,
    pub r_w: f64,
    pub flops: u64,
    pub r_n: f64,
    pub err_before: Option<f64>,
    pub err_after: Option<f64>,
}

impl PruneReport {
    /// "97-71-33"-style string of surviving gated widths.
    pub fn arch_string(&self) -> String {
        self.pruned_arch.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
    }

    pub fn csv_header() -> &'static str {
        "tau,r_w,flops,r_n,err_before,err_after,arch"
    }

    pub fn csv_row(&self) -> String {
        let fmt_err = |e: Option<f64>| e.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{:.4},{},{:.4},{},{},{}",
            self.tau,
            self.r_w,
            self.flops,
            self.r_n,
            fmt_err(self.err_before),
            fmt_err(self.err_after),
            self.arch_string()
        )
    }

    pub fn text_report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("prune threshold tau = {}\n", self.tau));
        s.push_str(&format!(
            "architecture: {} -> {}\n",
            self.original_arch.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
            self.arch_string()
        ));
        s.push_str(&format!("r_W  = {:.2}% of weights kept\n", self.r_w));
        s.push_str(&format!("FLOPs = {} multiplies per example\n", self.flops));
        s.push_str(&format!("r_N  = {:.2}% of feature-map storage kept\n", self.r_n));
        if let Some(e) = self.err_before {
            s.push_str(&format!("test error before pruning: {:.4}\n", e));
        }
        if let Some(e) = self.err_after {
            s.push_str(&format!("test error after pruning:  {:.4}\n", e));
        }
        s
    }
}

fn keep_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    t.gather_rows(rows)
}

/// Keep column groups of a 2-D weight: column indices are unit indices,
/// each spanning `group` adjacent physical columns (spatial flatten).
fn keep_col_groups(t: &Tensor, units: &[usize], group: usize) -> Tensor {
    let cols: Vec<usize> =
        units.iter().flat_map(|&u| u * group..(u + 1) * group).collect();
    t.gather_cols(&cols)
}

fn keep_entries(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn prune_affine_rows(a: &AffineLayer, rows: &[usize]) -> AffineLayer {
    AffineLayer {
        weight: keep_rows(&a.weight, rows),
        bias: Tensor::from_vec(&[rows.len()], keep_entries(a.bias.data(), rows)).unwrap(),
    }
}

fn prune_affine_cols(a: &AffineLayer, units: &[usize], group: usize) -> AffineLayer {
    AffineLayer { weight: keep_col_groups(&a.weight, units, group), bias: a.bias.clone() }
}

fn prune_conv_out(c: &Conv2dLayer, rows: &[usize]) -> Conv2dLayer {
    Conv2dLayer {
        weight: keep_rows(&c.weight, rows),
        bias: Tensor::from_vec(&[rows.len()], keep_entries(c.bias.data(), rows)).unwrap(),
        stride: c.stride,
        padding: c.padding,
    }
}

fn prune_conv_in(c: &Conv2dLayer, cols: &[usize]) -> Conv2dLayer {
    let shape = c.weight.shape().to_vec();
    let (c_out, c_in, k) = (shape[0], shape[1], shape[2]);
    let mut data = Vec::with_capacity(c_out * cols.len() * k * k);
    for o in 0..c_out {
        for &ci in cols {
            let base = ((o * c_in + ci) * k) * k;
            data.extend_from_slice(&c.weight.data()[base..base + k * k]);
        }
    }
    Conv2dLayer {
        weight: Tensor::from_vec(&[c_out, cols.len(), k, k], data).unwrap(),
        bias: c.bias.clone(),
        stride: c.stride,
        padding: c.padding,
    }
}

fn prune_bn(bn: &BatchNormLayer, idx: &[usize]) -> BatchNormLayer {
    let pick = |t: &Tensor| Tensor::from_vec(&[idx.len()], keep_entries(t.data(), idx)).unwrap();
    BatchNormLayer {
        scale: pick(&bn.scale),
        shift: pick(&bn.shift),
        running_mean: pick(&bn.running_mean),
        running_var: pick(&bn.running_var),
        momentum: bn.momentum,
        epsilon: bn.epsilon,
    }
}

/// Delete the output units of a block's chain that are not in `keep`:
/// walking backward, batch-norm entries are filtered and the first
/// weight-bearing layer loses the corresponding rows.
fn prune_block_outputs(layers: &[Layer], keep: &[usize]) -> Vec<Layer> {
    let mut out: Vec<Layer> = layers.to_vec();
    for l in out.iter_mut().rev() {
        match l {
            Layer::Relu => {}
            Layer::BatchNorm(bn) => *bn = prune_bn(bn, keep),
            Layer::Affine(a) => {
                *a = prune_affine_rows(a, keep);
                break;
            }
            Layer::Conv2d(c) => {
                *c = prune_conv_out(c, keep);
                break;
            }
        }
    }
    out
}

/// Delete input units of a block's first weight-bearing layer. `group` is
/// the flattened spatial multiplicity of one upstream unit; it applies to
/// affine consumers only (conv consumers align channel to channel).
fn prune_block_inputs(layers: &[Layer], keep: &[usize], group: usize) -> Result<Vec<Layer>> {
    let mut out: Vec<Layer> = layers.to_vec();
    for l in out.iter_mut() {
        match l {
            Layer::Relu | Layer::BatchNorm(_) => {}
            Layer::Affine(a) => {
                *a = prune_affine_cols(a, keep, group);
                return Ok(out);
            }
            Layer::Conv2d(c) => {
                *c = prune_conv_in(c, keep);
                return Ok(out);
            }
        }
    }
    Err(VibError::State("block has no weight-bearing layer"))
}

fn gate_survivors(gate: &GateSlot, tau: f64) -> Vec<usize> {
    match gate {
        GateSlot::Stochastic(g) => g.survivors(tau),
        GateSlot::Fixed { multipliers, .. } => (0..multipliers.len()).collect(),
    }
}

fn fixed_gate_from(gate: &GateSlot, keep: &[usize]) -> GateSlot {
    match gate {
        GateSlot::Stochastic(g) => GateSlot::Fixed {
            multipliers: keep_entries(&g.mu, keep),
            broadcast: g.broadcast,
        },
        GateSlot::Fixed { multipliers, broadcast } => GateSlot::Fixed {
            multipliers: keep_entries(multipliers, keep),
            broadcast: *broadcast,
        },
    }
}

/// Prune every gate coordinate with alpha < tau and perform the matching
/// surgery. Returns the strictly smaller deterministic network plus the
/// compression report (error fields left for the caller to fill).
pub fn prune(net: &Network, tau: f64) -> Result<(Network, PruneReport)> {
    if tau <= 0.0 {
        return Err(VibError::Domain { what: "tau", value: tau });
    }
    let original_arith = arch_arith(net)?;
    let original_sizes = gated_feature_sizes(net);
    let original_arch = net.gated_widths();

    // survivor lists, input gate first
    let mut survivors: Vec<Vec<usize>> = Vec::new();
    if let Some(g) = &net.input_gate {
        let s = gate_survivors(g, tau);
        if s.is_empty() {
            return Err(VibError::DegenerateLayer { layer: "input_gate".into() });
        }
        survivors.push(s);
    }
    for (i, b) in net.blocks.iter().enumerate() {
        let s = gate_survivors(&b.gate, tau);
        if s.is_empty() {
            return Err(VibError::DegenerateLayer { layer: format!("block{i}") });
        }
        survivors.push(s);
    }

    let mut pruned = net.clone();
    let mut si = survivors.iter();

    // input gate: shrink the multiplier, record the selection, and drop
    // the matching columns of the first block's first weighted layer
    if let Some(g) = &net.input_gate {
        let keep = si.next().unwrap();
        pruned.input_gate = Some(fixed_gate_from(g, keep));
        pruned.input_select = Some(match &net.input_select {
            Some(sel) => keep.iter().map(|&j| sel[j]).collect(),
            None => keep.clone(),
        });
        pruned.blocks[0].layers = prune_block_inputs(&net.blocks[0].layers, keep, 1)?;
    }

    for (i, keep) in si.enumerate() {
        let block = &pruned.blocks[i].clone();
        pruned.blocks[i] = Block {
            layers: prune_block_outputs(&block.layers, keep),
            gate: fixed_gate_from(&block.gate, keep),
            conv_side: block.conv_side,
        };
        let group = pruned.blocks[i].conv_side.map(|s| s * s).unwrap_or(1);
        if i + 1 < pruned.blocks.len() {
            pruned.blocks[i + 1].layers =
                prune_block_inputs(&pruned.blocks[i + 1].layers, keep, group)?;
        } else {
            pruned.head = prune_affine_cols(&pruned.head, keep, group);
        }
    }

    let pruned_arith = arch_arith(&pruned)?;
    let pruned_sizes = gated_feature_sizes(&pruned);
    let report = PruneReport {
        tau,
        survivors,
        original_arch,
        pruned_arch: pruned.gated_widths(),
        r_w: compute_r_w(&original_arith, &pruned_arith)?,
        flops: compute_flops(&pruned_arith),
        r_n: compute_r_n(&original_sizes, &pruned_sizes)?,
        err_before: None,
        err_after: None,
    };
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{lenet_300_100, toy_mlp};
    use crate::rng::RandomSource;

    fn dense(inp: usize, out: usize) -> LayerArith {
        LayerArith::Dense { inp, out }
    }

    #[test]
    fn table_shapes_reproduce_published_r_w() {
        let orig = vec![dense(784, 300), dense(300, 100), dense(100, 10)];
        let vib = vec![dense(97, 71), dense(71, 33), dense(33, 10)];
        let r = compute_r_w(&orig, &vib).unwrap();
        assert!((r - 3.59).abs() < 0.01, "r_w {r}");
        let vd = vec![dense(512, 114), dense(114, 72), dense(72, 10)];
        let r = compute_r_w(&orig, &vd).unwrap();
        assert!((r - 25.28).abs() < 0.01, "r_w {r}");
        assert_eq!(compute_r_w(&orig, &orig).unwrap(), 100.0);
    }

    #[test]
    fn table_shapes_reproduce_published_r_n() {
        let orig = vec![784, 300, 100];
        let r = compute_r_n(&orig, &[97, 71, 33]).unwrap();
        assert!((r - 16.98).abs() < 0.01, "r_n {r}");
        let r = compute_r_n(&orig, &[512, 114, 72]).unwrap();
        assert!((r - 58.95).abs() < 0.01, "r_n {r}");
        assert_eq!(compute_r_n(&orig, &orig).unwrap(), 100.0);
    }

    #[test]
    fn flops_counting_rule() {
        assert_eq!(compute_flops(&[dense(784, 300)]), 235_200);
        assert_eq!(
            compute_flops(&[LayerArith::Conv { c_in: 1, c_out: 6, k: 5, h_out: 24, w_out: 24 }]),
            86_400
        );
        // full LeNet-300-100: every dense product summed
        let mut rng = RandomSource::new(1);
        let net = lenet_300_100(&mut rng);
        let arith = arch_arith(&net).unwrap();
        assert_eq!(compute_flops(&arith), 266_200);
        let weights: u64 = arith.iter().map(LayerArith::weights).sum();
        assert_eq!(weights, 266_200);
    }

    #[test]
    fn mismatched_layer_counts_rejected() {
        assert!(compute_r_w(&[dense(2, 2)], &[dense(2, 2), dense(2, 2)]).is_err());
        assert!(compute_r_n(&[4, 5], &[4]).is_err());
    }

    #[test]
    fn prune_keeps_everything_when_alpha_clears_tau() {
        let mut rng = RandomSource::new(7);
        let net = toy_mlp(&[6, 9, 4], true, true, &mut rng);
        // default init has alpha ~ 100 everywhere
        let x = crate::tensor::Tensor::randn(&[8, 6], 1.0, &mut rng);
        let before = net.eval_forward(&x).unwrap();
        let (pruned, report) = prune(&net, DEFAULT_TAU).unwrap();
        let after = pruned.eval_forward(&x).unwrap();
        assert_eq!(before.data(), after.data(), "outputs must be bitwise identical");
        assert_eq!(report.r_w, 100.0);
        assert_eq!(report.r_n, 100.0);
        assert_eq!(report.original_arch, report.pruned_arch);
    }

    #[test]
    fn removing_exact_zero_mu_changes_nothing() {
        let mut rng = RandomSource::new(8);
        let mut net = toy_mlp(&[6, 10, 5, 4], true, false, &mut rng);
        // zero out a few gate coordinates exactly
        if let GateSlot::Stochastic(g) = net.input_gate.as_mut().unwrap() {
            g.mu[1] = 0.0;
            g.mu[4] = 0.0;
        }
        if let GateSlot::Stochastic(g) = &mut net.blocks[0].gate {
            g.mu[3] = 0.0;
        }
        if let GateSlot::Stochastic(g) = &mut net.blocks[1].gate {
            g.mu[0] = 0.0;
        }
        let (pruned, report) = prune(&net, 1e-9).unwrap();
        assert_eq!(report.pruned_arch, vec![4, 9, 4]);
        for _ in 0..50 {
            let x = crate::tensor::Tensor::randn(&[4, 6], 1.0, &mut rng);
            let a = net.eval_forward(&x).unwrap();
            let b = pruned.eval_forward(&x).unwrap();
            assert_eq!(a.data(), b.data(), "zero-mu removal must be exact");
        }
    }

    #[test]
    fn surgery_matches_zeroing_mu_within_tolerance() {
        let mut rng = RandomSource::new(9);
        let mut net = toy_mlp(&[5, 12, 7, 3], true, true, &mut rng);
        // scatter alphas: shrink some mu so they fall below tau
        let shrink = |g: &mut GateSlot, idx: &[usize]| {
            if let GateSlot::Stochastic(g) = g {
                for &j in idx {
                    g.mu[j] = 1e-6;
                }
            }
        };
        shrink(net.input_gate.as_mut().unwrap(), &[0, 2]);
        shrink(&mut net.blocks[0].gate, &[1, 5, 9]);
        shrink(&mut net.blocks[1].gate, &[6]);
        let tau = 1e-2;
        let (pruned, _) = prune(&net, tau).unwrap();
        // reference: original network with pruned coordinates' mu zeroed
        let mut zeroed = net.clone();
        let zero_out = |g: &mut GateSlot, tau: f64| {
            if let GateSlot::Stochastic(g) = g {
                let alpha = g.alpha();
                for j in 0..g.width() {
                    if alpha[j] < tau {
                        g.mu[j] = 0.0;
                    }
                }
            }
        };
        zero_out(zeroed.input_gate.as_mut().unwrap(), tau);
        for b in zeroed.blocks.iter_mut() {
            zero_out(&mut b.gate, tau);
        }
        for _ in 0..20 {
            let x = crate::tensor::Tensor::randn(&[5, 5], 1.0, &mut rng);
            let a = zeroed.eval_forward(&x).unwrap();
            let b = pruned.eval_forward(&x).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn survivors_are_monotone_in_tau() {
        let mut rng = RandomSource::new(10);
        let mut net = toy_mlp(&[4, 20, 3], false, false, &mut rng);
        if let GateSlot::Stochastic(g) = &mut net.blocks[0].gate {
            for (j, m) in g.mu.iter_mut().enumerate() {
                *m = 0.02 * j as f64; // alphas spread over decades
            }
        }
        let taus = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
        let mut prev: Option<Vec<usize>> = None;
        let mut prev_rw = f64::INFINITY;
        let mut prev_rn = f64::INFINITY;
        for tau in taus {
            let (_, report) = prune(&net, tau).unwrap();
            let s = report.survivors[0].clone();
            if let Some(p) = &prev {
                assert!(s.iter().all(|j| p.contains(j)), "survivors must shrink");
            }
            assert!(report.r_w <= prev_rw + 1e-12);
            assert!(report.r_n <= prev_rn + 1e-12);
            prev_rw = report.r_w;
            prev_rn = report.r_n;
            prev = Some(s);
        }
    }

    #[test]
    fn emptied_layer_is_an_explicit_error() {
        let mut rng = RandomSource::new(11);
        let mut net = toy_mlp(&[4, 6, 3], false, false, &mut rng);
        if let GateSlot::Stochastic(g) = &mut net.blocks[0].gate {
            g.mu.iter_mut().for_each(|m| *m = 0.0);
        }
        match prune(&net, 1e-2) {
            Err(VibError::DegenerateLayer { layer }) => assert_eq!(layer, "block0"),
            other => panic!("expected degenerate-layer error, got {other:?}"),
        }
    }

    #[test]
    fn conv_surgery_composes_with_flatten() {
        let mut rng = RandomSource::new(12);
        let mut net = crate::network::lenet_5(&mut rng);
        // push a couple of channels below threshold in each conv block
        let shrink = |g: &mut GateSlot, idx: &[usize]| {
            if let GateSlot::Stochastic(g) = g {
                for &j in idx {
                    g.mu[j] = 0.0;
                }
            }
        };
        shrink(&mut net.blocks[0].gate, &[0, 7]);
        shrink(&mut net.blocks[1].gate, &[3, 10, 40]);
        shrink(&mut net.blocks[2].gate, &[100, 200, 300]);
        let (pruned, report) = prune(&net, 1e-4).unwrap();
        assert_eq!(report.pruned_arch, vec![18, 47, 497]);
        let x = crate::tensor::Tensor::randn(&[2, 1, 28, 28], 0.5, &mut rng);
        let a = net.eval_forward(&x).unwrap();
        let b = pruned.eval_forward(&x).unwrap();
        assert_eq!(a.shape(), b.shape());
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn conv_feature_sizes_multiply_spatial_dims() {
        let mut rng = RandomSource::new(13);
        let net = crate::network::lenet_5(&mut rng);
        assert_eq!(gated_feature_sizes(&net), vec![20 * 24 * 24, 50 * 10 * 10, 500]);
    }

    #[test]
    fn report_strings_are_stable() {
        let report = PruneReport {
            tau: 0.01,
            survivors: vec![vec![0], vec![1]],
            original_arch: vec![784, 300],
            pruned_arch: vec![97, 71],
            r_w: 3.5912,
            flops: 9560,
            r_n: 16.976,
            err_before: Some(0.016),
            err_after: None,
        };
        assert_eq!(report.arch_string(), "97-71");
        let row = report.csv_row();
        assert_eq!(row, "0.01,3.5912,9560,16.9760,0.016,,97-71");
        assert!(PruneReport::csv_header().split(',').count() == row.split(',').count());
    }
}
