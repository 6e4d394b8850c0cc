//! Deterministic layer primitives (affine, conv2d, batch norm, relu) with
//! manual forward/backward rules.
//!
//! Forward passes return a cache holding exactly the intermediates the
//! matching backward pass needs. Backward returns the input gradient plus
//! parameter gradients; batch-norm additionally reports its batch moments
//! so the optimizer can update running statistics after gradient reduction
//! (keeps forward `&self` and shard execution pure).

use crate::error::{Result, VibError};
use crate::tensor::Tensor;

/// y += alpha * x
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone)]
pub struct AffineLayer {
    /// (out, in), row-major.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AffineLayer {
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    /// (c_out, c_in, k, k), row-major.
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Output spatial side for a square input of side `s`.
    pub fn out_side(&self, s: usize) -> Result<usize> {
        let k = self.kernel();
        let padded = s + 2 * self.padding;
        if padded < k {
            return Err(VibError::Dim {
                context: "conv2d geometry",
                expected: format!("input side >= {}", k.saturating_sub(2 * self.padding)),
                got: format!("{s}"),
            });
        }
        Ok((padded - k) / self.stride + 1)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNormLayer {
    pub fn new(width: usize) -> Self {
        BatchNormLayer {
            scale: Tensor::filled(&[width], 1.0),
            shift: Tensor::zeros(&[width]),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::filled(&[width], 1.0),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Affine(AffineLayer),
    Conv2d(Conv2dLayer),
    BatchNorm(BatchNormLayer),
    Relu,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Affine(_) => "affine",
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
        }
    }
}

/// Whether batch norm uses minibatch statistics (train) or running
/// statistics (eval, a pure affine map).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug)]
pub enum LayerCache {
    Affine {
        /// Input flattened to (batch, in).
        input: Tensor,
        /// Original input shape, restored on the gradient.
        input_shape: Vec<usize>,
    },
    Conv2d {
        input: Tensor,
        out_side: usize,
    },
    BatchNormTrain {
        normalized: Tensor,
        inv_std: Vec<f64>,
        stat_sum: Vec<f64>,
        stat_sumsq: Vec<f64>,
        stat_count: usize,
    },
    BatchNormEval,
    Relu {
        input: Tensor,
    },
}

#[derive(Debug, Clone)]
pub enum LayerGrads {
    Affine {
        d_weight: Tensor,
        d_bias: Tensor,
    },
    Conv2d {
        d_weight: Tensor,
        d_bias: Tensor,
    },
    BatchNorm {
        d_scale: Tensor,
        d_shift: Tensor,
        stat_sum: Vec<f64>,
        stat_sumsq: Vec<f64>,
        stat_count: usize,
    },
    None,
}

impl LayerGrads {
    pub fn add_assign(&mut self, other: &LayerGrads) {
        match (self, other) {
            (
                LayerGrads::Affine { d_weight, d_bias },
                LayerGrads::Affine { d_weight: ow, d_bias: ob },
            )
            | (
                LayerGrads::Conv2d { d_weight, d_bias },
                LayerGrads::Conv2d { d_weight: ow, d_bias: ob },
            ) => {
                axpy(1.0, ow.data(), d_weight.data_mut());
                axpy(1.0, ob.data(), d_bias.data_mut());
            }
            (
                LayerGrads::BatchNorm { d_scale, d_shift, stat_sum, stat_sumsq, stat_count },
                LayerGrads::BatchNorm {
                    d_scale: os,
                    d_shift: oh,
                    stat_sum: osum,
                    stat_sumsq: osq,
                    stat_count: on,
                },
            ) => {
                axpy(1.0, os.data(), d_scale.data_mut());
                axpy(1.0, oh.data(), d_shift.data_mut());
                axpy(1.0, osum, stat_sum);
                axpy(1.0, osq, stat_sumsq);
                *stat_count += on;
            }
            (LayerGrads::None, LayerGrads::None) => {}
            _ => panic!("gradient structure mismatch"),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        match self {
            LayerGrads::Affine { d_weight, d_bias } | LayerGrads::Conv2d { d_weight, d_bias } => {
                d_weight.data_mut().iter_mut().for_each(|x| *x *= factor);
                d_bias.data_mut().iter_mut().for_each(|x| *x *= factor);
            }
            LayerGrads::BatchNorm { d_scale, d_shift, .. } => {
                d_scale.data_mut().iter_mut().for_each(|x| *x *= factor);
                d_shift.data_mut().iter_mut().for_each(|x| *x *= factor);
            }
            LayerGrads::None => {}
        }
    }
}

impl Layer {
    pub fn forward(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Affine(a) => affine_forward(a, x),
            Layer::Conv2d(c) => conv2d_forward(c, x),
            Layer::BatchNorm(bn) => batch_norm_forward(bn, x, phase),
            Layer::Relu => {
                let y = x.map(|v| if v > 0.0 { v } else { 0.0 });
                Ok((y, LayerCache::Relu { input: x.clone() }))
            }
        }
    }

    pub fn backward(&self, cache: &LayerCache, dy: &Tensor) -> Result<(Tensor, LayerGrads)> {
        match (self, cache) {
            (Layer::Affine(a), LayerCache::Affine { input, input_shape }) => {
                affine_backward(a, input, input_shape, dy)
            }
            (Layer::Conv2d(c), LayerCache::Conv2d { input, out_side }) => {
                conv2d_backward(c, input, *out_side, dy)
            }
            (
                Layer::BatchNorm(bn),
                LayerCache::BatchNormTrain { normalized, inv_std, stat_sum, stat_sumsq, stat_count },
            ) => batch_norm_backward(bn, normalized, inv_std, stat_sum, stat_sumsq, *stat_count, dy),
            (Layer::BatchNorm(_), LayerCache::BatchNormEval) => {
                Err(VibError::State("batch-norm backward requires a train-phase forward"))
            }
            (Layer::Relu, LayerCache::Relu { input }) => {
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(input.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((dx, LayerGrads::None))
            }
            _ => Err(VibError::State("layer cache does not match layer kind")),
        }
    }
}

pub fn affine_forward(layer: &AffineLayer, x: &Tensor) -> Result<(Tensor, LayerCache)> {
    let input_shape = x.shape().to_vec();
    let batch = x.rows();
    let in_dim = x.row_len();
    if in_dim != layer.in_dim() {
        return Err(VibError::Dim {
            context: "affine_forward",
            expected: format!("input width {}", layer.in_dim()),
            got: format!("{in_dim} (shape {:?})", x.shape()),
        });
    }
    let out_dim = layer.out_dim();
    let mut y = Tensor::zeros(&[batch, out_dim]);
    let w = layer.weight.data();
    let b = layer.bias.data();
    // transposed weight so the hot loop is an axpy over contiguous output
    // lanes; accumulation stays sequential in the input index, which keeps
    // surgery on zeroed inputs bit-exact
    let mut wt = vec![0.0; in_dim * out_dim];
    for o in 0..out_dim {
        for i in 0..in_dim {
            wt[i * out_dim + o] = w[o * in_dim + i];
        }
    }
    for r in 0..batch {
        let xr = x.row(r);
        let yr = y.row_mut(r);
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, &wt[i * out_dim..(i + 1) * out_dim], yr);
            }
        }
    }
    let input = if input_shape.len() == 2 {
        x.clone()
    } else {
        x.clone().reshaped(&[batch, in_dim])?
    };
    Ok((y, LayerCache::Affine { input, input_shape }))
}

fn affine_backward(
    layer: &AffineLayer,
    input: &Tensor,
    input_shape: &[usize],
    dy: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    let batch = input.rows();
    let in_dim = layer.in_dim();
    let out_dim = layer.out_dim();
    if dy.shape() != [batch, out_dim] {
        return Err(VibError::Dim {
            context: "affine_backward",
            expected: format!("[{batch}, {out_dim}]"),
            got: format!("{:?}", dy.shape()),
        });
    }
    let mut dx = Tensor::zeros(&[batch, in_dim]);
    let mut dw = Tensor::zeros(&[out_dim, in_dim]);
    let mut db = Tensor::zeros(&[out_dim]);
    let w = layer.weight.data();
    for i in 0..batch {
        let dyr = dy.row(i);
        let xr = input.row(i);
        let dxr = dx.row_mut(i);
        for o in 0..out_dim {
            let g = dyr[o];
            if g != 0.0 {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxr);
            }
        }
        let dwd = dw.data_mut();
        for o in 0..out_dim {
            let g = dyr[o];
            if g != 0.0 {
                axpy(g, xr, &mut dwd[o * in_dim..(o + 1) * in_dim]);
            }
        }
        for o in 0..out_dim {
            db.data_mut()[o] += dyr[o];
        }
    }
    let dx = dx.reshaped(input_shape)?;
    Ok((dx, LayerGrads::Affine { d_weight: dw, d_bias: db }))
}

pub fn conv2d_forward(layer: &Conv2dLayer, x: &Tensor) -> Result<(Tensor, LayerCache)> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != layer.c_in() {
        return Err(VibError::Dim {
            context: "conv2d_forward",
            expected: format!("[batch, {}, h, w]", layer.c_in()),
            got: format!("{shape:?}"),
        });
    }
    if shape[2] != shape[3] {
        return Err(VibError::Dim {
            context: "conv2d_forward",
            expected: "square spatial input".into(),
            got: format!("{}x{}", shape[2], shape[3]),
        });
    }
    let (batch, c_in, side) = (shape[0], shape[1], shape[2]);
    let k = layer.kernel();
    let out_side = layer.out_side(side)?;
    let c_out = layer.c_out();
    let (s, p) = (layer.stride, layer.padding);
    let mut y = Tensor::zeros(&[batch, c_out, out_side, out_side]);
    let w = layer.weight.data();
    let bias = layer.bias.data();
    let xd = x.data();
    let yd = y.data_mut();
    let in_img = c_in * side * side;
    let out_img = c_out * out_side * out_side;
    for b in 0..batch {
        for co in 0..c_out {
            for oh in 0..out_side {
                for ow in 0..out_side {
                    let mut acc = bias[co];
                    for ci in 0..c_in {
                        let wbase = ((co * c_in + ci) * k) * k;
                        let xbase = b * in_img + ci * side * side;
                        for kh in 0..k {
                            let ih = (oh * s + kh) as isize - p as isize;
                            if ih < 0 || ih >= side as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (ow * s + kw) as isize - p as isize;
                                if iw < 0 || iw >= side as isize {
                                    continue;
                                }
                                acc += w[wbase + kh * k + kw]
                                    * xd[xbase + ih as usize * side + iw as usize];
                            }
                        }
                    }
                    yd[b * out_img + co * out_side * out_side + oh * out_side + ow] = acc;
                }
            }
        }
    }
    Ok((y, LayerCache::Conv2d { input: x.clone(), out_side }))
}

fn conv2d_backward(
    layer: &Conv2dLayer,
    input: &Tensor,
    out_side: usize,
    dy: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    let shape = input.shape();
    let (batch, c_in, side) = (shape[0], shape[1], shape[2]);
    let c_out = layer.c_out();
    let k = layer.kernel();
    if dy.shape() != [batch, c_out, out_side, out_side] {
        return Err(VibError::Dim {
            context: "conv2d_backward",
            expected: format!("[{batch}, {c_out}, {out_side}, {out_side}]"),
            got: format!("{:?}", dy.shape()),
        });
    }
    let (s, p) = (layer.stride, layer.padding);
    let mut dx = Tensor::zeros(shape);
    let mut dw = Tensor::zeros(layer.weight.shape());
    let mut db = Tensor::zeros(&[c_out]);
    let w = layer.weight.data();
    let xd = input.data();
    let dyd = dy.data();
    let in_img = c_in * side * side;
    let out_img = c_out * out_side * out_side;
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        let dbd = db.data_mut();
        for b in 0..batch {
            for co in 0..c_out {
                for oh in 0..out_side {
                    for ow in 0..out_side {
                        let g = dyd[b * out_img + co * out_side * out_side + oh * out_side + ow];
                        if g == 0.0 {
                            continue;
                        }
                        dbd[co] += g;
                        for ci in 0..c_in {
                            let wbase = ((co * c_in + ci) * k) * k;
                            let xbase = b * in_img + ci * side * side;
                            for kh in 0..k {
                                let ih = (oh * s + kh) as isize - p as isize;
                                if ih < 0 || ih >= side as isize {
                                    continue;
                                }
                                for kw in 0..k {
                                    let iw = (ow * s + kw) as isize - p as isize;
                                    if iw < 0 || iw >= side as isize {
                                        continue;
                                    }
                                    let xi = xbase + ih as usize * side + iw as usize;
                                    dwd[wbase + kh * k + kw] += g * xd[xi];
                                    dxd[xi] += g * w[wbase + kh * k + kw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dx, LayerGrads::Conv2d { d_weight: dw, d_bias: db }))
}

/// Channel count and per-channel element layout for 2-D or 4-D activations.
fn bn_layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [batch, c] => Ok((*batch, *c, 1)),
        [batch, c, h, w] => Ok((*batch, *c, h * w)),
        other => Err(VibError::Dim {
            context: "batch_norm",
            expected: "2-D or 4-D input".into(),
            got: format!("{other:?}"),
        }),
    }
}

fn batch_norm_forward(bn: &BatchNormLayer, x: &Tensor, phase: Phase) -> Result<(Tensor, LayerCache)> {
    let (batch, c, spatial) = bn_layout(x)?;
    if c != bn.width() {
        return Err(VibError::Dim {
            context: "batch_norm_forward",
            expected: format!("{} channels", bn.width()),
            got: format!("{c}"),
        });
    }
    let xd = x.data();
    let per_channel = |f: &mut dyn FnMut(usize, f64)| {
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                for i in 0..spatial {
                    f(ch, xd[base + i]);
                }
            }
        }
    };
    match phase {
        Phase::Train => {
            let n = (batch * spatial) as f64;
            let mut sum = vec![0.0; c];
            let mut sumsq = vec![0.0; c];
            per_channel(&mut |ch, v| {
                sum[ch] += v;
                sumsq[ch] += v * v;
            });
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let inv_std: Vec<f64> = (0..c)
                .map(|ch| {
                    let var = (sumsq[ch] / n - mean[ch] * mean[ch]).max(0.0);
                    1.0 / (var + bn.epsilon).sqrt()
                })
                .collect();
            let mut normalized = Tensor::zeros(x.shape());
            let mut y = Tensor::zeros(x.shape());
            {
                let nd = normalized.data_mut();
                let yd = y.data_mut();
                let g = bn.scale.data();
                let s = bn.shift.data();
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * spatial;
                        for i in 0..spatial {
                            let xh = (xd[base + i] - mean[ch]) * inv_std[ch];
                            nd[base + i] = xh;
                            yd[base + i] = g[ch] * xh + s[ch];
                        }
                    }
                }
            }
            Ok((
                y,
                LayerCache::BatchNormTrain {
                    normalized,
                    inv_std,
                    stat_sum: sum,
                    stat_sumsq: sumsq,
                    stat_count: batch * spatial,
                },
            ))
        }
        Phase::Eval => {
            let mut y = Tensor::zeros(x.shape());
            let yd = y.data_mut();
            let g = bn.scale.data();
            let s = bn.shift.data();
            let rm = bn.running_mean.data();
            let rv = bn.running_var.data();
            for b in 0..batch {
                for ch in 0..c {
                    let a = g[ch] / (rv[ch] + bn.epsilon).sqrt();
                    let base = (b * c + ch) * spatial;
                    for i in 0..spatial {
                        yd[base + i] = a * (xd[base + i] - rm[ch]) + s[ch];
                    }
                }
            }
            Ok((y, LayerCache::BatchNormEval))
        }
    }
}

fn batch_norm_backward(
    bn: &BatchNormLayer,
    normalized: &Tensor,
    inv_std: &[f64],
    stat_sum: &[f64],
    stat_sumsq: &[f64],
    stat_count: usize,
    dy: &Tensor,
) -> Result<(Tensor, LayerGrads)> {
    let (batch, c, spatial) = bn_layout(normalized)?;
    let n = (batch * spatial) as f64;
    let nd = normalized.data();
    let dyd = dy.data();
    let g = bn.scale.data();

    let mut d_scale = vec![0.0; c];
    let mut d_shift = vec![0.0; c];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * spatial;
            for i in 0..spatial {
                d_scale[ch] += dyd[base + i] * nd[base + i];
                d_shift[ch] += dyd[base + i];
            }
        }
    }
    // dx = g*inv_std/n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
    let mut dx = Tensor::zeros(normalized.shape());
    {
        let dxd = dx.data_mut();
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                let a = g[ch] * inv_std[ch] / n;
                for i in 0..spatial {
                    dxd[base + i] = a
                        * (n * dyd[base + i] - d_shift[ch] - nd[base + i] * d_scale[ch]);
                }
            }
        }
    }
    Ok((
        dx,
        LayerGrads::BatchNorm {
            d_scale: Tensor::from_vec(&[c], d_scale)?,
            d_shift: Tensor::from_vec(&[c], d_shift)?,
            stat_sum: stat_sum.to_vec(),
            stat_sumsq: stat_sumsq.to_vec(),
            stat_count,
        },
    ))
}
