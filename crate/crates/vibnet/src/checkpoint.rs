//! Self-describing binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!   magic   b"VIBN"
//!   version u16
//!   arch    u32 length + UTF-8 structural descriptor
//!   seed    u64
//!   epoch   u32
//!   count   u32 named arrays, each:
//!     name  u32 length + UTF-8
//!     dtype u8 (0 = f32)
//!     ndim  u8, then ndim u32 dims
//!     payload f32 little-endian
//!
//! Weights are stored in f32; loading reconstructs a network whose
//! eval-mode outputs match the saved one to f32 round-off.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, VibError};
use crate::gate::{Broadcast, VibGate};
use crate::layers::{AffineLayer, BatchNormLayer, Conv2dLayer, Layer};
use crate::network::{Block, GateSlot, Likelihood, Network};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"VIBN";
pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch: String,
    pub seed: u64,
    pub epoch: u32,
    /// Name -> tensor, ordered by name for byte-stable serialization.
    pub arrays: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch.len() as u32).to_le_bytes());
        out.extend_from_slice(self.arch.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, tensor) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(VibError::Parse { offset: 0, message: "bad checkpoint magic".into() });
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(VibError::Parse {
                offset: 4,
                message: format!("unsupported format version {version}"),
            });
        }
        let arch_len = cur.u32()? as usize;
        let arch = String::from_utf8(cur.take(arch_len)?.to_vec())
            .map_err(|e| VibError::Parse { offset: cur.pos, message: e.to_string() })?;
        let seed = cur.u64()?;
        let epoch = cur.u32()?;
        let count = cur.u32()? as usize;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|e| VibError::Parse { offset: cur.pos, message: e.to_string() })?;
            let dtype = cur.u8()?;
            if dtype != DTYPE_F32 {
                return Err(VibError::Parse {
                    offset: cur.pos - 1,
                    message: format!("unknown dtype tag {dtype}"),
                });
            }
            let ndim = cur.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as f64);
            }
            arrays.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(VibError::Parse {
                offset: cur.pos,
                message: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        Ok(Checkpoint { arch, seed, epoch, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(VibError::Parse {
                offset: self.pos,
                message: format!("need {n} bytes, {} remain", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// Network <-> checkpoint
// ---------------------------------------------------------------------------

fn describe_gate(g: &GateSlot) -> String {
    let kind = match g {
        GateSlot::Stochastic(_) => "gate",
        GateSlot::Fixed { .. } => "scale",
    };
    let bc = match g.broadcast() {
        Broadcast::PerNeuron => "neuron",
        Broadcast::PerChannel => "channel",
    };
    format!("{kind}({},{bc})", g.width())
}

/// Structural descriptor, parseable by `parse_descriptor`.
pub fn describe(net: &Network) -> String {
    let mut parts = Vec::new();
    parts.push(format!(
        "in:{}",
        net.input_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    ));
    if let Some(g) = &net.input_gate {
        parts.push(format!("igate:{}", describe_gate(g)));
    }
    for (i, b) in net.blocks.iter().enumerate() {
        let mut layers: Vec<String> = Vec::new();
        for l in &b.layers {
            layers.push(match l {
                Layer::Affine(a) => format!("affine({},{})", a.in_dim(), a.out_dim()),
                Layer::Conv2d(c) => format!(
                    "conv({},{},{},{},{})",
                    c.c_in(),
                    c.c_out(),
                    c.kernel(),
                    c.stride,
                    c.padding
                ),
                Layer::BatchNorm(bn) => format!("bn({})", bn.width()),
                Layer::Relu => "relu".to_string(),
            });
        }
        layers.push(describe_gate(&b.gate));
        let side = b.conv_side.map(|s| format!("@{s}")).unwrap_or_default();
        parts.push(format!("block{i}:{}{side}", layers.join("+")));
    }
    let lik = match net.likelihood {
        Likelihood::CategoricalSoftmax => "softmax",
        Likelihood::Gaussian => "gaussian",
    };
    parts.push(format!(
        "head:affine({},{})+{lik}",
        net.head.in_dim(),
        net.head.out_dim()
    ));
    parts.join(";")
}

fn parse_usize_args(s: &str, context: &'static str) -> Result<Vec<usize>> {
    let inner = s
        .split_once('(')
        .and_then(|(_, r)| r.strip_suffix(')'))
        .ok_or(VibError::Config { key: context.into(), message: format!("malformed '{s}'") })?;
    inner
        .split(',')
        .map(|p| {
            p.trim().parse::<usize>().map_err(|_| VibError::Config {
                key: context.into(),
                message: format!("bad integer '{p}' in '{s}'"),
            })
        })
        .collect()
}

struct GateSpec {
    width: usize,
    broadcast: Broadcast,
    stochastic: bool,
}

fn parse_gate_token(tok: &str) -> Result<GateSpec> {
    let stochastic = tok.starts_with("gate(");
    let inner = tok
        .split_once('(')
        .and_then(|(_, r)| r.strip_suffix(')'))
        .ok_or(VibError::Config { key: "gate".into(), message: format!("malformed '{tok}'") })?;
    let (w, bc) = inner.split_once(',').ok_or(VibError::Config {
        key: "gate".into(),
        message: format!("malformed '{tok}'"),
    })?;
    let width = w.parse::<usize>().map_err(|_| VibError::Config {
        key: "gate".into(),
        message: format!("bad width in '{tok}'"),
    })?;
    let broadcast = match bc {
        "neuron" => Broadcast::PerNeuron,
        "channel" => Broadcast::PerChannel,
        other => {
            return Err(VibError::Config {
                key: "gate".into(),
                message: format!("unknown broadcast '{other}'"),
            })
        }
    };
    Ok(GateSpec { width, broadcast, stochastic })
}

/// Rebuild the structural skeleton (zero-valued parameters) from a
/// descriptor produced by `describe`.
pub fn parse_descriptor(desc: &str) -> Result<Network> {
    let mut input_shape: Option<Vec<usize>> = None;
    let mut input_gate: Option<GateSpec> = None;
    let mut blocks: Vec<(Vec<Layer>, GateSpec, Option<usize>)> = Vec::new();
    let mut head: Option<(AffineLayer, Likelihood)> = None;
    for part in desc.split(';') {
        let (tag, body) = part.split_once(':').ok_or(VibError::Config {
            key: "arch".into(),
            message: format!("malformed section '{part}'"),
        })?;
        match tag {
            "in" => {
                let dims: Result<Vec<usize>> = body
                    .split('x')
                    .map(|d| {
                        d.parse::<usize>().map_err(|_| VibError::Config {
                            key: "arch.in".into(),
                            message: format!("bad dim '{d}'"),
                        })
                    })
                    .collect();
                input_shape = Some(dims?);
            }
            "igate" => {
                input_gate = Some(parse_gate_token(body)?);
            }
            t if t.starts_with("block") => {
                let (body, side) = match body.split_once('@') {
                    Some((b, s)) => (
                        b,
                        Some(s.parse::<usize>().map_err(|_| VibError::Config {
                            key: "arch.block".into(),
                            message: format!("bad side '{s}'"),
                        })?),
                    ),
                    None => (body, None),
                };
                let mut layers = Vec::new();
                let mut gate = None;
                for tok in body.split('+') {
                    if tok == "relu" {
                        layers.push(Layer::Relu);
                    } else if tok.starts_with("affine(") {
                        let args = parse_usize_args(tok, "arch.affine")?;
                        layers.push(Layer::Affine(AffineLayer {
                            weight: Tensor::zeros(&[args[1], args[0]]),
                            bias: Tensor::zeros(&[args[1]]),
                        }));
                    } else if tok.starts_with("conv(") {
                        let args = parse_usize_args(tok, "arch.conv")?;
                        layers.push(Layer::Conv2d(Conv2dLayer {
                            weight: Tensor::zeros(&[args[1], args[0], args[2], args[2]]),
                            bias: Tensor::zeros(&[args[1]]),
                            stride: args[3],
                            padding: args[4],
                        }));
                    } else if tok.starts_with("bn(") {
                        let args = parse_usize_args(tok, "arch.bn")?;
                        layers.push(Layer::BatchNorm(BatchNormLayer::new(args[0])));
                    } else if tok.starts_with("gate(") || tok.starts_with("scale(") {
                        gate = Some(parse_gate_token(tok)?);
                    } else {
                        return Err(VibError::Config {
                            key: "arch".into(),
                            message: format!("unknown layer token '{tok}'"),
                        });
                    }
                }
                let gate = gate.ok_or(VibError::Config {
                    key: "arch".into(),
                    message: format!("block '{part}' has no gate"),
                })?;
                blocks.push((layers, gate, side));
            }
            "head" => {
                let (aff, lik) = body.split_once('+').ok_or(VibError::Config {
                    key: "arch.head".into(),
                    message: format!("malformed head '{body}'"),
                })?;
                let args = parse_usize_args(aff, "arch.head")?;
                let likelihood = match lik {
                    "softmax" => Likelihood::CategoricalSoftmax,
                    "gaussian" => Likelihood::Gaussian,
                    other => {
                        return Err(VibError::Config {
                            key: "arch.head".into(),
                            message: format!("unknown likelihood '{other}'"),
                        })
                    }
                };
                head = Some((
                    AffineLayer {
                        weight: Tensor::zeros(&[args[1], args[0]]),
                        bias: Tensor::zeros(&[args[1]]),
                    },
                    likelihood,
                ));
            }
            other => {
                return Err(VibError::Config {
                    key: "arch".into(),
                    message: format!("unknown section '{other}'"),
                })
            }
        }
    }
    let input_shape = input_shape.ok_or(VibError::Config {
        key: "arch".into(),
        message: "missing 'in:' section".into(),
    })?;
    let (head, likelihood) = head.ok_or(VibError::Config {
        key: "arch".into(),
        message: "missing 'head:' section".into(),
    })?;
    let make_gate = |spec: &GateSpec| {
        if spec.stochastic {
            GateSlot::Stochastic(VibGate {
                mu: vec![0.0; spec.width],
                log_sigma2: vec![0.0; spec.width],
                gamma: 0.0,
                broadcast: spec.broadcast,
            })
        } else {
            GateSlot::Fixed { multipliers: vec![0.0; spec.width], broadcast: spec.broadcast }
        }
    };
    Ok(Network {
        input_shape,
        input_gate: input_gate.as_ref().map(make_gate),
        input_select: None,
        blocks: blocks
            .into_iter()
            .map(|(layers, gate, conv_side)| Block { layers, gate: make_gate(&gate), conv_side })
            .collect(),
        head,
        likelihood,
        count_input_gate_in_depth: false,
    })
}

fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
}

fn gate_arrays(prefix: &str, g: &GateSlot, arrays: &mut BTreeMap<String, Tensor>) {
    match g {
        GateSlot::Stochastic(g) => {
            arrays.insert(format!("{prefix}.mu"), vec_tensor(&g.mu));
            arrays.insert(format!("{prefix}.log_sigma2"), vec_tensor(&g.log_sigma2));
        }
        GateSlot::Fixed { multipliers, .. } => {
            arrays.insert(format!("{prefix}.multipliers"), vec_tensor(multipliers));
        }
    }
}

/// Snapshot a network into a checkpoint.
pub fn from_network(net: &Network, seed: u64, epoch: u32) -> Checkpoint {
    let mut arrays = BTreeMap::new();
    if let Some(g) = &net.input_gate {
        gate_arrays("input_gate", g, &mut arrays);
    }
    if let Some(sel) = &net.input_select {
        arrays
            .insert("input_select".into(), vec_tensor(&sel.iter().map(|&i| i as f64).collect::<Vec<_>>()));
    }
    for (bi, b) in net.blocks.iter().enumerate() {
        for (li, l) in b.layers.iter().enumerate() {
            let p = format!("block{bi}.layer{li}");
            match l {
                Layer::Affine(a) => {
                    arrays.insert(format!("{p}.weight"), a.weight.clone());
                    arrays.insert(format!("{p}.bias"), a.bias.clone());
                }
                Layer::Conv2d(c) => {
                    arrays.insert(format!("{p}.weight"), c.weight.clone());
                    arrays.insert(format!("{p}.bias"), c.bias.clone());
                }
                Layer::BatchNorm(bn) => {
                    arrays.insert(format!("{p}.scale"), bn.scale.clone());
                    arrays.insert(format!("{p}.shift"), bn.shift.clone());
                    arrays.insert(format!("{p}.running_mean"), bn.running_mean.clone());
                    arrays.insert(format!("{p}.running_var"), bn.running_var.clone());
                }
                Layer::Relu => {}
            }
        }
        gate_arrays(&format!("block{bi}.gate"), &b.gate, &mut arrays);
    }
    arrays.insert("head.weight".into(), net.head.weight.clone());
    arrays.insert("head.bias".into(), net.head.bias.clone());
    Checkpoint { arch: describe(net), seed, epoch, arrays }
}

/// Reconstruct a network from a checkpoint.
pub fn to_network(ckpt: &Checkpoint) -> Result<Network> {
    let mut net = parse_descriptor(&ckpt.arch)?;
    let get = |name: &str| -> Result<&Tensor> {
        ckpt.arrays.get(name).ok_or_else(|| VibError::Parse {
            offset: 0,
            message: format!("checkpoint missing array '{name}'"),
        })
    };
    let fill_gate = |g: &mut GateSlot, prefix: &str, ckpt: &Checkpoint| -> Result<()> {
        match g {
            GateSlot::Stochastic(g) => {
                g.mu = ckpt
                    .arrays
                    .get(&format!("{prefix}.mu"))
                    .ok_or_else(|| VibError::Parse {
                        offset: 0,
                        message: format!("checkpoint missing array '{prefix}.mu'"),
                    })?
                    .data()
                    .to_vec();
                g.log_sigma2 = ckpt
                    .arrays
                    .get(&format!("{prefix}.log_sigma2"))
                    .ok_or_else(|| VibError::Parse {
                        offset: 0,
                        message: format!("checkpoint missing array '{prefix}.log_sigma2'"),
                    })?
                    .data()
                    .to_vec();
            }
            GateSlot::Fixed { multipliers, .. } => {
                *multipliers = ckpt
                    .arrays
                    .get(&format!("{prefix}.multipliers"))
                    .ok_or_else(|| VibError::Parse {
                        offset: 0,
                        message: format!("checkpoint missing array '{prefix}.multipliers'"),
                    })?
                    .data()
                    .to_vec();
            }
        }
        Ok(())
    };
    if let Some(g) = net.input_gate.as_mut() {
        fill_gate(g, "input_gate", ckpt)?;
    }
    if let Some(sel) = ckpt.arrays.get("input_select") {
        net.input_select = Some(sel.data().iter().map(|&v| v as usize).collect());
    }
    for (bi, b) in net.blocks.iter_mut().enumerate() {
        for (li, l) in b.layers.iter_mut().enumerate() {
            let p = format!("block{bi}.layer{li}");
            match l {
                Layer::Affine(a) => {
                    a.weight = get(&format!("{p}.weight"))?.clone();
                    a.bias = get(&format!("{p}.bias"))?.clone();
                }
                Layer::Conv2d(c) => {
                    c.weight = get(&format!("{p}.weight"))?.clone();
                    c.bias = get(&format!("{p}.bias"))?.clone();
                }
                Layer::BatchNorm(bn) => {
                    bn.scale = get(&format!("{p}.scale"))?.clone();
                    bn.shift = get(&format!("{p}.shift"))?.clone();
                    bn.running_mean = get(&format!("{p}.running_mean"))?.clone();
                    bn.running_var = get(&format!("{p}.running_var"))?.clone();
                }
                Layer::Relu => {}
            }
        }
        fill_gate(&mut b.gate, &format!("block{bi}.gate"), ckpt)?;
    }
    net.head.weight = get("head.weight")?.clone();
    net.head.bias = get("head.bias")?.clone();
    Ok(net)
}
