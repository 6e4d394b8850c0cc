//! Dataset ingestion: IDX container parsing (bit-exact), MNIST loading,
//! and synthetic Gaussian-blob datasets for fast experiments.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Result, VibError};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Normalization applied to raw bytes: value = (raw - offset) * scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub offset: f64,
    pub scale: f64,
}

impl NormRecord {
    /// Invert: raw = value / scale + offset.
    pub fn denormalize(&self, value: f64) -> f64 {
        value / self.scale + self.offset
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// (n, d) flat feature rows.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub norm: NormRecord,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.images.row_len()
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    if offset + 4 > bytes.len() {
        return Err(VibError::Parse {
            offset,
            message: format!("expected 4 bytes, file has {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parse an IDX container. Image files (magic 0x00000803) are mapped to
/// floats in [0, 1] by dividing by 255; label files (magic 0x00000801)
/// keep raw byte values.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    let ndim = match magic {
        IDX_MAGIC_IMAGES => 3usize,
        IDX_MAGIC_LABELS => 1usize,
        other => {
            return Err(VibError::Parse {
                offset: 0,
                message: format!("bad IDX magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        dims.push(read_u32_be(bytes, 4 + 4 * i)? as usize);
    }
    let header = 4 + 4 * ndim;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(VibError::Parse { offset: 4, message: "dimension product overflows".into() })?;
    if bytes.len() != header + count {
        return Err(VibError::Parse {
            offset: header,
            message: format!("payload is {} bytes, dims {dims:?} need {count}", bytes.len() - header),
        });
    }
    let scale = if magic == IDX_MAGIC_IMAGES { 1.0 / 255.0 } else { 1.0 };
    let data: Vec<f64> = bytes[header..].iter().map(|&b| b as f64 * scale).collect();
    Tensor::from_vec(&dims, data)
}

/// Serialize a tensor back into IDX bytes, inverting `parse_idx`'s scaling.
pub fn write_idx(tensor: &Tensor, magic: u32) -> Result<Vec<u8>> {
    let expect_ndim = match magic {
        IDX_MAGIC_IMAGES => 3,
        IDX_MAGIC_LABELS => 1,
        other => {
            return Err(VibError::Input(format!("unsupported IDX magic 0x{other:08x}")))
        }
    };
    if tensor.shape().len() != expect_ndim {
        return Err(VibError::Dim {
            context: "write_idx",
            expected: format!("{expect_ndim} dimensions"),
            got: format!("{:?}", tensor.shape()),
        });
    }
    let scale = if magic == IDX_MAGIC_IMAGES { 255.0 } else { 1.0 };
    let mut out = Vec::with_capacity(4 + 4 * expect_ndim + tensor.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in tensor.data() {
        let raw = (v * scale).round();
        if !(0.0..=255.0).contains(&raw) {
            return Err(VibError::Input(format!("value {v} does not map to a byte")));
        }
        out.push(raw as u8);
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })?
        .read_to_end(&mut bytes)
        .map_err(|e| VibError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(bytes)
}

/// Read an IDX file, transparently gunzipping `.gz` paths.
fn read_idx_file(dir: &Path, stem: &str) -> Result<Vec<u8>> {
    let plain = dir.join(stem);
    if plain.exists() {
        return read_file(&plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        let raw = read_file(&gz)?;
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| VibError::Io { path: gz.display().to_string(), message: e.to_string() })?;
        return Ok(out);
    }
    Err(VibError::Io {
        path: plain.display().to_string(),
        message: "file not found (nor a .gz variant); see scripts/fetch_mnist.sh".into(),
    })
}

/// Load an MNIST split from a directory holding the canonical IDX files.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = parse_idx(&read_idx_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels_t = parse_idx(&read_idx_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    let n = images.shape()[0];
    let d = images.row_len();
    if labels_t.shape() != [n] {
        return Err(VibError::Input(format!(
            "images ({n}) and labels ({:?}) disagree",
            labels_t.shape()
        )));
    }
    let labels: Vec<usize> = labels_t.data().iter().map(|&v| v as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(VibError::Input(format!("label {bad} out of range 0..10")));
    }
    Ok(Dataset {
        images: images.reshaped(&[n, d])?,
        labels,
        split,
        norm: NormRecord { offset: 0.0, scale: 1.0 / 255.0 },
        num_classes: 10,
    })
}

/// Gaussian clusters with controlled separation. Class centers sit on
/// scaled coordinate axes when classes <= dim (pairwise distance
/// separation * sqrt(2)); with more classes than dimensions they spread
/// over a ring in the first two coordinates (or evenly on the line for
/// dim = 1). Unit within-class standard deviation, so `separation` is in
/// sigma units.
pub fn synthetic_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 || n < classes {
        return Err(VibError::Input(format!(
            "need n >= classes >= 1 and dim >= 1, got n={n} classes={classes} dim={dim}"
        )));
    }
    let mut rng = RandomSource::new(seed);
    let mut centers = vec![vec![0.0; dim]; classes];
    if classes <= dim {
        for (c, center) in centers.iter_mut().enumerate() {
            center[c] = separation;
        }
    } else if dim == 1 {
        for (c, center) in centers.iter_mut().enumerate() {
            center[0] = separation * (c as f64 - (classes as f64 - 1.0) / 2.0);
        }
    } else {
        for (c, center) in centers.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            center[0] = separation * angle.cos();
            center[1] = separation * angle.sin();
        }
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for j in 0..dim {
            data.push(centers[c][j] + rng.standard_normal());
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(&[n, dim], data)?,
        labels,
        split: Split::Train,
        norm: NormRecord { offset: 0.0, scale: 1.0 },
        num_classes: classes,
    })
}
