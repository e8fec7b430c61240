//! MergeNet parameters and their binary interchange format.
//!
//! All values little-endian:
//!
//! ```text
//! magic    "MRGN"
//! version  u32 (= 1)
//! layers   u32
//! per layer:
//!   out, in, kh, kw   u32 × 4
//!   kernel            f32 × out·in·kh·kw, row-major (out, in, kh, kw)
//!   bias              f32 × out
//! ```
//!
//! Input channel `a·C + c` of the first layer is channel `c` of the proposal
//! from augmentation `a`.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MRGN";
pub const VERSION: u32 = 1;
pub const KERNEL_SIZE: usize = 3;
pub const DEFAULT_LAYERS: usize = 8;
pub const DEFAULT_HIDDEN: usize = 64;
/// Sanity bound on any single dimension read from a file.
const MAX_DIM: u32 = 4096;
const MAX_LAYERS: u32 = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel: vec![0.0; out_channels * in_channels * KERNEL_SIZE * KERNEL_SIZE],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.kernel[((o * self.in_channels + i) * KERNEL_SIZE + ky) * KERNEL_SIZE + kx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergeWeights {
    pub layers: Vec<ConvLayer>,
    /// Apply ReLU after the last layer too. Off by default so the residual
    /// can darken pixels; the `relu-head` feature flips the default.
    pub relu_head: bool,
}

fn fmt_err(layer: Option<usize>, message: impl Into<String>) -> Error {
    Error::WeightFormat {
        layer,
        message: message.into(),
    }
}

impl MergeWeights {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        let w = Self {
            layers,
            relu_head: cfg!(feature = "relu-head"),
        };
        w.validate()?;
        Ok(w)
    }

    /// All-zero weights with the standard plan for `channels`-channel frames.
    pub fn zeros(channels: usize, hidden: usize, layers: usize) -> Self {
        assert!(layers >= 1);
        let inputs = 16 * channels;
        let ls = (0..layers)
            .map(|l| {
                let i = if l == 0 { inputs } else { hidden };
                let o = if l + 1 == layers { channels } else { hidden };
                ConvLayer::zeros(o, i)
            })
            .collect();
        Self {
            layers: ls,
            relu_head: cfg!(feature = "relu-head"),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    /// Receptive field side length of the stack.
    pub fn receptive_field(&self) -> usize {
        1 + self.layers.len() * (KERNEL_SIZE - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(fmt_err(None, "no layers"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let k = KERNEL_SIZE * KERNEL_SIZE;
            if layer.out_channels == 0 || layer.in_channels == 0 {
                return Err(fmt_err(Some(l), "zero channels"));
            }
            if layer.kernel.len() != layer.out_channels * layer.in_channels * k
                || layer.bias.len() != layer.out_channels
            {
                return Err(fmt_err(Some(l), "parameter count does not match shape"));
            }
            if l > 0 && layer.in_channels != self.layers[l - 1].out_channels {
                return Err(fmt_err(
                    Some(l),
                    format!(
                        "takes {} channels but layer {} gives {}",
                        layer.in_channels,
                        l - 1,
                        self.layers[l - 1].out_channels
                    ),
                ));
            }
            if layer.kernel.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(fmt_err(Some(l), "non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for d in [l.out_channels, l.in_channels, KERNEL_SIZE, KERNEL_SIZE] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in l.kernel.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).ok_or_else(|| fmt_err(None, "truncated header"))?;
        if magic != MAGIC {
            return Err(fmt_err(None, format!("bad magic {magic:?}")));
        }
        let version = r.u32().ok_or_else(|| fmt_err(None, "truncated header"))?;
        if version != VERSION {
            return Err(fmt_err(None, format!("unsupported version {version}")));
        }
        let count = r.u32().ok_or_else(|| fmt_err(None, "truncated header"))?;
        if count == 0 || count > MAX_LAYERS {
            return Err(fmt_err(None, format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for l in 0..count as usize {
            let mut dims = [0u32; 4];
            for d in &mut dims {
                *d = r.u32().ok_or_else(|| fmt_err(Some(l), "truncated shape"))?;
            }
            let [o, i, kh, kw] = dims;
            if kh as usize != KERNEL_SIZE || kw as usize != KERNEL_SIZE {
                return Err(fmt_err(Some(l), format!("kernel is {kh}x{kw}, expected 3x3")));
            }
            if o == 0 || i == 0 || o > MAX_DIM || i > MAX_DIM {
                return Err(fmt_err(Some(l), format!("implausible shape {o}x{i}")));
            }
            let nk = (o * i * kh * kw) as usize;
            let kernel = r.f32s(nk).ok_or_else(|| fmt_err(Some(l), "truncated kernel"))?;
            let bias = r.f32s(o as usize).ok_or_else(|| fmt_err(Some(l), "truncated bias"))?;
            layers.push(ConvLayer {
                out_channels: o as usize,
                in_channels: i as usize,
                kernel,
                bias,
            });
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(None, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Self::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingResource(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.take(n.checked_mul(4)?)?;
        Some(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}
