//! Binary model checkpoint.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "HCVAECK\0"
//! version      u32       currently 1
//! conditional  u8        0 or 1
//! x_dim        u32
//! k_dim        u32
//! latent_dim   u32
//! seed         u64
//! encoder      network
//! decoder      network
//! x_mean       x_dim  x f64
//! x_scale      x_dim  x f64
//! k_mean       k_dim  x f64
//! k_scale      k_dim  x f64
//!
//! network:     u32 layer count, then per layer
//!              u32 in, u32 out, u8 activation (0 identity, 1 relu),
//!              out*in f64 weights (row-major, out x in), out f64 bias
//! ```
//!
//! Nothing may follow the last field.

use std::path::Path;

use super::model::{CvaeModel, FeatureScaling};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Matrix, MlpParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HCVAECK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_DIM: u32 = 1 << 20;
const MAX_LAYERS: u32 = 64;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let v = self.u32(what)?;
        if v > MAX_DIM {
            return Err(Error::Checkpoint(format!("{what} = {v} exceeds limit")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint(format!("{what} too large")))?;
        let raw = self.take(bytes, what)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in {what}")));
        }
        Ok(values)
    }

    fn network(&mut self, what: &str) -> Result<MlpParams> {
        let count = self.u32(what)?;
        if count == 0 || count > MAX_LAYERS {
            return Err(Error::Checkpoint(format!("{what}: bad layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for i in 0..count {
            let input = self.dim(what)?;
            let output = self.dim(what)?;
            let tag = self.u8(what)?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| Error::Checkpoint(format!("{what} layer {i}: activation tag {tag}")))?;
            let weights = self.f64s(
                input
                    .checked_mul(output)
                    .ok_or_else(|| Error::Checkpoint("layer too large".into()))?,
                what,
            )?;
            let bias = self.f64s(output, what)?;
            layers.push(Layer {
                weight: Matrix::from_vec(output, input, weights)?,
                bias,
                activation,
            });
        }
        MlpParams::new(layers).map_err(|e| Error::Checkpoint(format!("{what}: {e}")))
    }
}

fn put_network(out: &mut Vec<u8>, net: &MlpParams) {
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
        out.push(layer.activation.tag());
        put_f64s(out, layer.weight.as_slice());
        put_f64s(out, &layer.bias);
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl CvaeModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(u8::from(self.is_conditional()));
        out.extend_from_slice(&(self.x_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.k_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.latent_dim() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_network(&mut out, &self.encoder);
        put_network(&mut out, &self.decoder);
        put_f64s(&mut out, &self.scaling.x_mean);
        put_f64s(&mut out, &self.scaling.x_scale);
        put_f64s(&mut out, &self.scaling.k_mean);
        put_f64s(&mut out, &self.scaling.k_scale);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let conditional = match r.u8("conditional flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::Checkpoint(format!("bad conditional flag {other}"))),
        };
        let x_dim = r.dim("x_dim")?;
        let k_dim = r.dim("k_dim")?;
        let latent_dim = r.dim("latent_dim")?;
        let seed = r.u64("seed")?;
        let encoder = r.network("encoder")?;
        let decoder = r.network("decoder")?;
        let scaling = FeatureScaling {
            x_mean: r.f64s(x_dim, "x_mean")?,
            x_scale: r.f64s(x_dim, "x_scale")?,
            k_mean: r.f64s(k_dim, "k_mean")?,
            k_scale: r.f64s(k_dim, "k_scale")?,
        };
        if scaling
            .x_scale
            .iter()
            .chain(&scaling.k_scale)
            .any(|s| *s <= 0.0)
        {
            return Err(Error::Checkpoint("scales must be positive".into()));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        CvaeModel::from_parts(
            encoder,
            decoder,
            scaling,
            x_dim,
            k_dim,
            latent_dim,
            conditional,
            seed,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
