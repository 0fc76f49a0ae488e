//! Flat binary model checkpoints.
//!
//! Layout: the magic string `CGMM1`, a little-endian u32 layer count, then
//! per layer a u32 row count, a u32 column count, row-major little-endian
//! f64 weights, and f64 biases. The mixture parameters follow in the same
//! float encoding: weights, means, covariances, in that order; their shape
//! is inferred from the first and last layer. A layer count of zero marks a
//! mixture-only checkpoint and is followed by explicit u32 `k` and `dim`
//! fields before the floats.

use crate::error::{Error, Result};
use crate::mixture::MixtureParams;
use crate::network::{Layer, NetworkParams};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"CGMM1";
const MAX_LAYERS: u32 = 1024;
const MAX_WIDTH: u32 = 1 << 20;

/// A trained model: an optional posterior network plus mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Option<NetworkParams>,
    pub mixture: MixtureParams,
}

impl Checkpoint {
    pub fn k(&self) -> usize {
        self.mixture.k()
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(checkpoint: &Checkpoint) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    match &checkpoint.network {
        Some(net) => {
            buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
            for layer in net.layers() {
                buf.extend_from_slice(&(layer.input_dim as u32).to_le_bytes());
                buf.extend_from_slice(&(layer.output_dim as u32).to_le_bytes());
                push_f64s(&mut buf, &layer.weights);
                push_f64s(&mut buf, &layer.bias);
            }
        }
        None => {
            buf.extend_from_slice(&0u32.to_le_bytes());
            buf.extend_from_slice(&(checkpoint.mixture.k() as u32).to_le_bytes());
            buf.extend_from_slice(&(checkpoint.mixture.dim() as u32).to_le_bytes());
        }
    }
    push_f64s(&mut buf, checkpoint.mixture.weights());
    push_f64s(&mut buf, checkpoint.mixture.means());
    push_f64s(&mut buf, checkpoint.mixture.covariances());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let layer_count = r.u32()?;
    if layer_count > MAX_LAYERS {
        return Err(Error::Checkpoint(format!("implausible layer count {layer_count}")));
    }

    let network;
    let (k, dim);
    if layer_count == 0 {
        k = r.u32()? as usize;
        dim = r.u32()? as usize;
        network = None;
    } else {
        let mut layers = Vec::with_capacity(layer_count as usize);
        for _ in 0..layer_count {
            let rows = r.u32()?;
            let cols = r.u32()?;
            if rows == 0 || cols == 0 || rows > MAX_WIDTH || cols > MAX_WIDTH {
                return Err(Error::Checkpoint(format!("implausible layer shape {rows}x{cols}")));
            }
            let weights = r.f64s(rows as usize * cols as usize)?;
            let bias = r.f64s(cols as usize)?;
            layers.push(Layer {
                input_dim: rows as usize,
                output_dim: cols as usize,
                weights,
                bias,
            });
        }
        dim = layers[0].input_dim;
        k = layers.last().unwrap().output_dim;
        network = Some(NetworkParams::from_layers(layers)?);
    }

    if k == 0 || dim == 0 || k > MAX_WIDTH as usize || dim > MAX_WIDTH as usize {
        return Err(Error::Checkpoint(format!("implausible mixture shape k={k} dim={dim}")));
    }
    let weights = r.f64s(k)?;
    let means = r.f64s(k * dim)?;
    let covariances = r.f64s(k * dim * dim)?;
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mixture = MixtureParams::new(k, dim, weights, means, covariances)
        .map_err(|e| Error::Checkpoint(format!("invalid mixture parameters: {e}")))?;
    Ok(Checkpoint { network, mixture })
}

pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode(checkpoint))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
