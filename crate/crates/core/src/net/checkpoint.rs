//! Parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u32            format version (1)
//! u32            number of widths, L + 1
//! u32 x (L + 1)  widths, input first
//! per layer:     fan_out * fan_in weights (row-major f64), then fan_out biases (f64)
//! ```

use std::fs;
use std::path::Path;

use super::{Layer, MlpParams, NetError, Real};

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(params: &MlpParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * params.widths().len() + 8 * params.num_params());
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.widths().len() as u32).to_le_bytes());
    for &w in params.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for layer in params.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            out.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| NetError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<MlpParams<T>, NetError> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    if n > 1 << 16 {
        return Err(NetError::Checkpoint(format!("implausible width count {n}")));
    }
    let widths = (0..n).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>, _>>()?;
    let mut params = MlpParams::<T>::zeros(&widths)?;
    for layer in params.layers_mut() {
        let Layer { weights, bias, .. } = layer;
        for v in weights.iter_mut().chain(bias.iter_mut()) {
            *v = T::of(r.f64()?);
        }
    }
    if r.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &MlpParams<T>, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, encode_checkpoint(params))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<MlpParams<T>, NetError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
    decode_checkpoint(&bytes)
}
