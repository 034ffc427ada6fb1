//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `MSHW`, then `u32` fields version,
//! element width in bytes, in_channels, base_width, depth, reduced flag,
//! padding mode, an `f64` leaky slope and a `u32` layer count; then per
//! layer `u32` cin, `u32` cout, the `cout * cin * 9` weights and the `cout`
//! biases in topology order.

use std::path::Path;

use super::layers::{Conv, Padding};
use super::model::{DenoiserModel, NetConfig};
use super::real::Real;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSHW";
const VERSION: u32 = 1;

pub fn encode<T: Real>(model: &DenoiserModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let padding = match cfg.padding {
        Padding::Zero => 0u32,
        Padding::Reflect => 1,
    };
    for v in [
        VERSION,
        T::BYTES as u32,
        cfg.in_channels as u32,
        cfg.base_width as u32,
        cfg.depth as u32,
        cfg.reduced as u32,
        padding,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.leaky_slope.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.cin as u32).to_le_bytes());
        out.extend_from_slice(&(layer.cout as u32).to_le_bytes());
        for &v in layer.weight.iter().chain(&layer.bias) {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptHeader("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<DenoiserModel<T>> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CorruptHeader("missing MSHW magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
    }
    let width = cur.u32()?;
    if width != T::BYTES {
        return Err(Error::UnsupportedFormat(format!(
            "checkpoint stores {width}-byte floats, model uses {}",
            T::BYTES
        )));
    }
    let in_channels = cur.u32()?;
    let base_width = cur.u32()?;
    let depth = cur.u32()?;
    let reduced = cur.u32()? != 0;
    let padding = match cur.u32()? {
        0 => Padding::Zero,
        1 => Padding::Reflect,
        p => return Err(Error::CorruptHeader(format!("unknown padding mode {p}"))),
    };
    let leaky_slope = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let config = NetConfig {
        in_channels,
        base_width,
        depth,
        leaky_slope,
        reduced,
        padding,
    };
    let n_layers = cur.u32()?;
    if n_layers != config.conv_shapes().len() {
        return Err(Error::CorruptHeader(format!("{n_layers} layers do not match config")));
    }
    let mut convs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let cin = cur.u32()?;
        let cout = cur.u32()?;
        let mut conv = Conv::zeros(cin, cout);
        for v in conv.weight.iter_mut().chain(conv.bias.iter_mut()) {
            *v = T::read_le(cur.take(T::BYTES)?);
        }
        convs.push(conv);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptHeader("trailing bytes after checkpoint".into()));
    }
    DenoiserModel::from_parts(config, convs)
}

pub fn save_checkpoint<T: Real>(model: &DenoiserModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<DenoiserModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
