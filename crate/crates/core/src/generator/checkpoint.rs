//! Binary checkpoint of a generator's trainables.
//!
//! Frozen weights are regenerated from the stored seed, so a checkpoint holds
//! only what cannot be recomputed. Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "TDIPCKPT"
//! version      u32      1
//! scalar_bytes u8       4 (f32) or 8 (f64)
//! scales, channels, skip_channels, kernel, latent_channels   5 x u32
//! leaky_slope  f64
//! height, width        2 x u32
//! seed         u64
//! n_params     u64
//! params       n_params x scalar
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, GeneratorState, HourglassConfig, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"TDIPCKPT";
pub const VERSION: u32 = 1;

pub fn encode<S: Scalar>(state: &GeneratorState<S>) -> Vec<u8> {
    let c = &state.config;
    let Activation::LeakyRelu(slope) = c.activation;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::BYTES);
    for v in [c.scales, c.channels, c.skip_channels, c.kernel, c.latent_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&slope.to_le_bytes());
    out.extend_from_slice(&(state.dims.0 as u32).to_le_bytes());
    out.extend_from_slice(&(state.dims.1 as u32).to_le_bytes());
    out.extend_from_slice(&state.seed.to_le_bytes());
    let p = state.params().as_slice();
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for &v in p {
        out.extend(v.to_le_bytes_vec());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<S: Scalar>(buf: &[u8]) -> Result<GeneratorState<S>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.take(1)?[0];
    if width != S::BYTES {
        return Err(Error::Checkpoint(format!(
            "stored {width}-byte scalars, expected {}",
            S::BYTES
        )));
    }
    let mut f = [0usize; 5];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let slope = f64::from_bits(r.u64()?);
    let dims = (r.u32()? as usize, r.u32()? as usize);
    let seed = r.u64()?;
    let n = r.u64()? as usize;
    let cfg = HourglassConfig {
        scales: f[0],
        channels: f[1],
        skip_channels: f[2],
        kernel: f[3],
        latent_channels: f[4],
        activation: Activation::LeakyRelu(slope),
        ..Default::default()
    };
    let mut state = GeneratorState::new(cfg, dims, seed)?;
    let bytes = r.take(n * S::BYTES as usize)?;
    let params: Vec<S> = bytes.chunks_exact(S::BYTES as usize).map(S::from_le_slice).collect();
    state.set_params(&ParamVector::new(params))?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(state)
}

pub fn save<S: Scalar>(state: &GeneratorState<S>, path: &Path) -> Result<()> {
    fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: &Path) -> Result<GeneratorState<S>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HourglassConfig {
        HourglassConfig {
            scales: 1,
            channels: 4,
            skip_channels: 1,
            latent_channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_restores_weights_and_trainables() {
        let mut g = GeneratorState::<f32>::new(small(), (4, 6), 77).unwrap();
        let mut p = g.get_params();
        p.as_mut_slice()[3] = 42.5;
        g.set_params(&p).unwrap();
        let back: GeneratorState<f32> = decode(&encode(&g)).unwrap();
        assert_eq!(back.frozen_checksum(), g.frozen_checksum());
        assert_eq!(back.get_params(), g.get_params());
        assert_eq!(back.config, g.config);
    }

    #[test]
    fn rejects_corruption() {
        let g = GeneratorState::<f64>::new(small(), (4, 4), 1).unwrap();
        let buf = encode(&g);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
        assert!(decode::<f64>(&buf[..buf.len() - 1]).is_err());
        assert!(decode::<f32>(&buf).is_err());
        let mut v2 = buf.clone();
        v2[8] = 2;
        assert!(decode::<f64>(&v2).is_err());
    }
}
