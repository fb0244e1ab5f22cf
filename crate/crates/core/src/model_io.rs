//! Self-describing binary model files.
//!
//! Layout, all integers little-endian:
//!
//! | field         | type                          |
//! |---------------|-------------------------------|
//! | magic         | `b"DFSM"`                     |
//! | version       | `u32` (currently 1)           |
//! | scalar bytes  | `u32` (4 = f32, 8 = f64)      |
//! | config length | `u32`                         |
//! | config        | UTF-8 canonical TOML          |
//! | tensor count  | `u32`                         |
//! | per tensor    | `u32 rows`, `u32 cols`, `rows*cols` LE scalars |
//!
//! Tensors appear in [`NetworkParams::tensors`] order.

use std::fs;
use std::path::Path;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::tensor::{Matrix, Precision, Real};

pub const MODEL_MAGIC: [u8; 4] = *b"DFSM";
pub const MODEL_VERSION: u32 = 1;

/// A loaded model in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyParams {
    F32(NetworkParams<f32>),
    F64(NetworkParams<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub config: NetworkConfig,
    pub params: AnyParams,
}

impl LoadedModel {
    pub fn num_scalars(&self) -> usize {
        match &self.params {
            AnyParams::F32(p) => p.num_scalars(),
            AnyParams::F64(p) => p.num_scalars(),
        }
    }
}

pub fn encode_model<T: Real>(params: &NetworkParams<T>, cfg: &NetworkConfig) -> Result<Vec<u8>> {
    if cfg.precision != T::PRECISION {
        return Err(Error::Precision(format!(
            "config says {:?}, parameters are {:?}",
            cfg.precision,
            T::PRECISION
        )));
    }
    params.check_shapes(cfg)?;
    let text = cfg.to_toml();
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(32 + text.len() + params.num_scalars() * T::PRECISION.bytes());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(T::PRECISION.bytes() as u32).to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (_, m) in tensors {
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for &v in m.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save_model<T: Real>(params: &NetworkParams<T>, cfg: &NetworkConfig, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(params, cfg)?)?;
    Ok(())
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{}: needed {n} bytes at offset {}, only {} left",
                self.what,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_params<T: Real>(r: &mut Reader<'_>, cfg: &NetworkConfig) -> Result<NetworkParams<T>> {
    let count = r.u32()? as usize;
    let mut params = NetworkParams::<T>::zeros(cfg);
    let expected = params.tensors().len();
    if count != expected {
        return Err(Error::Malformed(format!("config implies {expected} tensors, file has {count}")));
    }
    for (k, (class, m)) in params.tensors_mut().into_iter().enumerate() {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != m.shape() {
            return Err(Error::Malformed(format!(
                "tensor {k} ({class}) is {rows}x{cols}, config implies {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let width = T::PRECISION.bytes();
        let raw = r.take(rows * cols * width)?;
        *m = Matrix::new(rows, cols, raw.chunks_exact(width).map(T::read_le).collect())?;
    }
    Ok(params)
}

pub fn decode_model(bytes: &[u8]) -> Result<LoadedModel> {
    let mut r = Reader::new(bytes, "model file");
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let width = r.u32()?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| Error::Malformed(format!("config block is not UTF-8: {e}")))?;
    let config = NetworkConfig::parse(text)?;
    let params = match (width, config.precision) {
        (4, Precision::F32) => AnyParams::F32(read_params(&mut r, &config)?),
        (8, Precision::F64) => AnyParams::F64(read_params(&mut r, &config)?),
        (w, p) => {
            return Err(Error::Malformed(format!(
                "scalar width {w} does not match config precision {p:?}"
            )))
        }
    };
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(LoadedModel { config, params })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    decode_model(&fs::read(path)?)
}

/// Load a model stored in precision `T`.
pub fn load_model_as<T: Real>(path: impl AsRef<Path>) -> Result<(NetworkParams<T>, NetworkConfig)> {
    let loaded = load_model(path)?;
    let found = loaded.config.precision;
    let any: Box<dyn std::any::Any> = match loaded.params {
        AnyParams::F32(p) => Box::new(p),
        AnyParams::F64(p) => Box::new(p),
    };
    match any.downcast::<NetworkParams<T>>() {
        Ok(p) => Ok((*p, loaded.config)),
        Err(_) => Err(Error::Precision(format!(
            "model is stored as {found:?}, requested {:?}",
            T::PRECISION
        ))),
    }
}
