//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic      8 bytes   "PALCKPT\0"
//! version    u32       FORMAT_VERSION
//! meta_len   u32
//! meta       meta_len bytes of JSON (CheckpointMeta)
//! count      u32       number of tensors
//! table      count entries:
//!              name_len u16, name bytes (UTF-8),
//!              dtype u8 (0 = f32, 1 = f64), rank u8, dims u64 * rank,
//!              offset u64 (from start of data), byte_len u64
//! data       concatenated tensor bytes in table order
//! crc        u32       CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Tensor names: `raw/<param>`, `ema/<param>`, `adam_m/<param>`,
//! `adam_v/<param>` and `schedule/betas` (f64).

use std::fs;
use std::path::Path;

use palette_core::denoiser::{ArchitectureConfig, UNet};
use palette_core::optim::AdamState;
use palette_core::rng::RngState;
use palette_core::train::{TrainConfig, TrainState};
use palette_core::{NoiseSchedule, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PALCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dtype: String,
    pub architecture: ArchitectureConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub adam_step: u64,
    pub noise_rng: RngState,
    pub data_rng: RngState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub architecture: ArchitectureConfig,
    pub train: TrainConfig,
    /// Training schedule, stored as its betas.
    pub schedule: NoiseSchedule,
    pub state: TrainState<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            _ => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }

    fn of<T: Real>() -> Result<Self> {
        match T::DTYPE {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            d => Err(Error::Format(format!("unsupported dtype {d}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

struct Entry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

fn encode<T: Real>(dtype: Dtype, values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.width());
    for v in values {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
    out
}

fn decode<T: Real>(dtype: Dtype, bytes: &[u8]) -> Vec<T> {
    match dtype {
        Dtype::F32 => bytes.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(net: &UNet, train: TrainConfig, state: TrainState<T>) -> Result<Self> {
        net.check_params(&state.params)?;
        net.check_params(&state.ema)?;
        let schedule = train.schedule.build()?;
        Ok(Self { architecture: net.config().clone(), train, schedule, state })
    }

    pub fn meta(&self) -> Result<CheckpointMeta> {
        Ok(CheckpointMeta {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.into(),
            architecture: self.architecture.clone(),
            train: self.train.clone(),
            step: self.state.step,
            adam_step: self.state.adam.step,
            noise_rng: self.state.noise_rng,
            data_rng: self.state.data_rng,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dtype = Dtype::of::<T>()?;
        let s = &self.state;
        let mut entries = Vec::new();
        for (prefix, store) in [("raw", &s.params), ("ema", &s.ema)] {
            for p in store.iter() {
                entries.push(Entry { name: format!("{prefix}/{}", p.name), dtype, shape: p.shape.clone(), bytes: encode(dtype, &p.data) });
            }
        }
        for (prefix, moments) in [("adam_m", &s.adam.m), ("adam_v", &s.adam.v)] {
            if moments.len() != s.params.len() {
                return Err(Error::Format("optimizer state does not match parameters".into()));
            }
            for (p, m) in s.params.iter().zip(moments) {
                entries.push(Entry { name: format!("{prefix}/{}", p.name), dtype, shape: p.shape.clone(), bytes: encode(dtype, m) });
            }
        }
        let betas = self.schedule.betas();
        entries.push(Entry { name: "schedule/betas".into(), dtype: Dtype::F64, shape: vec![betas.len()], bytes: encode(Dtype::F64, betas) });

        let meta = serde_json::to_vec(&self.meta()?)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(meta.len()).map_err(|_| Error::Format("meta too large".into()))?.to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dtype.code());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(e.bytes.len() as u64).to_le_bytes());
            offset += e.bytes.len() as u64;
        }
        for e in &entries {
            out.extend_from_slice(&e.bytes);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 4 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        if meta.dtype != T::DTYPE {
            return Err(Error::Format(format!("checkpoint holds {} parameters, requested {}", meta.dtype, T::DTYPE)));
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let dtype = Dtype::from_code(r.u8()?)?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            if len != shape.iter().product::<usize>() * dtype.width() {
                return Err(Error::Format(format!("tensor {name}: byte length {len} does not match shape {shape:?}")));
            }
            table.push((name, dtype, shape, offset, len));
        }
        let data = &body[r.pos..];
        let mut expected = 0usize;
        for (name, _, _, offset, len) in &table {
            if *offset != expected || offset + len > data.len() {
                return Err(Error::Format(format!("tensor {name}: bad offset {offset}")));
            }
            expected += len;
        }
        if expected != data.len() {
            return Err(Error::Format("trailing bytes after tensor data".into()));
        }

        let net = UNet::new(meta.architecture.clone())?;
        let mut tensors = TensorMap::new();
        for (name, dtype, shape, offset, len) in table {
            tensors.insert(name, (dtype, shape, &data[offset..offset + len]));
        }
        let mut stores = Vec::new();
        for prefix in ["raw", "ema"] {
            let mut store = palette_core::autodiff::ParamStore::new();
            for spec in net.param_specs() {
                let (dtype, bytes) = take_tensor(&mut tensors, &format!("{prefix}/{}", spec.name), Some(&spec.shape))?;
                store.add(spec.name.clone(), spec.shape.clone(), decode::<T>(dtype, bytes));
            }
            stores.push(store);
        }
        let mut moments = Vec::new();
        for prefix in ["adam_m", "adam_v"] {
            let mut m = Vec::new();
            for spec in net.param_specs() {
                let (dtype, bytes) = take_tensor(&mut tensors, &format!("{prefix}/{}", spec.name), Some(&spec.shape))?;
                m.push(decode::<T>(dtype, bytes));
            }
            moments.push(m);
        }
        let (bdtype, bbytes) = take_tensor(&mut tensors, "schedule/betas", None)?;
        if bdtype != Dtype::F64 {
            return Err(Error::Format("schedule/betas must be f64".into()));
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        let schedule = NoiseSchedule::from_betas(decode::<f64>(bdtype, bbytes))?;
        let v = moments.pop().unwrap();
        let m = moments.pop().unwrap();
        let ema = stores.pop().unwrap();
        let params = stores.pop().unwrap();
        Ok(Self {
            architecture: meta.architecture,
            train: meta.train,
            schedule,
            state: TrainState {
                step: meta.step,
                params,
                ema,
                adam: AdamState { step: meta.adam_step, m, v },
                noise_rng: meta.noise_rng,
                data_rng: meta.data_rng,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path))
    }

    pub fn net(&self) -> Result<UNet> {
        Ok(UNet::new(self.architecture.clone())?)
    }
}

type TensorMap<'a> = std::collections::HashMap<String, (Dtype, Vec<usize>, &'a [u8])>;

/// Removes a tensor from the table, checking its shape (or rank 1 when no
/// shape is given).
fn take_tensor<'a>(tensors: &mut TensorMap<'a>, name: &str, want: Option<&[usize]>) -> Result<(Dtype, &'a [u8])> {
    let (dtype, shape, bytes) = tensors.remove(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
    let ok = match want {
        Some(w) => shape == w,
        None => shape.len() == 1,
    };
    if !ok {
        return Err(Error::Format(format!("tensor {name}: unexpected shape {shape:?}")));
    }
    Ok((dtype, bytes))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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
