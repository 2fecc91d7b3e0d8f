//! Binary model container shared by extractor weights, full models,
//! checkpoints and quantized models.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     "LEANMDL1"
//! u32       metadata entry count
//!   u32 key length, key bytes (UTF-8), u32 value length, value bytes (UTF-8)
//! u32       tensor count
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank × u32 dims
//!   u8  dtype (0 = f32, 1 = i8)
//!   raw data (4 bytes per f32 element, 1 byte per i8 element)
//!   i8 only: f32 scale, i32 zero point
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Elem, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"LEANMDL1";
const MAGIC_STEM: &[u8; 7] = b"LEANMDL";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8 { data: Vec<i8>, scale: f32, zero_point: i32 },
}

impl TensorData {
    pub fn tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::I8 { .. } => 1,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8 { data, .. } => data.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32<F: Elem>(name: &str, t: &Tensor<F>) -> Self {
        NamedTensor {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: TensorData::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
        }
    }

    /// Float view of the tensor; int8 data is dequantized.
    pub fn to_tensor<F: Elem>(&self) -> Result<Tensor<F>> {
        let data: Vec<F> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| F::from_f64(x as f64)).collect(),
            TensorData::I8 {
                data,
                scale,
                zero_point,
            } => data
                .iter()
                .map(|&q| F::from_f64(((q as i32 - zero_point) as f32 * scale) as f64))
                .collect(),
        };
        Tensor::new(self.shape.clone(), data).map_err(|e| Error::Load(format!("{}: {e}", self.name)))
    }

    /// Bytes this entry occupies in the file.
    pub fn encoded_len(&self) -> usize {
        let payload = match &self.data {
            TensorData::F32(v) => 4 * v.len(),
            TensorData::I8 { data, .. } => data.len() + 8,
        };
        4 + self.name.len() + 4 + 4 * self.shape.len() + 1 + payload
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn set_meta(&mut self, key: &str, value: &str) {
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(kv) => kv.1 = value.to_string(),
            None => self.meta.push((key.to_string(), value.to_string())),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn from_store<F: Elem>(store: &ParamStore<F>) -> Self {
        Container {
            meta: Vec::new(),
            tensors: store.iter().map(|(_, p)| NamedTensor::f32(&p.name, &p.value)).collect(),
        }
    }

    /// Overwrites every parameter of `store` from the tensor of the same name.
    pub fn fill_store<F: Elem>(&self, store: &mut ParamStore<F>) -> Result<()> {
        // Build everything first so a failure leaves `store` untouched.
        let mut staged = Vec::with_capacity(store.len());
        for (id, p) in store.iter() {
            let t = self
                .tensor(&p.name)
                .ok_or_else(|| Error::Load(format!("missing tensor {}", p.name)))?;
            if t.shape != p.value.shape() {
                return Err(Error::Load(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape,
                    p.value.shape()
                )));
            }
            staged.push((id, t.to_tensor::<F>()?));
        }
        for (id, t) in staged {
            store.get_mut(id).value = t;
        }
        Ok(())
    }

    pub fn header_len(&self) -> usize {
        8 + 4 + self.meta.iter().map(|(k, v)| 8 + k.len() + v.len()).sum::<usize>() + 4
    }

    pub fn encoded_len(&self) -> usize {
        self.header_len() + self.tensors.iter().map(NamedTensor::encoded_len).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.meta.len());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut out, d);
            }
            out.push(t.data.tag());
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                TensorData::I8 {
                    data,
                    scale,
                    zero_point,
                } => {
                    out.extend(data.iter().map(|&q| q as u8));
                    out.extend_from_slice(&scale.to_le_bytes());
                    out.extend_from_slice(&zero_point.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses a container from the start of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Container, usize)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            if &magic[..7] == MAGIC_STEM {
                return Err(Error::Load(format!(
                    "unsupported container version {:?}",
                    magic[7] as char
                )));
            }
            return Err(Error::Load("not a model container (bad magic)".into()));
        }
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.push((k, v));
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::Load(format!("tensor {name}: rank {rank} is implausible")));
            }
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = match r.u8()? {
                0 => {
                    let raw = r.take(
                        count
                            .checked_mul(4)
                            .ok_or_else(|| Error::Load("size overflow".into()))?,
                    )?;
                    TensorData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                1 => {
                    let data = r.take(count)?.iter().map(|&b| b as i8).collect();
                    let scale = f32::from_le_bytes(r.array()?);
                    let zero_point = i32::from_le_bytes(r.array()?);
                    TensorData::I8 {
                        data,
                        scale,
                        zero_point,
                    }
                }
                t => return Err(Error::Load(format!("tensor {name}: unknown dtype tag {t}"))),
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok((Container { meta, tensors }, r.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Container> {
        let (c, used) = Self::parse(bytes)?;
        if used != bytes.len() {
            return Err(Error::Load(format!(
                "{} trailing bytes after container",
                bytes.len() - used
            )));
        }
        Ok(c)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Container> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Load(format!(
                    "truncated: need {n} bytes at offset {}, {} left",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self.take(N)?;
        let mut a = [0; N];
        a.copy_from_slice(s);
        Ok(a)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Load(format!("invalid UTF-8 at offset {}", self.pos - n)))
    }
}
