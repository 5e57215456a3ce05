//! Binary artifact formats.
//!
//! Three little-endian container kinds share one byte-level toolkit:
//!
//! * `DMLT` — one raw tensor per file (dataset images / states / actions).
//! * `DMLW` — parameter checkpoint: a list of tensors followed by named
//!   opaque sections (layer layout, tree records, model metadata).
//! * `DMLF` — precomputed feature vectors keyed by sample id.
//!
//! Every writer is deterministic, and every reader round-trips the writer
//! bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"DMLT";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMLW";
pub const FEATURE_MAGIC: &[u8; 4] = b"DMLF";
pub const FORMAT_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// byte-level cursor
// ---------------------------------------------------------------------------

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &str) -> Self {
        Self {
            buf,
            pos: 0,
            path: path.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                &self.path,
                format!("truncated: needed {} bytes at offset {}", n, self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(Error::format(
                &self.path,
                format!("bad magic {:?}, expected {:?}", got, expect),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                &self.path,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }

    pub fn path(&self) -> &str {
        &self.path
    }
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32_slice(&mut self, vs: &[f32]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn check_version(version: u16, path: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {}", version),
        ));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// DMLT: one tensor per file
// ---------------------------------------------------------------------------

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut w = Writer::new(TENSOR_MAGIC);
    w.u32(t.rank() as u32);
    for &e in t.shape() {
        w.u32(e as u32);
    }
    w.f32_slice(t.data());
    w.finish()
}

pub fn tensor_from_bytes(bytes: &[u8], path: &str) -> Result<Tensor> {
    let mut r = Reader::new(bytes, path);
    r.magic(TENSOR_MAGIC)?;
    check_version(r.u16()?, path)?;
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n: usize = shape.iter().product();
    let data = r.f32_vec(n)?;
    r.done()?;
    Tensor::new(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &tensor_to_bytes(t))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    tensor_from_bytes(&read_file(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// DMLW: checkpoint container
// ---------------------------------------------------------------------------

/// Parameter checkpoint: ordered tensors plus named opaque sections.
///
/// Layout: magic, version u16, tensor count u32, tensors (rank u32, extents
/// u32 each, f32 LE payload), section count u32, sections (name length u32,
/// name bytes, payload length u64, payload bytes).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self {
            tensors,
            sections: Vec::new(),
        }
    }

    pub fn add_section(&mut self, name: &str, payload: Vec<u8>) {
        self.sections.push((name.to_string(), payload));
    }

    pub fn section(&self, name: &str) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
    }

    pub fn require_section(&self, name: &str, path: &str) -> Result<&[u8]> {
        self.section(name)
            .ok_or_else(|| Error::format(path, format!("missing section {:?}", name)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CHECKPOINT_MAGIC);
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.u32(t.rank() as u32);
            for &e in t.shape() {
                w.u32(e as u32);
            }
            w.f32_slice(t.data());
        }
        w.u32(self.sections.len() as u32);
        for (name, payload) in &self.sections {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u64(payload.len() as u64);
            w.bytes(payload);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(CHECKPOINT_MAGIC)?;
        check_version(r.u16()?, path)?;
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            tensors.push(Tensor::new(shape, r.f32_vec(n)?)?);
        }
        let n_sections = r.u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.bytes(name_len)?)
                .map_err(|_| Error::format(path, "section name is not utf-8"))?;
            let payload_len = r.u64()? as usize;
            sections.push((name, r.bytes(payload_len)?));
        }
        r.done()?;
        Ok(Self { tensors, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

// ---------------------------------------------------------------------------
// DMLF: keyed feature vectors
// ---------------------------------------------------------------------------

/// Precomputed feature vectors: fixed dimension `d`, entries keyed by string.
///
/// Layout: magic, version u16, d u32, count u32, then per entry: key length
/// u32, key bytes, d f32 LE values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

impl FeatureFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "feature entry {:?} has length {}, file dimension is {}",
                key,
                values.len(),
                self.dim
            )));
        }
        self.entries.push((key.to_string(), values));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(FEATURE_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.entries.len() as u32);
        for (key, values) in &self.entries {
            w.u32(key.len() as u32);
            w.bytes(key.as_bytes());
            w.f32_slice(values);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(FEATURE_MAGIC)?;
        check_version(r.u16()?, path)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let key_len = r.u32()? as usize;
            let key = String::from_utf8(r.bytes(key_len)?)
                .map_err(|_| Error::format(path, "feature key is not utf-8"))?;
            entries.push((key, r.f32_vec(dim)?));
        }
        r.done()?;
        Ok(Self { dim, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_round_trips_bit_exactly() {
        let t = Tensor::new(vec![2, 3], vec![1.5, -0.0, 3.25, f32::MIN_POSITIVE, 1e-8, -7.0])
            .unwrap();
        let bytes = tensor_to_bytes(&t);
        let back = tensor_from_bytes(&bytes, "mem").unwrap();
        assert!(t.bit_eq(&back));
        // and the re-encoded bytes are identical
        assert_eq!(bytes, tensor_to_bytes(&back));
    }

    #[test]
    fn tensor_file_rejects_bad_magic_and_truncation() {
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let mut bytes = tensor_to_bytes(&t);
        bytes[0] = b'X';
        assert!(tensor_from_bytes(&bytes, "mem").is_err());

        let bytes = tensor_to_bytes(&t);
        assert!(tensor_from_bytes(&bytes[..bytes.len() - 2], "mem").is_err());
    }

    #[test]
    fn checkpoint_round_trips_with_sections() {
        let mut ckpt = Checkpoint::new(vec![
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::from_vec(vec![-1.0]),
        ]);
        ckpt.add_section("meta", b"{\"kind\":\"demo\"}".to_vec());
        ckpt.add_section("blob", vec![0, 1, 2, 255]);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(ckpt, back);
        assert_eq!(bytes, back.to_bytes());
        assert_eq!(back.section("blob"), Some(&[0u8, 1, 2, 255][..]));
        assert!(back.section("missing").is_none());
    }

    #[test]
    fn feature_file_round_trips_and_enforces_dim() {
        let mut f = FeatureFile::new(3);
        f.push("a:0", vec![1.0, 2.0, 3.0]).unwrap();
        f.push("b:1", vec![-1.0, 0.0, 0.5]).unwrap();
        assert!(f.push("bad", vec![1.0]).is_err());
        let back = FeatureFile::from_bytes(&f.to_bytes(), "mem").unwrap();
        assert_eq!(f, back);
        assert_eq!(back.get("b:1"), Some(&[-1.0, 0.0, 0.5][..]));
        assert_eq!(back.get("zzz"), None);
    }
}
