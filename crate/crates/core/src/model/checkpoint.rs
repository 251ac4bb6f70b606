//! Binary checkpoint format.
//!
//! ```text
//! magic        "C2RECv1"
//! config       u32 length + JSON-encoded ModelConfig
//! users        u32 count, then per id: u32 length + UTF-8 bytes
//! items        same layout as users
//! tensors      u32 count, then per tensor:
//!                u32 name length + name, u32 rows, u32 cols,
//!                rows * cols little-endian f32, row-major
//! ```
//!
//! All integers are little-endian. Values are stored as `f32`, so a loaded
//! model equals the saved one up to `f32` rounding.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Parameters};
use crate::dataset::Vocab;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 7] = b"C2RECv1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let config = serde_json::to_vec(&self.config).map_err(std::io::Error::other)?;
        write_bytes(w, &config)?;
        write_strings(w, &self.vocab.users)?;
        write_strings(w, &self.vocab.items)?;
        let tensors = self.params.tensors();
        write_u32(w, tensors.len())?;
        for (name, m) in tensors {
            write_tensor(w, &name, m)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 7];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let config: ModelConfig = serde_json::from_slice(&read_bytes(r)?)?;
        config.validate()?;
        let users = read_strings(r)?;
        let items = read_strings(r)?;
        let vocab = Vocab::from_ids(users, items)?;

        let mut params = Parameters::zeros(vocab.n_users(), vocab.n_items(), &config);
        let count = read_u32(r)?;
        let mut expected = params.tensors_mut();
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        for (name, target) in expected.iter_mut() {
            let (found, m) = read_tensor(r)?;
            if &found != name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{name}`, found `{found}`"
                )));
            }
            if m.shape() != target.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config implies {:?}",
                    m.shape(),
                    target.shape()
                )));
            }
            **target = m;
        }
        drop(expected);
        Ok(Checkpoint {
            config,
            vocab,
            params,
        })
    }
}

pub(crate) fn write_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(std::io::Error::other)?;
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    write_u32(w, bytes.len())?;
    w.write_all(bytes)
}

fn write_strings(w: &mut impl Write, items: &[String]) -> std::io::Result<()> {
    write_u32(w, items.len())?;
    for s in items {
        write_bytes(w, s.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn write_tensor(w: &mut impl Write, name: &str, m: &Matrix) -> std::io::Result<()> {
    write_bytes(w, name.as_bytes())?;
    write_u32(w, m.rows())?;
    write_u32(w, m.cols())?;
    let mut buf = Vec::with_capacity(4 * m.as_slice().len());
    for &x in m.as_slice() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated input: {e}")))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub(crate) fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u32(r)?;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_strings(r: &mut impl Read) -> Result<Vec<String>> {
    let n = read_u32(r)?;
    (0..n)
        .map(|_| {
            String::from_utf8(read_bytes(r)?)
                .map_err(|e| Error::Checkpoint(format!("invalid utf-8 id: {e}")))
        })
        .collect()
}

pub(crate) fn read_tensor(r: &mut impl Read) -> Result<(String, Matrix)> {
    let name = String::from_utf8(read_bytes(r)?)
        .map_err(|e| Error::Checkpoint(format!("invalid tensor name: {e}")))?;
    let rows = read_u32(r)?;
    let cols = read_u32(r)?;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
    let mut raw = vec![0u8; 4 * len];
    read_exact(r, &mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((name, Matrix::from_vec(rows, cols, data)))
}
