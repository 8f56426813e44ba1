//! Model container file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MNRM" | version: u32
//! repeated until EOF:
//!   path_len: u32 | path: UTF-8 | rank: u32 | dims: u64 * rank | payload: f64 * numel
//! ```
//!
//! Writers emit records in sorted path order; readers accept any order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MNRM";
pub const VERSION: u32 = 1;

pub fn write<W: Write>(mut w: W, records: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (path, t) in records {
        let bytes = path.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_file(path: &Path, records: &BTreeMap<String, Tensor>) -> Result<()> {
    let tmp = path.with_extension("mnrm.tmp");
    {
        let f = fs::File::create(&tmp)?;
        write(io::BufWriter::new(f), records)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?.ok_or_else(|| Error::Format("missing version".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut out = BTreeMap::new();
    while let Some(path_len) = read_u32(&mut r)? {
        let mut path = vec![0u8; path_len as usize];
        r.read_exact(&mut path).map_err(truncated)?;
        let path =
            String::from_utf8(path).map_err(|_| Error::Format("path is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?.ok_or_else(|| truncated_at(&path))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b).map_err(truncated)?;
            data.push(f64::from_le_bytes(b));
        }
        if out
            .insert(path.clone(), Tensor::new(shape, data)?)
            .is_some()
        {
            return Err(Error::Format(format!("duplicate record `{path}`")));
        }
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let f = fs::File::open(path)?;
    read(io::BufReader::new(f))
}

/// `None` on clean EOF before the first byte.
fn read_u32<R: Read>(r: &mut R) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut b[filled..])?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(Error::Format("truncated integer".into()))
            };
        }
        filled += n;
    }
    Ok(Some(u32::from_le_bytes(b)))
}

fn truncated(_: io::Error) -> Error {
    Error::Format("truncated record".into())
}

fn truncated_at(path: &str) -> Error {
    Error::Format(format!("record `{path}` is truncated"))
}
