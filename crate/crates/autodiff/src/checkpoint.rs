//! Named-tensor checkpoint files.
//!
//! Layout: the 9 magic bytes `TPA3DCKPT`, a little-endian `u32` format
//! version, then records until end of file. Each record is a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` `u32` dims and the `f64`
//! little-endian payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::error::{Result, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"TPA3DCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(mut w: impl Write, entries: &[(String, Array)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, array) in entries {
        let name_len = u32::try_from(name.len()).map_err(|_| TensorError::Format("name too long".into()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(array.rank() as u32).to_le_bytes())?;
        for &d in array.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in array.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> TensorError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        TensorError::Format("truncated checkpoint".into())
    } else {
        TensorError::Io(e)
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Vec<(String, Array)>> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let mut cur = rest.as_slice();
    let mut out = Vec::new();
    while !cur.is_empty() {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Format("non-UTF-8 tensor name".into()))?;
        let rank = read_u32(&mut cur)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut cur)? as usize);
        }
        let n: usize = dims.iter().product();
        if cur.len() < n * 8 {
            return Err(TensorError::Format(format!("truncated payload for `{name}`")));
        }
        let (payload, tail) = cur.split_at(n * 8);
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        cur = tail;
        let array = Array::new(dims, data).map_err(|e| TensorError::Format(format!("`{name}`: {e}")))?;
        out.push((name, array));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, entries: &[(String, Array)]) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Array)>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
