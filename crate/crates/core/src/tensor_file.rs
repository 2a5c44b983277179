//! `WXT1` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"WXT1" | rank: u32 | dims: u32 * rank | payload: f32 * prod(dims)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::imageio::{Tensor, TensorF32};

pub const TENSOR_MAGIC: &[u8; 4] = b"WXT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &TensorF32) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<TensorF32> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != TENSOR_MAGIC {
        if &magic[..3] == b"WXT" {
            return Err(Error::Version {
                expected: "WXT1".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        return Err(Error::Format("bad tensor magic".into()));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
    let mut bytes = vec![
        0u8;
        n.checked_mul(4)
            .ok_or_else(|| Error::Format("tensor too large".into()))?
    ];
    read_exact(r, &mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_tensor(t: &TensorF32) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t).expect("writing to a Vec cannot fail");
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorF32> {
    let mut cursor = bytes;
    read_tensor(&mut cursor)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of data".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
