//! Flat binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes   "HMTS"
//! version  u32       1
//! dtype    u8        0x01 = f64
//! rank     u64
//! dims     rank × u64
//! values   Π(dims) × f64
//! ```
//!
//! Checkpoints and bank dumps embed one such record per tensor.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"HMTS";
pub const DTYPE_F64: u8 = 0x01;
const VERSION: u32 = 1;
const MAX_RANK: u64 = 16;
const MAX_NUMEL: u64 = 1 << 32;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        path: "<tensor stream>".into(),
        detail: detail.into(),
    }
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64])?;
    let shape = t.shape();
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for d in &shape {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let mut v4 = [0u8; 4];
    r.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mut dt = [0u8; 1];
    r.read_exact(&mut dt)?;
    if dt[0] != DTYPE_F64 {
        return Err(format_err(format!("unsupported dtype code {}", dt[0])));
    }
    let mut u8buf = [0u8; 8];
    r.read_exact(&mut u8buf)?;
    let rank = u64::from_le_bytes(u8buf);
    if rank == 0 || rank > MAX_RANK {
        return Err(format_err(format!("rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: u64 = 1;
    for _ in 0..rank {
        r.read_exact(&mut u8buf)?;
        let d = u64::from_le_bytes(u8buf);
        if d == 0 {
            return Err(format_err("zero dimension"));
        }
        numel = numel
            .checked_mul(d)
            .filter(|&n| n <= MAX_NUMEL)
            .ok_or_else(|| format_err("element count overflow"))?;
        shape.push(d as usize);
    }
    let mut data = Vec::with_capacity(numel as usize);
    for _ in 0..numel {
        r.read_exact(&mut u8buf)?;
        data.push(f64::from_le_bytes(u8buf));
    }
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let t = Tensor::from_vec(&[2, 3], vec![1.5, -0.25, 0.0, f64::MIN_POSITIVE, 1e300, -7.0])
            .unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Writing again must produce identical bytes.
        let mut buf2 = Vec::new();
        write_tensor(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"HMTS");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf[8], DTYPE_F64);
        assert_eq!(u64::from_le_bytes(buf[9..17].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[17..25].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 25 + 16);
    }

    #[test]
    fn rejects_corrupt_headers() {
        let t = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensor(&mut bad.as_slice()).is_err());
        let mut short = buf.clone();
        short.truncate(buf.len() - 3);
        assert!(read_tensor(&mut short.as_slice()).is_err());
    }
}
