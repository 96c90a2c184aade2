//! Versioned binary serialization for model parameter snapshots.
//!
//! Layout: 8-byte magic, u32 kind tag, u32 shape count, shapes as u64
//! little-endian, then the flat parameter vector as little-endian f64.

use crate::error::{Error, Result};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"BNLPB01\0";

/// A frozen copy of a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    /// Model-kind discriminator; restore refuses a blob of the wrong kind.
    pub kind: u32,
    /// Shape header describing how `data` is laid out.
    pub shape: Vec<u64>,
    pub data: Vec<f64>,
}

impl ParamBlob {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.kind.to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &s in &self.shape {
            w.write_all(&s.to_le_bytes())?;
        }
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for &x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BlobMismatch("bad magic string".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let kind = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let nshape = u32::from_le_bytes(b4) as usize;
        let mut shape = Vec::with_capacity(nshape);
        for _ in 0..nshape {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8));
        }
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Ok(Self { kind, shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_roundtrip_is_bit_exact() {
        let blob = ParamBlob {
            kind: 1,
            shape: vec![3, 4],
            data: vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300, -7.25],
        };
        let mut buf = Vec::new();
        blob.write_to(&mut buf).unwrap();
        let back = ParamBlob::read_from(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(blob.kind, back.kind);
        assert_eq!(blob.shape, back.shape);
        for (a, b) in blob.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = vec![0u8; 32];
        assert!(ParamBlob::read_from(std::io::Cursor::new(buf)).is_err());
    }
}
