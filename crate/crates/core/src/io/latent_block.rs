//! Binary latent block: magic `LATB`, `u32` LE count, `u32` LE dim, then
//! `count * dim` little-endian `f32` values, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::model::LatentVector;

pub const LATENT_MAGIC: [u8; 4] = *b"LATB";
const HEADER_LEN: usize = 12;

/// Expected file size for a block, or `None` on overflow.
pub fn latent_block_len(count: u32, dim: u32) -> Option<u64> {
    (count as u64)
        .checked_mul(dim as u64)?
        .checked_mul(4)?
        .checked_add(HEADER_LEN as u64)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        what: "latent block",
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

pub fn write_latent_block(path: &Path, dim: usize, vectors: &[LatentVector]) -> Result<()> {
    let count = u32::try_from(vectors.len()).map_err(|_| malformed(path, "too many vectors"))?;
    let dim32 = u32::try_from(dim).map_err(|_| malformed(path, "dimension too large"))?;
    let len = latent_block_len(count, dim32).ok_or_else(|| malformed(path, "count * dim overflows"))?;
    let mut buf = Vec::with_capacity(len as usize);
    buf.extend_from_slice(&LATENT_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    for v in vectors {
        v.check_dim(dim)?;
        for &x in v.as_slice() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    atomic_write(path, &buf)
}

/// Returns `(dim, vectors)`.
pub fn read_latent_block(path: &Path) -> Result<(usize, Vec<LatentVector>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(malformed(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if bytes[..4] != LATENT_MAGIC {
        return Err(malformed(path, "bad magic"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let expected = latent_block_len(count, dim).ok_or_else(|| malformed(path, "count * dim overflows"))?;
    if (bytes.len() as u64) < expected {
        return Err(malformed(
            path,
            format!("truncated: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if (bytes.len() as u64) > expected {
        return Err(malformed(
            path,
            format!("{} trailing bytes", bytes.len() as u64 - expected),
        ));
    }
    let dim = dim as usize;
    if count > 0 && dim == 0 {
        return Err(malformed(path, "zero dimension with non-zero count"));
    }
    let vectors = bytes[HEADER_LEN..]
        .chunks_exact(4 * dim.max(1))
        .take(count as usize)
        .map(|row| {
            LatentVector::from_raw(
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
            )
        })
        .collect();
    Ok((dim, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_block_is_twelve_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.latb");
        write_latent_block(&p, 7, &[]).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 12);
        let (dim, v) = read_latent_block(&p).unwrap();
        assert_eq!(dim, 7);
        assert!(v.is_empty());
    }

    #[test]
    fn single_vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.latb");
        let z = LatentVector::new(vec![1.0, 2.0]).unwrap();
        write_latent_block(&p, 2, std::slice::from_ref(&z)).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"LATB");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(read_latent_block(&p).unwrap().1, vec![z]);
    }

    #[test]
    fn size_of_experiment_block() {
        assert_eq!(latent_block_len(5000, 512), Some(12 + 5000 * 512 * 4));
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.latb");
        fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_latent_block(&p), Err(Error::Format { .. })));

        let mut truncated = b"LATB".to_vec();
        truncated.extend_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&2u32.to_le_bytes());
        truncated.extend_from_slice(&[0; 12]);
        fs::write(&p, &truncated).unwrap();
        assert!(read_latent_block(&p).is_err());

        fs::write(&p, b"LATB\0\0").unwrap();
        assert!(read_latent_block(&p).is_err());

        let mut huge = b"LATB".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        fs::write(&p, &huge).unwrap();
        assert!(read_latent_block(&p).is_err());
    }

    #[test]
    fn write_rejects_mixed_dims() {
        let dir = tempfile::tempdir().unwrap();
        let vs = vec![LatentVector::zeros(2), LatentVector::zeros(3)];
        assert!(write_latent_block(&dir.path().join("m.latb"), 2, &vs).is_err());
    }
}
