//! Binary bank snapshots.
//!
//! Little-endian layout: magic `LVKV`, version `u16`, entry count `u32`,
//! then per entry: chunk index `u32`, embedding dimension `u32`, embedding
//! `f64 x e`, heads/kept/d `u32 x 3`, keys `f64` array, values `f64` array,
//! kept indices `u32` array.
//!
//! The format carries neither the bank capacity nor each entry's original
//! token count; on import the source length is taken as one past the last
//! kept index.

use std::io::{Read, Write};

use super::{KVBank, KvError, Result, SparseKV};
use crate::tensor::Tensor;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"LVKV";
pub const SNAPSHOT_VERSION: u16 = 1;

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| KvError::Snapshot(format!("{what} {n} exceeds u32")))
}

pub fn write_snapshot<W: Write>(bank: &KVBank, mut w: W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(bank.len(), "entry count")?.to_le_bytes())?;
    for (chunk, entry) in bank.entries() {
        w.write_all(&u32_of(chunk, "chunk index")?.to_le_bytes())?;
        w.write_all(&u32_of(entry.embedding.len(), "embedding dim")?.to_le_bytes())?;
        for v in &entry.embedding {
            w.write_all(&v.to_le_bytes())?;
        }
        let kv = &entry.kv;
        for n in [kv.heads(), kv.kept(), kv.head_dim()] {
            w.write_all(&u32_of(n, "extent")?.to_le_bytes())?;
        }
        for v in kv.keys().data().iter().chain(kv.values().data()) {
            w.write_all(&v.to_le_bytes())?;
        }
        for &i in kv.kept_indices() {
            w.write_all(&u32_of(i, "kept index")?.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| KvError::Snapshot(format!("truncated snapshot: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

/// Reads a bank written by [`write_snapshot`]; the result has no capacity.
pub fn read_snapshot<R: Read>(r: R) -> Result<KVBank> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != SNAPSHOT_MAGIC {
        return Err(KvError::Snapshot("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.bytes()?);
    if version != SNAPSHOT_VERSION {
        return Err(KvError::Snapshot(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut bank = KVBank::new(None);
    for _ in 0..count {
        let chunk = r.u32()?;
        let e = r.u32()?;
        let embedding = r.f64s(e)?;
        let (heads, kept, d) = (r.u32()?, r.u32()?, r.u32()?);
        let n = heads * kept * d;
        let keys = Tensor::new(&[heads, kept, d], r.f64s(n)?)?;
        let values = Tensor::new(&[heads, kept, d], r.f64s(n)?)?;
        let kept_indices = (0..kept).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let source_len = kept_indices.last().map_or(0, |&i| i + 1);
        bank.insert(chunk, SparseKV::new(keys, values, kept_indices, source_len)?, embedding)?;
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn sample_bank() -> KVBank {
        let mut rng = RandomSource::new(8);
        let mut bank = KVBank::new(None);
        for (chunk, kept) in [(0usize, vec![0, 3, 4]), (2, vec![1, 2, 5])] {
            let k = Tensor::new(&[2, 3, 2], rng.normals(12)).unwrap();
            let v = Tensor::new(&[2, 3, 2], rng.normals(12)).unwrap();
            let kv = SparseKV::new(k, v, kept.clone(), kept[2] + 1).unwrap();
            bank.insert(chunk, kv, rng.normals(4)).unwrap();
        }
        bank
    }

    #[test]
    fn snapshot_round_trip() {
        let bank = sample_bank();
        let mut buf = Vec::new();
        write_snapshot(&bank, &mut buf).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, bank);
    }

    #[test]
    fn snapshot_layout_is_little_endian() {
        let bank = sample_bank();
        let mut buf = Vec::new();
        write_snapshot(&bank, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LVKV");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[2, 0, 0, 0]);
        assert_eq!(&buf[10..14], &[0, 0, 0, 0]);
        assert_eq!(&buf[14..18], &[4, 0, 0, 0]);
        // per entry: 8 bytes header + 32 embedding + 12 extents + 96 + 96 + 12
        assert_eq!(buf.len(), 10 + 2 * (8 + 32 + 12 + 96 + 96 + 12));
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let bank = sample_bank();
        let mut buf = Vec::new();
        write_snapshot(&bank, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot(bad.as_slice()).is_err());
        assert!(read_snapshot(&buf[..buf.len() - 3]).is_err());
    }
}
