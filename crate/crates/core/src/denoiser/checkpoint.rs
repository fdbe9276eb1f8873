//! Little-endian parameter checkpoints.
//!
//! Layout: magic `LVCK`, version `u16`, the config block (ten `u32` fields
//! then `gamma` as `f64`), a `u32` tensor count, then per tensor: name
//! length `u16`, UTF-8 name, rank `u32`, dims `u32 x rank`, data `f64 x n`.
//! Discriminator tensors carry a `disc.` name prefix.

use std::io::{Read, Write};

use super::{BlockDenoiser, DenoiserConfig, DenoiserError, Discriminator, ParamStore, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LVCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const DISC_PREFIX: &str = "disc.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: BlockDenoiser,
    pub disc: Option<Discriminator>,
}

fn bad(msg: impl Into<String>) -> DenoiserError {
    DenoiserError::Checkpoint(msg.into())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit in u32")))
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let c = ckpt.net.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let fields = [
        c.d_model,
        c.n_heads,
        c.n_layers,
        c.head_dim,
        c.chunk_len,
        c.latent_dim,
        c.embed_dim,
        c.tokens_per_frame,
        c.ff_dim,
        c.sample_steps,
    ];
    for f in fields {
        w.write_all(&to_u32(f, "config field")?.to_le_bytes())?;
    }
    w.write_all(&c.gamma.to_le_bytes())?;

    let mut tensors: Vec<(String, &Tensor)> = ckpt.net.params().iter().map(|(k, t)| (k.to_string(), t)).collect();
    if let Some(d) = &ckpt.disc {
        tensors.extend(d.params().iter().map(|(k, t)| (format!("{DISC_PREFIX}{k}"), t)));
    }
    w.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name {name:?} too long")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&to_u32(t.shape().len(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&to_u32(d, "dimension")?.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad("truncated checkpoint"),
        _ => DenoiserError::Io(e),
    })?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &read_array::<4, _>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut f = [0usize; 10];
    for v in &mut f {
        *v = read_u32(&mut r)?;
    }
    let gamma = f64::from_le_bytes(read_array(&mut r)?);
    let cfg = DenoiserConfig {
        d_model: f[0],
        n_heads: f[1],
        n_layers: f[2],
        head_dim: f[3],
        chunk_len: f[4],
        latent_dim: f[5],
        embed_dim: f[6],
        tokens_per_frame: f[7],
        ff_dim: f[8],
        sample_steps: f[9],
        gamma,
    };
    cfg.validate()?;

    let count = read_u32(&mut r)?;
    let mut gen = ParamStore::new();
    let mut disc = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)?;
        if rank == 0 || rank > 8 {
            return Err(bad(format!("tensor {name:?} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n == 0 || n > 1 << 28 {
            return Err(bad(format!("tensor {name:?} has implausible shape {shape:?}")));
        }
        let data = (0..n)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(&shape, data).map_err(|e| bad(format!("tensor {name:?}: {e}")))?;
        match name.strip_prefix(DISC_PREFIX) {
            Some(rest) => disc.insert(rest, t),
            None => gen.insert(name, t),
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    let net = BlockDenoiser::from_params(cfg, gen)?;
    let disc = if disc.is_empty() {
        None
    } else {
        Some(Discriminator::from_params(disc)?)
    };
    Ok(Checkpoint { net, disc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn ckpt() -> Checkpoint {
        let cfg = DenoiserConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            head_dim: 4,
            chunk_len: 2,
            latent_dim: 4,
            embed_dim: 3,
            tokens_per_frame: 2,
            ff_dim: 6,
            gamma: 0.25,
            sample_steps: 3,
        };
        let mut rng = RandomSource::new(1);
        Checkpoint {
            net: BlockDenoiser::new(cfg, &mut rng).unwrap(),
            disc: Some(Discriminator::new(4, 5, &mut rng).unwrap()),
        }
    }

    #[test]
    fn round_trip() {
        let c = ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"LVCK");
        assert_eq!(&buf[4..6], &1u16.to_le_bytes());
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), c);

        let no_disc = Checkpoint { disc: None, ..c };
        let mut buf = Vec::new();
        write_checkpoint(&no_disc, &mut buf).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), no_disc);
    }

    #[test]
    fn corruption_is_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&ckpt(), &mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&bad_magic[..]).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra[..]).is_err());
    }
}
