//! Flat binary checkpoint format.
//!
//! ```text
//! magic   b"PFCK"
//! version u32 LE (= 1)
//! count   u32 LE
//! repeated count times:
//!   name_len u32 LE, name (UTF-8)
//!   rank u32 LE, dims u32 LE * rank
//!   data f32 LE * product(dims)
//! ```

use std::io::{Read, Write};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(store, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        store.add(name, Tensor::new(dims, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_byte_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.xavier("enc.w", 5, 7, &mut rng);
        store.normal("emb", &[4, 3], 0.02, &mut rng);
        store.xavier_conv("conv", 2, 3, 3, &mut rng);
        let bytes = to_bytes(&store);
        let loaded = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(to_bytes(&loaded), bytes);
        assert_eq!(loaded.name(loaded.find("conv").unwrap()), "conv");
        assert_eq!(loaded.value(loaded.find("conv").unwrap()).shape(), &[2, 3, 3, 3]);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(read_checkpoint(&b"NOPE\x01\0\0\0\0\0\0\0"[..]).is_err());
    }
}
