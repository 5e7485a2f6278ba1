use std::io::{ErrorKind, Read, Write};

use super::{Model, ModelConfig};
use crate::error::{ApanError, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APANCKPT";

fn put_u64<W: Write>(w: &mut W, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

/// Magic, `(d, d_e, m, heads, hidden)`, then every tensor as
/// `(name length, name, rank, dims, f64 payload)`, all little-endian.
pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let c = &model.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [c.d, c.d_e, c.slots, c.heads, c.hidden] {
        put_u64(&mut w, v)?;
    }
    for (_, p) in model.params.iter() {
        put_u64(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        put_u64(&mut w, p.value.shape().len())?;
        for &dim in p.value.shape() {
            put_u64(&mut w, dim)?;
        }
        for x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b) as usize)
}

/// `Ok(None)` at a clean end of stream.
fn try_get_u64<R: Read>(r: &mut R) -> Result<Option<usize>> {
    let mut b = [0u8; 8];
    let mut filled = 0;
    while filled < 8 {
        match r.read(&mut b[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(ApanError::Format("truncated tensor header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(u64::from_le_bytes(b) as usize))
}

/// Loads a model. Dropout, attention scale and epsilon are not stored and take
/// their defaults; callers may overwrite them on the returned config.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ApanError::Format("bad checkpoint magic".into()));
    }
    let d = get_u64(&mut r)?;
    let d_e = get_u64(&mut r)?;
    let mut config = ModelConfig::for_edge_dim(d_e);
    config.d = d;
    config.slots = get_u64(&mut r)?;
    config.heads = get_u64(&mut r)?;
    config.hidden = get_u64(&mut r)?;
    let mut store = ParamStore::new();
    while let Some(name_len) = try_get_u64(&mut r)? {
        if name_len > 1 << 16 {
            return Err(ApanError::Format(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ApanError::Format("tensor name is not utf-8".into()))?;
        let rank = get_u64(&mut r)?;
        if rank > 8 {
            return Err(ApanError::Format(format!("tensor `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| get_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.add(name, Tensor::new(shape, data)?);
    }
    Model::from_params(config, store)
}
