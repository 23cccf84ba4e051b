//! Model file: magic `SPRN`, u16 version, the model configuration, then
//! every parameter and running statistic as a u32 length followed by
//! little-endian f32 values, in the model's fixed traversal order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{build_model, ModelConfig, ResUNet};

pub const MAGIC: &[u8; 4] = b"SPRN";
pub const VERSION: u16 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_model(w: &mut impl Write, model: &mut ResUNet<f32>) -> Result<()> {
    let cfg = model.config().clone();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    put_u32(w, cfg.depth)?;
    put_u32(w, cfg.base_filters)?;
    put_u32(w, cfg.blocks_per_level.len())?;
    for &b in &cfg.blocks_per_level {
        put_u32(w, b)?;
    }
    put_u32(w, cfg.final_kernels[0])?;
    put_u32(w, cfg.final_kernels[1])?;
    w.write_all(&[cfg.pad_input as u8])?;
    let state = model.state();
    put_u32(w, state.len())?;
    for t in &state {
        put_u32(w, t.len())?;
        let mut buf = Vec::with_capacity(4 * t.len());
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<ResUNet<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model file version {version}")));
    }
    let depth = get_u32(r)?;
    let base_filters = get_u32(r)?;
    let n = get_u32(r)?;
    if n > 64 {
        return Err(Error::Format(format!("implausible level count {n}")));
    }
    let blocks_per_level = (0..n).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let final_kernels = [get_u32(r)?, get_u32(r)?];
    let mut pad = [0u8; 1];
    r.read_exact(&mut pad)?;
    let cfg = ModelConfig {
        depth,
        base_filters,
        blocks_per_level,
        final_kernels,
        pad_input: pad[0] != 0,
    };
    let mut model = build_model::<f32>(&cfg, 0).map_err(|e| Error::Format(format!("model file config: {e}")))?;
    let count = get_u32(r)?;
    let mut state = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(r)?;
        let mut buf = vec![0u8; 4 * len];
        r.read_exact(&mut buf)?;
        state.push(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    model.load_state(&state)?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &mut ResUNet<f32>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ResUNet<f32>> {
    read_model(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
