//! Binary stack files.
//!
//! Layout, all little-endian: magic `SPST`, `u16` version, `u16` kind,
//! `u32` planes, `u32` rows, `u32` cols, then `planes * rows * cols` `f32`
//! values plane by plane, row-major within a plane.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPST";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    Sinogram,
    MaskWeights,
    Image,
}

impl StackKind {
    fn code(self) -> u16 {
        match self {
            Self::Sinogram => 0,
            Self::MaskWeights => 1,
            Self::Image => 2,
        }
    }

    fn from_code(code: u16) -> Result<Self> {
        match code {
            0 => Ok(Self::Sinogram),
            1 => Ok(Self::MaskWeights),
            2 => Ok(Self::Image),
            _ => Err(Error::Format(format!("unknown stack kind {code}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sinogram => "sinogram",
            Self::MaskWeights => "mask_weights",
            Self::Image => "image",
        }
    }
}

pub fn write_stack(w: &mut impl Write, kind: StackKind, planes: &[Array2<f32>]) -> Result<()> {
    let (rows, cols) = planes.first().map_or((0, 0), |p| p.dim());
    if planes.iter().any(|p| p.dim() != (rows, cols)) {
        return Err(Error::Shape("stack planes differ in size".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&kind.code().to_le_bytes())?;
    for n in [planes.len(), rows, cols] {
        let n = u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(rows * cols * 4);
    for p in planes {
        buf.clear();
        for &v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_stack(r: &mut impl Read) -> Result<(StackKind, Vec<Array2<f32>>)> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)
        .map_err(|e| Error::Format(format!("truncated stack header: {e}")))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &head[0..4])));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported stack version {version}")));
    }
    let kind = StackKind::from_code(u16::from_le_bytes([head[6], head[7]]))?;
    let dim = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (n, rows, cols) = (dim(8), dim(12), dim(16));
    let mut buf = vec![0u8; rows * cols * 4];
    let mut planes = Vec::with_capacity(n);
    for i in 0..n {
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated payload at plane {i}: {e}")))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        planes.push(Array2::from_shape_vec((rows, cols), values).expect("rows * cols values"));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after stack payload".into()));
    }
    Ok((kind, planes))
}

pub fn save_stack(path: &Path, kind: StackKind, planes: &[Array2<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack(&mut w, kind, planes)?;
    w.flush()?;
    Ok(())
}

pub fn load_stack(path: &Path) -> Result<(StackKind, Vec<Array2<f32>>)> {
    let file = File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    read_stack(&mut BufReader::new(file))
}

/// Loads a stack and checks its kind.
pub fn load_stack_of(path: &Path, kind: StackKind) -> Result<Vec<Array2<f32>>> {
    let (got, planes) = load_stack(path)?;
    if got != kind {
        return Err(Error::Format(format!(
            "{} holds a {} stack, expected {}",
            path.display(),
            got.as_str(),
            kind.as_str()
        )));
    }
    Ok(planes)
}
