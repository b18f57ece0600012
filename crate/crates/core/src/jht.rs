//! The JHT1 tensor file format.
//!
//! Layout: 4-byte magic `JHT1`, one dtype byte (0 = float32, 1 = uint8),
//! one ndim byte, `ndim` little-endian u64 extents, then the row-major
//! payload in little-endian byte order. Round trips are bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"JHT1";

#[derive(Debug, Error)]
pub enum JhtError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected JHT1, got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("payload length mismatch: shape {shape:?} needs {expected} values")]
    Truncated { shape: Vec<usize>, expected: usize },
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::error::TensorError),
}

/// A decoded JHT1 payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

fn write_header<W: Write>(w: &mut W, dtype: u8, shape: &[usize]) -> Result<(), JhtError> {
    w.write_all(&MAGIC)?;
    w.write_all(&[dtype, shape.len() as u8])?;
    for &extent in shape {
        w.write_all(&(extent as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, shape: &[usize], data: &[f32]) -> Result<(), JhtError> {
    write_header(w, 0, shape)?;
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, shape: &[usize], data: &[u8]) -> Result<(), JhtError> {
    write_header(w, 1, shape)?;
    w.write_all(data)?;
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<Payload, JhtError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(JhtError::BadMagic(magic));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let (dtype, ndim) = (head[0], head[1] as usize);
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut ext = [0u8; 8];
        r.read_exact(&mut ext)?;
        shape.push(u64::from_le_bytes(ext) as usize);
    }
    let expected: usize = shape.iter().product();
    match dtype {
        0 => {
            let mut bytes = vec![0u8; expected * 4];
            r.read_exact(&mut bytes).map_err(|_| JhtError::Truncated {
                shape: shape.clone(),
                expected,
            })?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(Payload::F32 { shape, data })
        }
        1 => {
            let mut data = vec![0u8; expected];
            r.read_exact(&mut data).map_err(|_| JhtError::Truncated {
                shape: shape.clone(),
                expected,
            })?;
            Ok(Payload::U8 { shape, data })
        }
        code => Err(JhtError::UnknownDtype(code)),
    }
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<(), JhtError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_f32(&mut w, tensor.shape(), &tensor.data())?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor, JhtError> {
    let mut r = BufReader::new(File::open(path)?);
    match read(&mut r)? {
        Payload::F32 { shape, data } => Ok(Tensor::from_vec(&shape, data)?),
        Payload::U8 { shape, data } => Ok(Tensor::from_vec(
            &shape,
            data.into_iter().map(|v| v as f32).collect(),
        )?),
    }
}
