//! NVT1 binary tensor format.
//!
//! Layout: magic `4E 56 54 31` ("NVT1"), u8 rank, rank little-endian u64
//! dimensions, then the f32 little-endian payload in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const MAGIC: [u8; 4] = *b"NVT1";

/// Maximum rank accepted by the reader; guards against garbage headers.
const MAX_RANK: u8 = 8;

pub fn write_tensor<W: Write>(mut w: W, shape: &[usize], data: &[f32]) -> Result<()> {
    let count: usize = shape.iter().product();
    if shape.is_empty() || shape.len() > MAX_RANK as usize {
        return Err(Error::invalid(format!("unsupported rank {}", shape.len())));
    }
    if count != data.len() {
        return Err(Error::invalid(format!(
            "shape {:?} implies {count} elements, got {}",
            shape,
            data.len()
        )));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02X?}")));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let rank = rank[0];
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let mut dim = [0u8; 8];
        r.read_exact(&mut dim)
            .map_err(|_| Error::Format("truncated header".into()))?;
        let d = u64::from_le_bytes(dim);
        if d == 0 || d > usize::MAX as u64 {
            return Err(Error::Format(format!("bad dimension {d}")));
        }
        shape.push(d as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((shape, data))
}

pub fn write_tensor_file(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensor(std::io::BufWriter::new(file), shape, data)
}

pub fn read_tensor_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

pub fn write_feature_map<W: Write>(w: W, map: &FeatureMap) -> Result<()> {
    let (h, wd, c) = map.shape();
    write_tensor(w, &[h, wd, c], map.data())
}

pub fn read_feature_map<R: Read>(r: R) -> Result<FeatureMap> {
    let (shape, data) = read_tensor(r)?;
    if shape.len() != 3 {
        return Err(Error::Format(format!(
            "expected rank-3 tensor, got rank {}",
            shape.len()
        )));
    }
    FeatureMap::new(shape[0], shape[1], shape[2], data)
        .map_err(|e| Error::Format(format!("invalid feature map payload: {e}")))
}

pub fn write_feature_map_file(path: &Path, map: &FeatureMap) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_feature_map(std::io::BufWriter::new(file), map)
}

pub fn read_feature_map_file(path: &Path) -> Result<FeatureMap> {
    let file = std::fs::File::open(path)?;
    read_feature_map(std::io::BufReader::new(file))
}
