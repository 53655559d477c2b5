use super::real::Real;
use super::weights::{EntryKind, WeightVector};
use super::TensorError;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SQSF";
const VERSION: u32 = 1;

/// Entry kind is not stored; running batch-norm statistics are recognized by name.
fn kind_of(name: &str) -> EntryKind {
    if name.ends_with(".running_mean") || name.ends_with(".running_var") {
        EntryKind::Buffer
    } else {
        EntryKind::Param
    }
}

/// Serialize as little-endian 32-bit reals (lossless for single precision).
pub fn write_checkpoint<T: Real, W: Write>(w: &WeightVector<T>, mut out: W) -> Result<(), TensorError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(w.len() as u32).to_le_bytes())?;
    for e in w.entries() {
        out.write_all(&(e.name.len() as u32).to_le_bytes())?;
        out.write_all(e.name.as_bytes())?;
        out.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &d in &e.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(e.data.len() * 4);
        for v in &e.data {
            buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<WeightVector<T>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| TensorError::Checkpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut w = WeightVector::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| TensorError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw).map_err(|e| TensorError::Checkpoint(format!("{name}: truncated data: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))).collect();
        w.push(&name, &shape, kind_of(&name), data)?;
    }
    Ok(w)
}

pub fn save_checkpoint<T: Real>(w: &WeightVector<T>, path: &Path) -> Result<(), TensorError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(w, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<WeightVector<T>, TensorError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
