//! Binary checkpoints: architecture, forward and feedback weights, the run
//! seed, and the epoch the snapshot was taken at.
//!
//! Layout (little-endian throughout): 4-byte magic `BGSN`, a version byte,
//! seed (u64), epoch (u32), layer count (u32), layer sizes (u32 each), then
//! each forward matrix followed by each feedback matrix, row-major f64.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::NetworkParams;

const MAGIC: &[u8; 4] = b"BGSN";
const VERSION: u8 = 1;

#[derive(Clone)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub seed: u64,
    pub epoch: u32,
}

fn write_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for &x in m.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Shape(format!("checkpoint matrix: {e}")))
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    buf.extend_from_slice(&(ckpt.params.dims.len() as u32).to_le_bytes());
    for &d in &ckpt.params.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for w in &ckpt.params.w {
        write_matrix(&mut buf, w);
    }
    for b in &ckpt.params.b {
        write_matrix(&mut buf, b);
    }

    // Write to a sibling temp file and rename so a crash can't leave a
    // half-written checkpoint at the final path.
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(&buf).map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 4];
    f.read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
    if &head != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {head:?}")));
    }
    let mut byte = [0u8; 1];
    f.read_exact(&mut byte)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    if byte[0] != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", byte[0])));
    }

    fn read_u64(r: &mut impl Read) -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("checkpoint truncated".into()))?;
        Ok(u64::from_le_bytes(b))
    }
    fn read_u32(r: &mut impl Read) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("checkpoint truncated".into()))?;
        Ok(u32::from_le_bytes(b))
    }

    let seed = read_u64(&mut f)?;
    let epoch = read_u32(&mut f)?;
    let n_dims = read_u32(&mut f)? as usize;
    if n_dims < 2 || n_dims > 64 {
        return Err(Error::Format(format!("implausible layer count {n_dims}")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u32(&mut f)? as usize);
    }
    let layers = n_dims - 1;
    let mut w = Vec::with_capacity(layers);
    for i in 0..layers {
        w.push(read_matrix(&mut f, dims[i + 1], dims[i])?);
    }
    let mut b = Vec::with_capacity(layers);
    for i in 0..layers {
        b.push(read_matrix(&mut f, dims[i + 1], *dims.last().unwrap())?);
    }
    let mut trailing = Vec::new();
    f.read_to_end(&mut trailing).map_err(|e| Error::io(path, e))?;
    if !trailing.is_empty() {
        return Err(Error::Format(format!(
            "{} unexpected trailing bytes in checkpoint",
            trailing.len()
        )));
    }
    let params = NetworkParams { dims, w, b };
    params.validate()?;
    Ok(Checkpoint { params, seed, epoch })
}
