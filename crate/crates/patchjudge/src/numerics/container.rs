//! Flat binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PJT1"                            magic
//! u32    tensor count
//! per tensor:
//!   u16  name length in bytes
//!   ...  name, UTF-8
//!   u8   rank
//!   u32  extent, repeated rank times
//!   f32  value, repeated (product of extents) times
//! ```
//!
//! Values are stored as `f32` regardless of the in-memory element type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"PJT1";
const MAX_ELEMENTS: u64 = 100_000_000;

pub fn write_tensors<W: Write, S: Scalar>(mut w: W, entries: &[(&str, &Tensor<S>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Container(format!("tensor name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        let rank = tensor.rank();
        if rank > u8::MAX as usize {
            return Err(Error::Container(format!("rank {rank} too large")));
        }
        w.write_all(&[rank as u8])?;
        for &extent in tensor.shape() {
            if extent > u32::MAX as usize {
                return Err(Error::Container(format!("extent {extent} too large")));
            }
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.as_f32().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?;
        let mut rank_byte = [0u8; 1];
        read_exact(&mut r, &mut rank_byte)?;
        let rank = rank_byte[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut elements: u64 = 1;
        for _ in 0..rank {
            let extent = read_u32(&mut r)? as u64;
            elements = elements.saturating_mul(extent);
            shape.push(extent as usize);
        }
        if elements > MAX_ELEMENTS {
            return Err(Error::Container(format!(
                "tensor {name} claims {elements} elements"
            )));
        }
        let mut data = Vec::with_capacity(elements as usize);
        let mut buf = [0u8; 4];
        for _ in 0..elements {
            read_exact(&mut r, &mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data).expect("extents match data")));
    }
    Ok(out)
}

/// Writes every parameter of `params`, in registration order.
pub fn save_params<S: Scalar>(path: &Path, params: &ParamSet<S>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let entries: Vec<(&str, &Tensor<S>)> = params
        .iter()
        .map(|(_, p)| (p.name.as_str(), &p.value))
        .collect();
    write_tensors(&mut w, &entries)?;
    w.flush()?;
    Ok(())
}

/// Loads a container and installs each tensor into the matching
/// parameter. Every stored name must exist with the same shape, and
/// every parameter must be covered.
pub fn load_params<S: Scalar>(path: &Path, params: &mut ParamSet<S>) -> Result<()> {
    let file = File::open(path)?;
    let tensors = read_tensors(BufReader::new(file))?;
    if tensors.len() != params.len() {
        return Err(Error::ModelLoad(format!(
            "container holds {} tensors, model expects {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, tensor) in tensors {
        params.set_value(&name, tensor.cast::<S>())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Container("unexpected end of container".into()))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
