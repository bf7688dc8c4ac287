//! `FLA1` dense array files: the magic `FLA1`, a little-endian `u32` rank,
//! `rank` little-endian `u32` extents, then the `f64` payload in row-major
//! order, also little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flat_core::{ComplexGrid, RealArray};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FLA1";

pub fn write_to(out: &mut impl Write, array: &RealArray) -> io::Result<()> {
    out.write_all(MAGIC)?;
    let dims = array.dims();
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "extent exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for v in array.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parses one array. Trailing bytes are an error.
pub fn read_from(input: &mut impl Read) -> io::Result<RealArray> {
    let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid(format!("bad magic {magic:?}")));
    }
    let rank = read_u32(input)? as usize;
    if rank > 8 {
        return Err(invalid(format!("rank {rank} is not supported")));
    }
    let dims: Vec<usize> = (0..rank).map(|_| read_u32(input).map(|d| d as usize)).collect::<io::Result<_>>()?;
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid(format!("extents {dims:?} overflow")))?;
    let mut payload = Vec::new();
    input.take(len as u64 * 8 + 1).read_to_end(&mut payload)?;
    if payload.len() != len * 8 {
        return Err(invalid(format!("payload has {} bytes, extents {dims:?} need {}", payload.len(), len * 8)));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    RealArray::new(&dims, data).map_err(|e| invalid(e.to_string()))
}

pub fn write(path: &Path, array: &RealArray) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_to(&mut out, array)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<RealArray> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(&mut BufReader::new(file)).map_err(|e| match e.kind() {
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => Error::format(path, e.to_string()),
        _ => Error::io(path, e),
    })
}

/// Complex grids are stored as `[2, H, W]` (real, imaginary).
pub fn write_grid(path: &Path, grid: &ComplexGrid) -> Result<()> {
    write(path, &grid.to_channels())
}

pub fn read_grid(path: &Path) -> Result<ComplexGrid> {
    let array = read(path)?;
    ComplexGrid::from_channels(&array).map_err(|e| Error::format(path, e.to_string()))
}
