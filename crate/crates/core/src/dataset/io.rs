//! On-disk dataset format.
//!
//! Layout (all integers and floats little-endian):
//! - magic `SFDS1` (5 bytes), version u16, sample count u32
//! - per sample: ordinal u32; r1, r2, r3, bf, t as f64; input stack
//!   (3*199*199 f64, channel-major row-major); target (50*50 f64).
//!
//! Round-trips are bit-exact.

use super::design::{radii_to_geo_index, DesignPoint};
use super::{InputStack, Sample, StrainField, INPUT_GRID, OUTPUT_GRID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 5] = b"SFDS1";
pub const DATASET_VERSION: u16 = 1;

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize, context: &'static str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(|e| truncated(context, e))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn truncated(context: &'static str, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format { context, detail: "truncated file".into() }
    } else {
        Error::Io(e)
    }
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        w.write_all(&s.design.ordinal.to_le_bytes())?;
        write_f64s(&mut w, &[s.design.r1, s.design.r2, s.design.r3, s.design.bf, s.design.t])?;
        write_f64s(&mut w, s.input.tensor().data())?;
        write_f64s(&mut w, s.target.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| truncated("dataset header", e))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format {
            context: "dataset header",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let mut version = [0u8; 2];
    r.read_exact(&mut version).map_err(|e| truncated("dataset header", e))?;
    let version = u16::from_le_bytes(version);
    if version != DATASET_VERSION {
        return Err(Error::Format {
            context: "dataset header",
            detail: format!("unsupported version {version}"),
        });
    }
    let mut count = [0u8; 4];
    r.read_exact(&mut count).map_err(|e| truncated("dataset header", e))?;
    let count = u32::from_le_bytes(count);
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut ordinal = [0u8; 4];
        r.read_exact(&mut ordinal).map_err(|e| truncated("dataset sample", e))?;
        let ordinal = u32::from_le_bytes(ordinal);
        let scalars = read_f64s(&mut r, 5, "dataset sample")?;
        let (r1, r2, r3, bf, t) = (scalars[0], scalars[1], scalars[2], scalars[3], scalars[4]);
        let geo_index = radii_to_geo_index(r1, r2, r3).map_err(|_| Error::Format {
            context: "dataset sample",
            detail: format!("radii ({r1}, {r2}, {r3}) do not encode a geometry"),
        })?;
        let input = read_f64s(&mut r, 3 * INPUT_GRID * INPUT_GRID, "dataset sample")?;
        let target = read_f64s(&mut r, OUTPUT_GRID * OUTPUT_GRID, "dataset sample")?;
        let design = DesignPoint { geo_index, r1, r2, r3, bf, t, ordinal };
        let input = InputStack::new(Tensor::from_vec(vec![3, INPUT_GRID, INPUT_GRID], input)?)?;
        let target = StrainField::new(target)?;
        samples.push(Sample::new(design, input, target));
    }
    Ok(samples)
}
