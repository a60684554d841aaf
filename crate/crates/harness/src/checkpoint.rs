//! Checkpoint format: bit-exact save/restore of model parameters, batch-norm
//! running moments, and Adam state.
//!
//! Layout (little-endian): magic `SFSM1`, version u16, config digest u64,
//! epoch u32, Adam hyperparameters (4 x f64) and step u64, named parameter
//! tensors, batch-norm states, then Adam first/second moments in parameter
//! order (shapes implied by the parameters).

use stampnet_core::nn::{ModelState, ParamSet};
use stampnet_core::optim::{AdamConfig, AdamState};
use stampnet_core::tape::BatchNormState;
use stampnet_core::{Error, Result, Tensor};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SFSM1";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_digest: u64,
    pub epoch: u32,
    pub state: ModelState,
    pub adam: AdamState,
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format { context: "checkpoint", detail: "truncated file".into() }
    } else {
        Error::Io(e)
    }
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.config_digest.to_le_bytes())?;
    w.write_all(&ckpt.epoch.to_le_bytes())?;
    let ac = ckpt.adam.config();
    write_f64s(&mut w, &[ac.learning_rate, ac.beta1, ac.beta2, ac.epsilon])?;
    w.write_all(&ckpt.adam.step_count().to_le_bytes())?;

    let params = &ckpt.state.params;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_f64s(&mut w, tensor.data())?;
    }

    w.write_all(&(ckpt.state.bn.len() as u32).to_le_bytes())?;
    for bn in &ckpt.state.bn {
        w.write_all(&(bn.channels() as u32).to_le_bytes())?;
        write_f64s(&mut w, &bn.running_mean)?;
        write_f64s(&mut w, &bn.running_var)?;
        w.write_all(&bn.batches_tracked.to_le_bytes())?;
    }

    let (m, v) = ckpt.adam.moments();
    for t in m.iter().chain(v.iter()) {
        write_f64s(&mut w, t.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            context: "checkpoint",
            detail: format!("bad magic {magic:?}"),
        });
    }
    let mut vbytes = [0u8; 2];
    r.read_exact(&mut vbytes).map_err(truncated)?;
    let version = u16::from_le_bytes(vbytes);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            context: "checkpoint",
            detail: format!("unsupported version {version}"),
        });
    }
    let config_digest = read_u64(&mut r)?;
    let epoch = read_u32(&mut r)?;
    let hp = read_f64s(&mut r, 4)?;
    let step = read_u64(&mut r)?;

    let n_params = read_u32(&mut r)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(truncated)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            context: "checkpoint",
            detail: "parameter name is not UTF-8".into(),
        })?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank).map_err(truncated)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let data = read_f64s(&mut r, shape.iter().product())?;
        params.push(name, Tensor::from_vec(shape, data)?);
    }

    let n_bn = read_u32(&mut r)? as usize;
    let mut bn = Vec::with_capacity(n_bn);
    for _ in 0..n_bn {
        let c = read_u32(&mut r)? as usize;
        let running_mean = read_f64s(&mut r, c)?;
        let running_var = read_f64s(&mut r, c)?;
        let batches_tracked = read_u64(&mut r)?;
        bn.push(BatchNormState { running_mean, running_var, batches_tracked });
    }

    let mut read_moments = || -> Result<Vec<Tensor>> {
        (0..n_params)
            .map(|i| {
                let shape = params.get(i).shape().to_vec();
                let data = read_f64s(&mut r, shape.iter().product())?;
                Tensor::from_vec(shape, data)
            })
            .collect()
    };
    let m = read_moments()?;
    let v = read_moments()?;
    let adam = AdamState::from_parts(
        AdamConfig { learning_rate: hp[0], beta1: hp[1], beta2: hp[2], epsilon: hp[3] },
        step,
        m,
        v,
    );
    Ok(Checkpoint { config_digest, epoch, state: ModelState { params, bn }, adam })
}

/// Load and validate against the expected parameter template and batch-norm
/// channel plan (name, order, and shape must all match).
pub fn load_for(path: &Path, template: &ParamSet, bn_channels: &[usize]) -> Result<Checkpoint> {
    let ckpt = load(path)?;
    if ckpt.state.params.len() != template.len() {
        return Err(Error::ShapeMismatch {
            context: "checkpoint parameters",
            left: vec![ckpt.state.params.len()],
            right: vec![template.len()],
        });
    }
    for i in 0..template.len() {
        if ckpt.state.params.name(i) != template.name(i)
            || ckpt.state.params.get(i).shape() != template.get(i).shape()
        {
            return Err(Error::ShapeMismatch {
                context: "checkpoint parameters",
                left: ckpt.state.params.get(i).shape().to_vec(),
                right: template.get(i).shape().to_vec(),
            });
        }
    }
    if ckpt.state.bn.len() != bn_channels.len()
        || ckpt.state.bn.iter().zip(bn_channels).any(|(s, &c)| s.channels() != c)
    {
        return Err(Error::ShapeMismatch {
            context: "checkpoint batch-norm states",
            left: vec![ckpt.state.bn.len()],
            right: vec![bn_channels.len()],
        });
    }
    Ok(ckpt)
}
