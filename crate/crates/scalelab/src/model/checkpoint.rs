//! Weight checkpoint file, magic "DDW1": a config descriptor followed by
//! every tensor in canonical order as shape + 64-bit little-endian floats.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{ConvSpec, ModelConfig, ModelWeights};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DDW1";
pub const VERSION: u8 = 1;

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Serialize weights into any writer.
pub fn write_weights<W: Write>(out: &mut W, weights: &ModelWeights) -> Result<()> {
    let cfg = &weights.config;
    out.write_all(MAGIC)?;
    out.write_all(&[VERSION, cfg.n as u8])?;
    write_u32(out, cfg.k as u32)?;
    write_u32(out, cfg.side as u32)?;
    write_u32(out, cfg.latent as u32)?;
    out.write_all(&[cfg.conv.len() as u8])?;
    for c in &cfg.conv {
        write_u32(out, c.kernel as u32)?;
        write_u32(out, c.filters as u32)?;
    }
    let tensors = weights.tensors();
    write_u32(out, tensors.len() as u32)?;
    for t in tensors {
        out.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            write_u32(out, d as u32)?;
        }
        for &v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Deserialize weights from any reader.
pub fn read_weights<R: Read>(input: &mut R) -> Result<ModelWeights> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated before magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u8(input)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n = read_u8(input)? as usize;
    let k = read_u32(input)? as usize;
    let side = read_u32(input)? as usize;
    let latent = read_u32(input)? as usize;
    let conv_count = read_u8(input)? as usize;
    let mut conv = Vec::with_capacity(conv_count);
    for _ in 0..conv_count {
        let kernel = read_u32(input)? as usize;
        let filters = read_u32(input)? as usize;
        conv.push(ConvSpec { kernel, filters });
    }
    let cfg = ModelConfig {
        n,
        k,
        side,
        latent,
        conv,
    };
    cfg.validate()?;
    let mut weights = ModelWeights::zeros(&cfg)?;

    let tensor_count = read_u32(input)? as usize;
    let expected = weights.tensors().len();
    if tensor_count != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {tensor_count} tensors, config implies {expected}"
        )));
    }
    for slot in weights.tensors_mut() {
        let ndim = read_u8(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(input)? as usize);
        }
        if shape != slot.shape() {
            return Err(Error::Format(format!(
                "tensor shape {shape:?} does not match config shape {:?}",
                slot.shape()
            )));
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        input.read_exact(&mut bytes).map_err(|_| {
            Error::Format(format!(
                "checkpoint truncated: expected {} data bytes",
                len * 8
            ))
        })?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *slot = Tensor::from_vec(&shape, data)?;
    }
    Ok(weights)
}

pub fn save_weights(path: &std::path::Path, weights: &ModelWeights) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weights(&mut f, weights)
}

pub fn load_weights(path: &std::path::Path) -> Result<ModelWeights> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_weights(&mut f)
}
