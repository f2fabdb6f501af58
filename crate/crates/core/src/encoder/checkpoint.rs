//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "TESELCKP"
//! version  u32
//! header   u32 length + JSON {"config": EncoderConfig, "vocab_size": n}
//! count    u32
//! repeated count times:
//!   name   u32 length + UTF-8
//!   ndim   u32, then ndim x u64 dims
//!   values f64 x product(dims)
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TESELCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab_size: usize,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl EncoderModel {
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(&mut w, CHECKPOINT_VERSION)?;
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
        })?;
        write_u32(&mut w, header.len() as u32)?;
        w.write_all(&header)?;
        write_u32(&mut w, self.params.len() as u32)?;
        for (name, t) in self.names.iter().zip(&self.params) {
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_u32(&mut w, t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let magic = read_bytes(&mut r, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = read_u32(&mut r)? as usize;
        let header: Header = serde_json::from_slice(&read_bytes(&mut r, len)?)?;
        let mut model = EncoderModel::new(header.config, header.vocab_size)?;
        let count = read_u32(&mut r)? as usize;
        if count != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} arrays, model expects {}",
                model.params.len()
            )));
        }
        for i in 0..count {
            let len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            if name != model.names[i] {
                return Err(Error::Format(format!(
                    "expected parameter {:?}, found {name:?}",
                    model.names[i]
                )));
            }
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if shape != model.params[i].shape() {
                return Err(Error::Format(format!("shape mismatch for {name}")));
            }
            let numel: usize = shape.iter().product();
            let raw = read_bytes(&mut r, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.params[i] = Tensor::new(shape, data)?;
        }
        if !model.all_finite() {
            return Err(Error::NonFinite("checkpoint"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_checkpoint(BufReader::new(fs::File::open(path)?))
    }
}
