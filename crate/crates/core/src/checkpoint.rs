//! Versioned binary checkpoint container: a JSON model-config header plus
//! named parameter groups as raw little-endian float64 payloads.
//! Round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::{FreezeClass, Params};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MMBTCKP1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
}

fn class_tag(c: FreezeClass) -> u8 {
    match c {
        FreezeClass::Text => 0,
        FreezeClass::Image => 1,
        FreezeClass::Fusion => 2,
    }
}

fn tag_class(t: u8) -> Result<FreezeClass> {
    match t {
        0 => Ok(FreezeClass::Text),
        1 => Ok(FreezeClass::Image),
        2 => Ok(FreezeClass::Fusion),
        other => Err(Error::Checkpoint(format!("unknown freeze class tag {other}"))),
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    let header = serde_json::to_vec(&Header { version: VERSION, config: model.config.clone() })?;
    f.write_all(&(header.len() as u32).to_le_bytes())?;
    f.write_all(&header)?;
    f.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (name, p) in model.params.iter() {
        f.write_all(&(name.len() as u32).to_le_bytes())?;
        f.write_all(name.as_bytes())?;
        f.write_all(&[class_tag(p.class)])?;
        f.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            f.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

fn read_exact(f: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    f.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(buf)
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(f, 4)?.try_into().unwrap()))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(f, 8)?.try_into().unwrap()))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    if read_exact(&mut f, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let hlen = read_u32(&mut f)? as usize;
    let mut header: Header = serde_json::from_slice(&read_exact(&mut f, hlen)?)?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    header.config.vocab.reindex();
    let count = read_u64(&mut f)? as usize;
    let mut params = Params::new();
    for _ in 0..count {
        let nlen = read_u32(&mut f)? as usize;
        let name = String::from_utf8(read_exact(&mut f, nlen)?)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let class = tag_class(read_exact(&mut f, 1)?[0])?;
        let ndim = read_u32(&mut f)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut f)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = read_exact(&mut f, numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(&name, Tensor::from_vec(shape, data)?, class);
    }
    Ok(Model { config: header.config, params })
}
