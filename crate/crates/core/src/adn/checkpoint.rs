//! `ADNC` checkpoints: magic `ADNC`, `u8` version, `u32` entry count, then
//! per entry a `u16` name length, the UTF-8 name, `u32` rank, `u32` dims and
//! the little-endian `f32` data. Entries are sorted by name. An optional
//! second section with the same layout holds optimizer state under `opt/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{AdnConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::io::Reader;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ADNC";
pub const VERSION: u8 = 1;

const META_WIDTH: &str = "meta/width";
const META_RES_BLOCKS: &str = "meta/res_blocks";
pub const OPT_PREFIX: &str = "opt/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    /// Optimizer tensors, names without the `opt/` prefix.
    pub optimizer: BTreeMap<String, Tensor<f32>>,
}

fn put_section(out: &mut Vec<u8>, entries: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::arg(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn get_section(r: &mut Reader<'_>) -> Result<BTreeMap<String, Tensor<f32>>> {
    let count = r.u32()?;
    let mut entries = BTreeMap::new();
    let mut previous: Option<String> = None;
    for _ in 0..count {
        let at = r.offset();
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format { offset: at, message: "entry name is not UTF-8".into() })?
            .to_string();
        if previous.as_ref().is_some_and(|p| *p >= name) {
            return Err(Error::Format { offset: at, message: format!("entry {name:?} out of order") });
        }
        let t = r.tensor_body()?;
        previous = Some(name.clone());
        entries.insert(name, t);
    }
    Ok(entries)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut main: BTreeMap<String, Tensor<f32>> = ck.params.iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    main.insert(META_WIDTH.into(), Tensor::scalar(ck.params.config.width as f32));
    main.insert(META_RES_BLOCKS.into(), Tensor::scalar(ck.params.config.res_blocks as f32));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    put_section(&mut out, &main)?;
    if !ck.optimizer.is_empty() {
        let opt = ck.optimizer.iter().map(|(n, t)| (format!("{OPT_PREFIX}{n}"), t.clone())).collect();
        put_section(&mut out, &opt)?;
    }
    Ok(out)
}

fn meta(entries: &mut BTreeMap<String, Tensor<f32>>, name: &str) -> Result<usize> {
    let t = entries.remove(name).ok_or_else(|| Error::Format { offset: 5, message: format!("missing {name}") })?;
    let v = t.data()[0];
    if t.numel() != 1 || v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Format { offset: 5, message: format!("{name} is not a count") });
    }
    Ok(v as usize)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected ADNC".into() });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let mut main = get_section(&mut r)?;
    let config = AdnConfig { width: meta(&mut main, META_WIDTH)?, res_blocks: meta(&mut main, META_RES_BLOCKS)? };
    let params =
        ModelParams::from_tensors(config, main).map_err(|e| Error::Format { offset: 5, message: e.to_string() })?;
    let mut optimizer = BTreeMap::new();
    if !r.is_empty() {
        let at = r.offset();
        for (name, t) in get_section(&mut r)? {
            let Some(short) = name.strip_prefix(OPT_PREFIX) else {
                return Err(Error::Format {
                    offset: at,
                    message: format!("optimizer entry {name:?} lacks {OPT_PREFIX}"),
                });
            };
            optimizer.insert(short.to_string(), t);
        }
        if !r.is_empty() {
            return Err(r.fail("trailing bytes after optimizer section"));
        }
    }
    Ok(Checkpoint { params, optimizer })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
