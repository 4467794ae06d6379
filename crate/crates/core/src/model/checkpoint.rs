//! `SSPF1` checkpoints.
//!
//! Layout: magic `SSPF1`, a little-endian `u32` header length, a UTF-8
//! header, then the FTS1 encoding of every parameter back to back. Header
//! lines are either `config\t<key>\t<value>` or
//! `param\t<path>\tf64\t<d0,d1,..>\t<trainable 0|1>\t<byte offset>`, with
//! offsets counted from the first payload byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fts::{self, FtsTensor};

use super::config::ModelConfig;
use super::network::Sspformer;
use super::params::ParamStore;

pub const MAGIC: &[u8; 5] = b"SSPF1";

pub fn encode(model: &Sspformer) -> Result<Vec<u8>> {
    let mut header = String::new();
    for (k, v) in model.config().to_pairs() {
        writeln!(header, "config\t{k}\t{v}").unwrap();
    }
    let mut payload = Vec::new();
    for (path, p) in model.params().iter() {
        let dims: Vec<String> = p.value.dims().iter().map(ToString::to_string).collect();
        writeln!(
            header,
            "param\t{path}\tf64\t{}\t{}\t{}",
            dims.join(","),
            u8::from(p.trainable),
            payload.len()
        )
        .unwrap();
        payload.extend(fts::encode_real(&p.value)?);
    }
    let len = u32::try_from(header.len())
        .map_err(|_| Error::Format("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(9 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend(payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Sspformer> {
    let bad = |msg: &str| Error::Format(format!("checkpoint: {msg}"));
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(bad("missing SSPF1 magic"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let header_end = 9usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header =
        std::str::from_utf8(&bytes[9..header_end]).map_err(|_| bad("header is not UTF-8"))?;
    let payload = &bytes[header_end..];

    let mut config = ModelConfig::default();
    let mut params = ParamStore::new();
    for line in header.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["config", key, value] => {
                if !config.set(key, value)? {
                    return Err(bad(&format!("unknown config key `{key}`")));
                }
            }
            ["param", path, "f64", dims, trainable, offset] => {
                let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
                let dims: Vec<usize> = dims
                    .split(',')
                    .map(|d| d.parse().map_err(|_| bad("bad extent")))
                    .collect::<Result<_>>()?;
                let blob = payload
                    .get(offset..)
                    .ok_or_else(|| bad("offset past end"))?;
                let (tensor, _) = fts::decode_prefix(blob)?;
                let FtsTensor::Real(tensor) = tensor else {
                    return Err(bad("complex parameter"));
                };
                if tensor.dims() != dims.as_slice() {
                    return Err(bad(&format!("manifest shape disagrees for `{path}`")));
                }
                params.insert(*path, tensor, *trainable == "1")?;
            }
            _ => return Err(bad(&format!("unrecognised header line `{line}`"))),
        }
    }
    Sspformer::from_parts(config, params)
}

pub fn save(model: &Sspformer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Sspformer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}
